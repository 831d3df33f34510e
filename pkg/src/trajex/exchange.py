"""Distributed trajectory exchange: wire codec, query handling, uncertainty fusion.

A querying agent broadcasts a single pose plus a dictionary id; every
communicating agent in range transforms the shared candidates into its own
frame, samples its cost and entropy maps along them, and replies with the
sampled values.  The querying agent fuses replies weighted by inverse
uncertainty and ranks candidates by fused score.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DecodeError, ProtocolError
from .geometry import Pose2, relative_pose
from .grid import Costmap, EntropyMap
from .trajectory import TrajectoryDictionary, score_trajectories

WIRE_VERSION = 1
QUERY_MAGIC = 0x51584A54   # "TJXQ"
RESPONSE_MAGIC = 0x52584A54  # "TJXR"

STATUS_OK = 0
STATUS_UNKNOWN_DICT = 1
STATUS_BAD_SHAPE = 2

_QUERY_FMT = "<IBI3fIHH"
_RESP_HEAD_FMT = "<IBIB"
_RESP_DIMS_FMT = "<HH"
_RECORD_DTYPE = np.dtype([("cost", "<f4"), ("uncertainty", "<f4"), ("valid", "u1")])

# Trajectories with no valid sample anywhere rank behind every scored one.
SENTINEL_SCORE = 1e30

FUSION_MODES = ("verbatim_sum", "weighted_mean")


@dataclass(frozen=True)
class CostQuery:
    """Pose-only trajectory evaluation request."""

    ego_id: int
    ego_pose_global: Pose2
    dict_id: int
    n: int
    t: int


@dataclass(frozen=True)
class CostResponse:
    """Sampled (cost, uncertainty, valid) records, (n, t) arrays in i-major order."""

    responder_id: int
    status: int = STATUS_OK
    cost: np.ndarray | None = None
    uncertainty: np.ndarray | None = None
    valid: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass(frozen=True)
class FusedRanking:
    """Fused scores and the resulting candidate priority order."""

    scores: np.ndarray            # (N,)
    order: np.ndarray             # (N,) ascending-score permutation
    contributing_agents: frozenset


@dataclass
class PipelineConfig:
    """Knobs of the full per-agent pipeline and of fusion."""

    theta: float = 0.5             # binarization threshold
    d_sat: float = 3.0             # cost saturation distance, meters
    entropy_floor: float = 1e-3    # nats, keeps one-hot forecasts finite
    fusion_mode: str = "weighted_mean"
    comm_range: float = 60.0       # meters
    k_values: tuple = (1, 10)
    include_self: bool = True      # ego responds to its own query

    def __post_init__(self):
        if self.entropy_floor <= 0.0:
            raise ConfigError("entropy floor must be positive")
        if self.comm_range <= 0.0:
            raise ConfigError("communication range must be positive")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")


# ---------------------------------------------------------------------------
# Wire codec

def encode_query(q: CostQuery) -> bytes:
    p = q.ego_pose_global
    return struct.pack(_QUERY_FMT, QUERY_MAGIC, WIRE_VERSION, q.ego_id,
                       p.x, p.y, p.theta, q.dict_id, q.n, q.t)


def decode_query(buf: bytes) -> CostQuery:
    size = struct.calcsize(_QUERY_FMT)
    if len(buf) < 4:
        raise DecodeError("buffer too short for magic", len(buf))
    magic = struct.unpack_from("<I", buf, 0)[0]
    if magic != QUERY_MAGIC:
        raise DecodeError("bad query magic", 0)
    if len(buf) < size:
        raise DecodeError("query truncated", len(buf))
    if len(buf) > size:
        raise DecodeError("trailing bytes after query", size)
    _, version, ego_id, x, y, theta, dict_id, n, t = struct.unpack(_QUERY_FMT, buf)
    if version != WIRE_VERSION:
        raise DecodeError(f"unsupported wire version {version}", 4)
    return CostQuery(ego_id, Pose2(x, y, theta), dict_id, n, t)


def encode_response(r: CostResponse) -> bytes:
    head = struct.pack(_RESP_HEAD_FMT, RESPONSE_MAGIC, WIRE_VERSION,
                       r.responder_id, r.status)
    if r.status != STATUS_OK:
        return head
    n, t = r.cost.shape
    records = np.empty(n * t, dtype=_RECORD_DTYPE)
    records["cost"] = r.cost.reshape(-1)
    records["uncertainty"] = r.uncertainty.reshape(-1)
    records["valid"] = r.valid.reshape(-1)
    return head + struct.pack(_RESP_DIMS_FMT, n, t) + records.tobytes()


def decode_response(buf: bytes) -> CostResponse:
    head_size = struct.calcsize(_RESP_HEAD_FMT)
    if len(buf) < 4:
        raise DecodeError("buffer too short for magic", len(buf))
    magic = struct.unpack_from("<I", buf, 0)[0]
    if magic != RESPONSE_MAGIC:
        raise DecodeError("bad response magic", 0)
    if len(buf) < head_size:
        raise DecodeError("response truncated in header", len(buf))
    _, version, responder_id, status = struct.unpack_from(_RESP_HEAD_FMT, buf, 0)
    if version != WIRE_VERSION:
        raise DecodeError(f"unsupported wire version {version}", 4)
    if status != STATUS_OK:
        if len(buf) != head_size:
            raise DecodeError("error response must be header-only", head_size)
        return CostResponse(responder_id, status)
    dims_size = struct.calcsize(_RESP_DIMS_FMT)
    if len(buf) < head_size + dims_size:
        raise DecodeError("response truncated in dimensions", len(buf))
    n, t = struct.unpack_from(_RESP_DIMS_FMT, buf, head_size)
    body = head_size + dims_size
    expected = body + n * t * _RECORD_DTYPE.itemsize
    if len(buf) != expected:
        raise DecodeError(f"response length {len(buf)} != expected {expected}",
                          min(len(buf), expected))
    records = np.frombuffer(buf, dtype=_RECORD_DTYPE, offset=body)
    if n * t > 0 and records["valid"].max() > 1:
        raise DecodeError("valid flag must be 0 or 1", body)
    cost = records["cost"].reshape(n, t).astype(np.float64)
    unc = records["uncertainty"].reshape(n, t).astype(np.float64)
    valid = records["valid"].reshape(n, t).astype(bool)
    return CostResponse(responder_id, STATUS_OK, cost, unc, valid)


# ---------------------------------------------------------------------------
# Endpoints and query handling

@dataclass
class AgentEndpoint:
    """One agent's communicating state at a planning round.

    `observed` is the agent's field-of-view mask; samples outside it are
    reported invalid rather than confidently empty.
    """

    agent_id: int
    pose: Pose2                 # global
    costmap: Costmap
    entropy_map: EntropyMap
    dictionaries: dict          # dict_id -> TrajectoryDictionary
    communicating: bool = True
    observed: np.ndarray | None = None

    def dictionary(self, dict_id: int) -> TrajectoryDictionary | None:
        return self.dictionaries.get(dict_id)


def handle_query(query: CostQuery, endpoint: AgentEndpoint) -> CostResponse:
    """Score the shared dictionary against this endpoint's maps, in its own frame."""
    dictionary = endpoint.dictionary(query.dict_id)
    if dictionary is None:
        return CostResponse(endpoint.agent_id, STATUS_UNKNOWN_DICT)
    if dictionary.count != query.n or dictionary.horizon != query.t:
        return CostResponse(endpoint.agent_id, STATUS_BAD_SHAPE)
    rel = relative_pose(endpoint.pose, query.ego_pose_global)
    sampled = score_trajectories(dictionary, rel, endpoint.costmap,
                                 endpoint.entropy_map, observed=endpoint.observed)
    # Quantize to wire precision at the source so local (loopback) responses
    # carry exactly the values a peer would have received over the codec.
    cost = np.stack([s.cost for s in sampled]).astype(np.float32)
    unc = np.stack([s.uncertainty for s in sampled]).astype(np.float32)
    valid = np.stack([s.valid for s in sampled])
    return CostResponse(endpoint.agent_id, STATUS_OK,
                        cost.astype(np.float64), unc.astype(np.float64), valid)


# ---------------------------------------------------------------------------
# Fusion

def fuse(responses: list, config: PipelineConfig) -> FusedRanking:
    """Entropy-weighted aggregation of sampled costs, then a stable ascending sort.

    verbatim_sum: F_i = sum over agents and steps of valid C / max(U, eps).
    weighted_mean (default): the same sum normalized by the summed weights,
    so partially observed candidates are not penalized for coverage.
    Candidates with no valid sample anywhere get a maximal sentinel score.
    """
    usable = [r for r in responses if r.ok]
    if not usable:
        raise ProtocolError("no usable responses to fuse")
    shape = usable[0].cost.shape
    for r in usable:
        if r.cost.shape != shape:
            raise ProtocolError("responses disagree on record dimensions")

    num = np.zeros(shape[0])
    den = np.zeros(shape[0])
    any_valid = np.zeros(shape[0], dtype=bool)
    for r in usable:
        u = np.maximum(r.uncertainty, config.entropy_floor)
        v = r.valid
        num += np.where(v, r.cost / u, 0.0).sum(axis=1)
        den += np.where(v, 1.0 / u, 0.0).sum(axis=1)
        any_valid |= v.any(axis=1)

    if config.fusion_mode == "verbatim_sum":
        scores = num
    else:
        with np.errstate(invalid="ignore"):
            scores = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    scores = np.where(any_valid, scores, SENTINEL_SCORE)
    order = np.argsort(scores, kind="stable")
    return FusedRanking(scores, order, frozenset(r.responder_id for r in usable))


# ---------------------------------------------------------------------------
# Simulated network and bandwidth accounting

class SimulatedNetwork:
    """Synchronous broadcast medium; lossless and instantaneous by default.

    `drop_prob` drops individual transmissions (deterministically, given the
    seed and traffic order); `latency` stamps a delivery delay, and messages
    arriving after `deadline` are treated as lost.
    """

    def __init__(self, drop_prob: float = 0.0, latency: float = 0.0,
                 deadline: float = float("inf"), seed: int = 0):
        if not 0.0 <= drop_prob < 1.0:
            raise ConfigError("drop probability must lie in [0, 1)")
        self.drop_prob = drop_prob
        self.latency = latency
        self.deadline = deadline
        self._rng = np.random.default_rng(seed)

    def transmit(self, payload: bytes) -> bytes | None:
        if self.drop_prob > 0.0 and self._rng.random() < self.drop_prob:
            return None
        if self.latency > self.deadline:
            return None
        return payload


class BandwidthLedger:
    """Exact per-round, per-link byte accounting."""

    def __init__(self):
        self.entries = []

    def record(self, round_id, src: int, dst: int, kind: str, n_bytes: int):
        self.entries.append({"round": round_id, "src": src, "dst": dst,
                             "kind": kind, "bytes": n_bytes})

    def total_bytes(self, round_id=None) -> int:
        return sum(e["bytes"] for e in self.entries
                   if round_id is None or e["round"] == round_id)

    def inbound_bytes(self, dst: int, round_id=None, kind: str = "response") -> int:
        return sum(e["bytes"] for e in self.entries
                   if e["dst"] == dst and e["kind"] == kind
                   and (round_id is None or e["round"] == round_id))

    def to_json(self) -> str:
        return json.dumps({"entries": self.entries}, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def broadcast_round(endpoints: list, network: SimulatedNetwork, round_id,
                    config: PipelineConfig, dict_id: int,
                    ledger: BandwidthLedger | None = None) -> dict:
    """One synchronous exchange: every communicating ego queries peers in range.

    Returns {ego_id: FusedRanking}.  The ego always hears itself (unless
    include_self is off), so a lone agent degenerates to single-agent ranking.
    """
    ledger = ledger if ledger is not None else BandwidthLedger()
    comm = sorted((e for e in endpoints if e.communicating), key=lambda e: e.agent_id)
    rankings = {}
    for ego in comm:
        dictionary = ego.dictionary(dict_id)
        if dictionary is None:
            raise ProtocolError(f"ego {ego.agent_id} has no dictionary {dict_id}")
        query = CostQuery(ego.agent_id, ego.pose, dict_id,
                          dictionary.count, dictionary.horizon)
        query_bytes = encode_query(query)
        responses = []
        for responder in comm:
            if responder.agent_id == ego.agent_id:
                # Self-evaluation is local: no radio traffic, no ledger entry.
                if config.include_self:
                    responses.append(handle_query(query, responder))
                continue
            dist = float(np.hypot(responder.pose.x - ego.pose.x,
                                  responder.pose.y - ego.pose.y))
            if dist > config.comm_range:
                continue
            delivered = network.transmit(query_bytes)
            ledger.record(round_id, ego.agent_id, responder.agent_id,
                          "query", len(query_bytes))
            if delivered is None:
                continue
            response = handle_query(decode_query(delivered), responder)
            resp_bytes = encode_response(response)
            returned = network.transmit(resp_bytes)
            ledger.record(round_id, responder.agent_id, ego.agent_id,
                          "response", len(resp_bytes))
            if returned is None:
                continue
            responses.append(decode_response(returned))
        rankings[ego.agent_id] = fuse(responses, config)
    return rankings

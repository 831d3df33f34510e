"""Suite evaluation harness.

Builds randomized scenario suites, runs the full per-agent pipeline (sense ->
forecast -> maps -> exchange -> fuse), rolls every candidate out against the
script, and aggregates top-k collision rates, rank/cost curves, forecast
segmentation metrics and bandwidth.  Emits JSON-lines records plus a summary.

Heavy per-agent artifacts (maps, rollouts) depend only on the scenario seed,
not on who communicates, so they are shared across the n_com sweep of a seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ConfigError, GenerationError, ShapeError
from .exchange import (AgentEndpoint, BandwidthLedger, CostQuery, PipelineConfig,
                       SimulatedNetwork, broadcast_round, fuse, handle_query)
from .forecast import ForecastInput, make_forecaster, render_true_labels, warp_labels
from .grid import (ALLO, CLASSES, GridSpec, OccupancyForecast, binarize, entropy,
                   signed_distance)
from .sim import (Scenario, agent_pose_at, ego_centered_spec, render_lidar,
                  rollout_candidates, sample_scenario_set)
from .trajectory import KinematicLimits, generate_dictionary


@dataclass
class SuiteConfig:
    """Everything a suite run depends on; mirrors the CLI flags."""

    template: str = "crisscross"
    n_agents: int = 20
    n_com: tuple = (1, 5, 10, 15)
    n_scenarios: int = 100
    seed0: int = 0
    k_values: tuple = (1, 10)
    fusion_mode: str = "weighted_mean"
    forecaster: str = "cv_baseline"
    decision_frame: int = 8
    history: int = 1                # past frames beyond the current one
    forecast_horizon: int = 5
    # sensing / grids
    grid_size: int = 256
    grid_resolution: float = 0.4
    n_rays: int = 360
    sensor_range: float = 30.0
    # shared dictionary
    n_speeds: int = 10
    n_curvatures: int = 8
    traj_horizon: int = 15
    kappa_max: float = 0.4
    v_max: float = 8.0
    a_lin_max: float = 3.0
    a_ang_max: float = 2.0
    # pipeline
    theta: float = 0.5
    d_sat: float = 3.0
    entropy_floor: float = 1e-3
    comm_range: float = 60.0
    include_self: bool = True
    # cv baseline
    sigma0: float = 0.4
    sigma_growth: float = 0.15
    gate_radius: float = 2.0

    def __post_init__(self):
        if self.n_scenarios < 1:
            raise ConfigError("need at least one scenario")
        if self.forecaster not in ("cv_baseline", "oracle"):
            raise ConfigError(f"unknown forecaster {self.forecaster!r}")
        self.n_com = tuple(self.n_com)
        self.k_values = tuple(self.k_values)
        n_traj = self.n_speeds * self.n_curvatures
        for k in self.k_values:
            if not 1 <= k <= n_traj:
                raise ConfigError(f"k={k} exceeds the dictionary size {n_traj}")
        for n_com in self.n_com:
            if not 1 <= n_com <= self.n_agents:
                raise ConfigError(f"n_com={n_com} outside [1, {self.n_agents}]")
        if self.decision_frame < self.history:
            raise ConfigError("decision frame precedes the available history")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SuiteConfig":
        return cls(**data)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(theta=self.theta, d_sat=self.d_sat,
                              entropy_floor=self.entropy_floor,
                              fusion_mode=self.fusion_mode, comm_range=self.comm_range,
                              k_values=self.k_values, include_self=self.include_self)

    def grid(self) -> GridSpec:
        return ego_centered_spec(self.grid_size, self.grid_size, self.grid_resolution)

    def dictionary(self):
        return generate_dictionary(self.n_speeds, self.n_curvatures, self.traj_horizon,
                                   KinematicLimits(self.v_max, self.a_lin_max,
                                                   self.a_ang_max),
                                   kappa_max=self.kappa_max)


# ---------------------------------------------------------------------------
# Metrics

def topk_collision_rate(order: np.ndarray, collided: np.ndarray, k: int) -> float:
    """Fraction of the k best-ranked candidates that collide in rollout."""
    if not 1 <= k <= len(order):
        raise ConfigError(f"k={k} outside [1, {len(order)}]")
    return float(np.asarray(collided)[np.asarray(order)[:k]].mean())


def segmentation_metrics(pred, gt_labels: np.ndarray, mask: np.ndarray | None = None):
    """Per-step pixel accuracy and mean IoU of argmax classes against labels.

    Classes absent from both prediction and ground truth at a step are left out
    of that step's IoU mean (0/0 is undefined, not zero).
    """
    if isinstance(pred, OccupancyForecast):
        pred_labels = pred.probs.argmax(axis=1).astype(np.uint8)
    else:
        pred_labels = np.asarray(pred)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ShapeError(f"prediction {pred_labels.shape} vs truth {gt_labels.shape}")
    accuracy, miou = [], []
    for t in range(pred_labels.shape[0]):
        p = pred_labels[t] if mask is None else pred_labels[t][mask]
        g = gt_labels[t] if mask is None else gt_labels[t][mask]
        accuracy.append(float((p == g).mean()) if p.size else float("nan"))
        ious = []
        for c in range(len(CLASSES)):
            inter = int(((p == c) & (g == c)).sum())
            union = int(((p == c) | (g == c)).sum())
            if union:
                ious.append(inter / union)
        miou.append(float(np.mean(ious)) if ious else float("nan"))
    return accuracy, miou


def class_iou(pred_labels: np.ndarray, gt_labels: np.ndarray, cls: int,
              mask: np.ndarray | None = None) -> float:
    """IoU of one class pooled over all steps (nan when the union is empty)."""
    p = pred_labels if mask is None else pred_labels[:, mask]
    g = gt_labels if mask is None else gt_labels[:, mask]
    inter = int(((p == cls) & (g == cls)).sum())
    union = int(((p == cls) | (g == cls)).sum())
    return inter / union if union else float("nan")


def rank_cost_curve(records: list) -> dict:
    """Aggregate fused cost and collision frequency by rank position."""
    costs = np.array([r["rank_costs"] for r in records])
    collided = np.array([r["rank_collided"] for r in records], dtype=float)
    return {
        "mean_cost": costs.mean(axis=0).tolist(),
        "collision_frequency": collided.mean(axis=0).tolist(),
    }


def rank_collision_spearman(records: list) -> float:
    """Spearman correlation between rank position and empirical collision rate."""
    curve = rank_cost_curve(records)
    freq = np.array(curve["collision_frequency"])
    if np.ptp(freq) == 0.0:
        return float("nan")  # constant frequency: correlation undefined
    rho = stats.spearmanr(np.arange(len(freq)), freq).statistic
    return float(rho)


# ---------------------------------------------------------------------------
# Per-agent pipeline

def build_forecast_input(scenario: Scenario, agent_id: int, t0: int,
                         cfg: SuiteConfig, spec: GridSpec) -> ForecastInput:
    """Render the agent's lidar history and align it into its frame at t0."""
    frames = []
    for f in range(t0 - cfg.history, t0 + 1):
        frames.append(render_lidar(scenario, agent_id, f, spec=spec,
                                   n_rays=cfg.n_rays, r_max=cfg.sensor_range))
    anchor = frames[-1].pose
    history = []
    observed = np.zeros(spec.shape, dtype=bool)
    for fr in frames:
        if fr.pose == anchor:
            labels = fr.seg
            seen = fr.visible
        else:
            labels = warp_labels(fr.seg, fr.pose, anchor, spec)
            seen = warp_labels(fr.visible.astype(np.uint8), fr.pose, anchor, spec,
                               fill=0).astype(bool)
        history.append((labels, fr.pose))
        observed |= seen
    return ForecastInput(history, spec, cfg.forecast_horizon,
                         frame_period=scenario.frame_period, t0=t0, observed=observed)


def build_endpoint(scenario: Scenario, agent_id: int, t0: int, cfg: SuiteConfig,
                   dictionary, spec: GridSpec):
    """Sense, forecast, and derive this agent's cost and entropy maps."""
    fi = build_forecast_input(scenario, agent_id, t0, cfg, spec)
    forecaster = make_forecaster(cfg.forecaster, scenario=scenario, agent_id=agent_id,
                                 **({"sigma0": cfg.sigma0, "sigma_growth": cfg.sigma_growth,
                                     "gate_radius": cfg.gate_radius}
                                    if cfg.forecaster == "cv_baseline" else {}))
    fc = forecaster.forecast(fi)
    costmap = signed_distance(binarize(fc, cfg.theta), cfg.d_sat)
    entropy_map = entropy(fc)
    pose = agent_pose_at(scenario, scenario.agent(agent_id), t0)
    endpoint = AgentEndpoint(agent_id, pose, costmap, entropy_map,
                             {dictionary.id: dictionary},
                             communicating=scenario.agent(agent_id).communicating,
                             observed=fi.observed)
    return endpoint, fc, fi.observed


# ---------------------------------------------------------------------------
# Suite runner

def _ego_record(scenario: Scenario, cfg: SuiteConfig, n_com: int, ego_id: int,
                ranking, collided: np.ndarray, seg: dict, ledger: BandwidthLedger,
                round_id) -> dict:
    record = {
        "template": scenario.template,
        "seed": scenario.seed,
        "n_com": n_com,
        "ego": ego_id,
        "topk": {str(k): topk_collision_rate(ranking.order, collided, k)
                 for k in cfg.k_values},
        "random_rate": float(collided.mean()),
        "rank_costs": [float(s) for s in ranking.scores[ranking.order]],
        "rank_collided": [bool(c) for c in collided[ranking.order]],
        "n_responders": len(ranking.contributing_agents),
        "bytes_in": ledger.inbound_bytes(ego_id, round_id=round_id),
        "bytes_out": sum(e["bytes"] for e in ledger.entries
                         if e["round"] == round_id and e["src"] == ego_id
                         and e["kind"] == "query"),
    }
    record.update(seg)
    return record


def run_suite(cfg: SuiteConfig, jsonl_path=None, ledger_path=None,
              progress=None) -> tuple:
    """Run the whole suite; returns (records, summary) and optionally streams JSONL."""
    spec = cfg.grid()
    dictionary = cfg.dictionary()
    pipeline = cfg.pipeline()
    network = SimulatedNetwork()
    ledger = BandwidthLedger()
    records = []
    failures = []
    out = open(jsonl_path, "w") if jsonl_path else None
    try:
        for i in range(cfg.n_scenarios):
            seed = cfg.seed0 + i
            try:
                per_seed = _run_seed(seed, cfg, spec, dictionary, pipeline,
                                     network, ledger)
            except GenerationError as err:
                failures.append({"seed": seed, "error": str(err)})
                continue
            for record in per_seed:
                records.append(record)
                if out:
                    out.write(json.dumps(record, sort_keys=True) + "\n")
            if progress:
                progress(i + 1, cfg.n_scenarios)
    finally:
        if out:
            out.close()
    if ledger_path:
        ledger.save(ledger_path)
    return records, summarize(records, cfg, failures)


def _run_seed(seed: int, cfg: SuiteConfig, spec: GridSpec, dictionary,
              pipeline: PipelineConfig, network: SimulatedNetwork,
              ledger: BandwidthLedger) -> list:
    t0 = cfg.decision_frame
    endpoints: dict = {}
    rollouts: dict = {}
    seg_cache: dict = {}
    out = []
    scenarios = sample_scenario_set(cfg.template, cfg.n_agents, cfg.n_com, seed)
    for n_com in cfg.n_com:
        scenario = scenarios[n_com]
        comm = scenario.communicating_ids
        for agent_id in comm:
            if agent_id not in endpoints:
                endpoints[agent_id] = build_endpoint(scenario, agent_id, t0, cfg,
                                                     dictionary, spec)
        round_id = f"{seed}:{n_com}"
        eps = []
        for agent_id in comm:
            ep, _, _ = endpoints[agent_id]
            eps.append(replace_communicating(ep, True))
        rankings = broadcast_round(eps, network, round_id, pipeline, dictionary.id,
                                   ledger)
        for ego_id, ranking in rankings.items():
            if ego_id not in rollouts:
                rollouts[ego_id] = rollout_candidates(scenario, ego_id,
                                                      dictionary.waypoints, t0)
            if ego_id not in seg_cache:
                seg_cache[ego_id] = _segmentation_record(scenario, ego_id, t0, cfg,
                                                         spec, endpoints[ego_id])
            out.append(_ego_record(scenario, cfg, n_com, ego_id, ranking,
                                   rollouts[ego_id], seg_cache[ego_id], ledger,
                                   round_id))
    return out


def replace_communicating(endpoint: AgentEndpoint, value: bool) -> AgentEndpoint:
    return AgentEndpoint(endpoint.agent_id, endpoint.pose, endpoint.costmap,
                         endpoint.entropy_map, endpoint.dictionaries, value,
                         endpoint.observed)


def _segmentation_record(scenario: Scenario, ego_id: int, t0: int, cfg: SuiteConfig,
                         spec: GridSpec, built) -> dict:
    endpoint, fc, observed = built
    anchor = endpoint.pose
    gt = np.stack([render_true_labels(scenario, ego_id, t0 + t, spec, anchor)
                   for t in range(1, cfg.forecast_horizon + 1)])
    accuracy, miou = segmentation_metrics(fc, gt, mask=observed)
    pred_labels = fc.probs.argmax(axis=1).astype(np.uint8)
    return {
        "accuracy": accuracy,
        "miou": miou,
        "allo_iou": class_iou(pred_labels, gt, ALLO, mask=observed),
    }


def single_agent_record(scenario: Scenario, ego_id: int, cfg: SuiteConfig) -> dict:
    """Direct single-agent pipeline: no network round, self-scoring only.

    Produces a record in the same shape as run_suite's n_com=1 output so the
    two paths can be compared field by field.
    """
    spec = cfg.grid()
    dictionary = cfg.dictionary()
    t0 = cfg.decision_frame
    built = build_endpoint(scenario, ego_id, t0, cfg, dictionary, spec)
    endpoint, fc, observed = built
    query = CostQuery(ego_id, endpoint.pose, dictionary.id,
                      dictionary.count, dictionary.horizon)
    ranking = fuse([handle_query(query, endpoint)], cfg.pipeline())
    collided = rollout_candidates(scenario, ego_id, dictionary.waypoints, t0)
    ledger = BandwidthLedger()
    seg = _segmentation_record(scenario, ego_id, t0, cfg, spec, built)
    return _ego_record(scenario, cfg, 1, ego_id, ranking, collided, seg, ledger,
                       round_id="direct")


def summarize(records: list, cfg: SuiteConfig, failures: list | None = None) -> dict:
    """Aggregate records per n_com; record order cannot affect the output."""
    records = sorted(records, key=lambda r: (r["n_com"], r["seed"], r["ego"]))
    summary = {"config": cfg.to_dict(), "n_records": len(records),
               "generation_failures": failures or [], "per_n_com": {}}
    for n_com in cfg.n_com:
        group = [r for r in records if r["n_com"] == n_com]
        if not group:
            continue
        entry = {
            "n_records": len(group),
            "topk": {str(k): float(np.mean([r["topk"][str(k)] for r in group]))
                     for k in cfg.k_values},
            "random_rate": float(np.mean([r["random_rate"] for r in group])),
            "rank_curve": rank_cost_curve(group),
            "rank_collision_spearman": rank_collision_spearman(group),
            "accuracy": np.nanmean([r["accuracy"] for r in group], axis=0).tolist(),
            "miou": np.nanmean([r["miou"] for r in group], axis=0).tolist(),
            "mean_bytes_in": float(np.mean([r["bytes_in"] for r in group])),
        }
        summary["per_n_com"][str(n_com)] = entry
    if records:
        summary["pooled_rank_collision_spearman"] = rank_collision_spearman(records)
        summary["pooled_top1_rate"] = float(np.mean(
            [r["topk"][str(cfg.k_values[0])] for r in records]))
        summary["pooled_random_rate"] = float(np.mean(
            [r["random_rate"] for r in records]))
    return summary


def save_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True))

"""Distributed, uncertainty-aware trajectory exchange for connected agents."""

from .errors import (ConfigError, DecodeError, GenerationError, HorizonError,
                     ProtocolError, ShapeError, TrajexError)
from .geometry import Pose2, relative_pose, wrap_angle
from .grid import (BinaryOccupancy, Costmap, EntropyMap, GridSpec, OccupancyForecast,
                   binarize, ego_centered_spec, entropy, grid_to_world, sample,
                   signed_distance, world_to_grid)
from .trajectory import (KinematicLimits, SampledTrajectory, TrajectoryDictionary,
                         generate_dictionary, score_trajectories, transform_trajectory)
from .exchange import (AgentEndpoint, BandwidthLedger, CostQuery, CostResponse,
                       FusedRanking, PipelineConfig, SimulatedNetwork, broadcast_round,
                       decode_query, decode_response, encode_query, encode_response,
                       fuse, handle_query)
from .forecast import (ConstantVelocityForecaster, ForecastInput, Forecaster,
                       GroundTruthForecaster, make_forecaster)
from .sim import (AgentSpec, LidarFrame, Obstacle, Scenario, agent_pose_at,
                  load_scenario, render_lidar, rollout_and_check, sample_scenario,
                  save_scenario)

__version__ = "0.1.0"

"""Jamming-resilient split federated learning over a simulated MIMO-OFDM uplink.

Subpackages: channel realization, the transmit/receive chain, the
sensing-assisted anti-jamming optimizer, jamming strategy constructors,
loss-divergence/outage bounds, the toy split-training harness, and the CLI.
"""

from .config import ScenarioConfig, parse_config
from .channel import ChannelSet, PathParams, realize_channels, sample_doas, steering_vector
from .phy import Allocation, JammingStrategy, LinkReport
from .optimizer import OptimizerReport, SurrogateCov, optimize, surrogate_covariance, waterfill
from .adversary import WorstCaseReport, barrage, no_jamming, oracle_worst_case, worst_case
from .bounds import (BoundReport, OutageReport, SmoothnessProfile, clip_gradient,
                     estimate_smoothness, expected_divergence_bound,
                     loss_divergence_bound, outage_rates)
from .harness import RoundMetrics, ToyModel, fedavg, run_scenario

__all__ = [
    "ScenarioConfig", "parse_config",
    "ChannelSet", "PathParams", "realize_channels", "sample_doas", "steering_vector",
    "Allocation", "JammingStrategy", "LinkReport",
    "OptimizerReport", "SurrogateCov", "optimize", "surrogate_covariance", "waterfill",
    "WorstCaseReport", "barrage", "no_jamming", "oracle_worst_case", "worst_case",
    "BoundReport", "OutageReport", "SmoothnessProfile", "clip_gradient",
    "estimate_smoothness", "expected_divergence_bound", "loss_divergence_bound",
    "outage_rates",
    "RoundMetrics", "ToyModel", "fedavg", "run_scenario",
]

__version__ = "0.1.0"

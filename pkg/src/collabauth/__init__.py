"""Collaborative position authentication with consensus ADMM at the edge."""

from .consensus import AdmmConfig, admm_batch, radial_prox, run_consensus, x_update
from .core_types import (
    AuthDecision,
    ConsensusResult,
    DeviceId,
    FeatureKind,
    Observation,
    PeerState,
    Position,
    Verdict,
    euclidean_distance,
)
from .decision import (
    CostParams,
    MonteCarloEstimate,
    ThresholdParams,
    authenticate,
    comm_instances,
    fa_rate_monte_carlo,
    initial_threshold,
    md_rate_closed_form,
    md_rate_monte_carlo,
    optimal_peer_count,
    optimal_threshold,
    peer_count,
    threshold,
)
from .measurement import NoiseModel, PathLossParams, distance_from_rssi, observe, path_loss, rssi_from_distance
from .messages import Message, MessageBus, MessageKind
from .protocol import (
    EdgeNode,
    EdgePool,
    InsufficientPeers,
    LocalizationResult,
    NoReplacement,
    PeerUnavailable,
    ProtocolError,
    SecureGroup,
    localize_attacker,
    orchestrate_round,
    run_campaign,
    update_group,
)
from .scenario import ScenarioConfig, ScenarioError, load_scenario, parse_scenario

__version__ = "0.1.0"

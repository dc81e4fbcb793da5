"""Authentication verdicts, error rates, threshold and peer-count calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf, erfinv

from .consensus import AdmmConfig, admm_batch
from .core_types import (
    AuthDecision,
    ConsensusResult,
    DeviceId,
    FeatureKind,
    Observation,
    Position,
    Verdict,
)
from .measurement import sample_ranges

N_MIN = 3


@dataclass(frozen=True)
class ThresholdParams:
    """Attacker-distance prior (log-normal) plus the error budget for the threshold."""

    mu_a: float = 2.0
    sigma_a: float = 0.5
    epsilon: float = 0.05
    iota0: float = 0.3
    iota: float = 0.2

    def __post_init__(self):
        if not self.sigma_a > 0:
            raise ValueError("sigma_a must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.iota0 < 0 or self.iota < 0:
            raise ValueError("iota0 and iota must be non-negative")


@dataclass(frozen=True)
class CostParams:
    tau: float = 3000.0
    k_ave: float = 100.0
    n_available: int = 10
    n_min: int = N_MIN

    def __post_init__(self):
        if self.n_min != N_MIN:
            raise ValueError(f"n_min is fixed at {N_MIN}")
        if self.tau < 1 or self.k_ave < 1:
            raise ValueError("tau and k_ave must be at least 1")
        if self.n_available < 0:
            raise ValueError("n_available must be non-negative")


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    stderr: float
    trials: int

    @classmethod
    def from_flags(cls, flags) -> "MonteCarloEstimate":
        flags = np.asarray(flags, dtype=bool)
        n = flags.size
        p = float(flags.mean())
        return cls(p, math.sqrt(p * (1.0 - p) / n), n)


def authenticate(
    claimed_id: DeviceId,
    observations: Sequence[Observation],
    result: Optional[ConsensusResult],
    claimed_pos: Position,
    nu: float,
) -> AuthDecision:
    """Decide between legitimate user, identity spoofer and location spoofer.

    Rules apply in order: an unobservable user is a location spoofer; any
    peer seeing a different ID flags an identity spoofer; a consensus that
    never settled is treated as spoofing; otherwise the agreed point must lie
    within ``nu`` of the claimed position.
    """
    if not observations:
        raise ValueError("no observations to decide on")
    if not nu > 0:
        raise ValueError(f"threshold must be positive, got {nu}")
    if any(not o.observable for o in observations):
        return AuthDecision(Verdict.LOCATION_SPOOFER)
    if any(o.observed_id != claimed_id for o in observations):
        return AuthDecision(Verdict.IDENTITY_SPOOFER, id_mismatch=True)
    if result is None:
        raise ValueError("an observable user needs a consensus result")
    if not result.converged:
        return AuthDecision(Verdict.IDENTITY_SPOOFER, diverged=True)
    dist = result.x0.distance_to(claimed_pos)
    verdict = Verdict.LEGITIMATE if dist <= nu else Verdict.IDENTITY_SPOOFER
    return AuthDecision(verdict, distance_to_claim=dist)


def md_rate_closed_form(nu: float, p: ThresholdParams) -> float:
    """Probability that a log-normally placed attacker falls within ``nu``."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    if math.isinf(nu):
        return 1.0
    return 0.5 * (1.0 + float(erf((math.log(nu) - p.mu_a) / (math.sqrt(2.0) * p.sigma_a))))


def lognormal_pdf(s: float, p: ThresholdParams) -> float:
    if not s > 0:
        raise ValueError("s must be positive")
    z = (math.log(s) - p.mu_a) / p.sigma_a
    return math.exp(-0.5 * z * z) / (p.sigma_a * s * math.sqrt(2.0 * math.pi))


def optimal_threshold(p: ThresholdParams) -> float:
    """Largest threshold keeping the closed-form MD rate at epsilon."""
    return math.exp(p.mu_a + math.sqrt(2.0) * p.sigma_a * float(erfinv(2.0 * p.epsilon - 1.0)))


def initial_threshold(p: ThresholdParams) -> float:
    return p.iota0 + p.iota


def threshold(p: ThresholdParams) -> float:
    return min(optimal_threshold(p), initial_threshold(p))


def comm_instances(k: int, n: int) -> int:
    """Peer-to-peer messages for one round: feature share plus K parameter shares."""
    if n < 2:
        raise ValueError("need at least 2 peers to communicate")
    if k < 0:
        raise ValueError("iteration count must be non-negative")
    return (k + 1) * n * (n - 1)


def optimal_peer_count(tau, k_ave):
    """Largest N with (k_ave + 1) N (N - 1) <= tau.

    Accepts scalars (returns int) or broadcastable arrays.
    """
    tau_a = np.asarray(tau, dtype=float)
    per_pair = np.asarray(k_ave, dtype=float) + 1.0
    n = np.floor(np.sqrt(tau_a / per_pair + 0.25) + 0.5)
    # the float root can land one off at exact boundaries
    n = np.where((n > 1) & (per_pair * n * (n - 1) > tau_a), n - 1, n)
    n = np.where(per_pair * (n + 1) * n <= tau_a, n + 1, n)
    n = n.astype(np.int64)
    return int(n) if n.ndim == 0 else n


def peer_count(c: CostParams) -> int:
    return max(c.n_min, min(optimal_peer_count(c.tau, c.k_ave), c.n_available))


# --- Monte Carlo -----------------------------------------------------------
#
# Trial-to-stream assignment: a run draws all its random numbers from one
# generator, block by block (attacker distances, then bearings, then one
# standard normal per (trial, peer) in C order). Trial t therefore always
# sees row t of every block.


def _peer_arrays(scenario):
    peers = sorted(scenario.peers, key=lambda p: p.peer)
    b = np.array([p.b.as_array() for p in peers])
    is_rssi = np.array([p.feature is FeatureKind.RSSI for p in peers])
    return peers, b, is_rssi


def simulate_consensus(scenario, transmitters, rng, admm: Optional[AdmmConfig] = None):
    """Sense each transmitter position with fresh noise and run consensus.

    ``transmitters`` is (T, 3). Returns the batch result of the solver.
    """
    _, b, is_rssi = _peer_arrays(scenario)
    transmitters = np.atleast_2d(np.asarray(transmitters, dtype=float))
    T = transmitters.shape[0]
    true_d = np.linalg.norm(transmitters[:, None, :] - b[None], axis=-1)
    h = sample_ranges(true_d, is_rssi[None, :], scenario.path_loss, scenario.noise, rng)
    bb = np.broadcast_to(b, (T,) + b.shape)
    return admm_batch(bb, h, admm or scenario.admm)


def rejected(x0, converged, claimed, nu):
    """Vector form of the geometric rule: reject on divergence or distance > nu."""
    dist = np.linalg.norm(np.asarray(x0) - np.asarray(claimed), axis=-1)
    return ~np.asarray(converged) | (dist > nu)


def legitimate_trials(scenario, trials: int, rng):
    """Consensus outcomes for ``trials`` legitimate authentications."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    a = scenario.user_true_pos.as_array()
    return simulate_consensus(scenario, np.tile(a, (trials, 1)), rng)


def fa_rate_monte_carlo(scenario, nu: float, trials: int, rng) -> MonteCarloEstimate:
    run = legitimate_trials(scenario, trials, rng)
    return MonteCarloEstimate.from_flags(
        rejected(run.x0, run.converged, scenario.user_claimed_pos.as_array(), nu)
    )


def attacker_positions(scenario, trials: int, rng, distance_model: Optional[ThresholdParams] = None):
    """Attacker placements for MD trials.

    Without a distance model the scenario's attacker position is used for
    every trial. With one, the attacker sits at a log-normal distance from
    the claimed position along a uniform bearing in the x1-x2 plane.
    """
    claimed = scenario.user_claimed_pos.as_array()
    if distance_model is None:
        if scenario.attacker is None:
            raise ValueError("scenario has no attacker and no distance model was given")
        return np.tile(scenario.attacker.pos.as_array(), (trials, 1))
    d_a = rng.lognormal(distance_model.mu_a, distance_model.sigma_a, size=trials)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=trials)
    offsets = np.stack([np.cos(theta), np.sin(theta), np.zeros(trials)], axis=1)
    return claimed + d_a[:, None] * offsets


def md_rate_monte_carlo(
    scenario, nu: float, trials: int, rng, distance_model: Optional[ThresholdParams] = None
) -> MonteCarloEstimate:
    """Fraction of attacker trials that get authenticated as legitimate.

    If some peer is not fooled by the forged ID, the ID check catches every
    trial and the rate is zero.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    attacker = scenario.attacker
    if attacker is not None and not attacker.fools_all(p.peer for p in scenario.peers):
        return MonteCarloEstimate(0.0, 0.0, trials)
    c = attacker_positions(scenario, trials, rng, distance_model)
    run = simulate_consensus(scenario, c, rng)
    accepted = ~rejected(run.x0, run.converged, scenario.user_claimed_pos.as_array(), nu)
    return MonteCarloEstimate.from_flags(accepted)

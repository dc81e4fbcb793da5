"""Radio and trajectory measurement models.

Peers turn what they sense about a device into a distance estimate. RSSI
goes through a log-distance path-loss law and its inverse; trajectory
sensing (camera, lidar) is abstracted to a noisy range.

Noise law: an RSSI-derived range is ``d * (1 + eta)`` with
``eta ~ N(0, 10**(-snr_db / 20))``, drawn in the distance domain and pushed
through the path-loss model so that the returned estimate is exactly the
inverse of a (noisy) received power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import DeviceId, FeatureKind, Observation, PeerState, Position, euclidean_distance

# estimates are floored here so an observable user always has a nonzero range
MIN_RANGE_M = 1e-6


@dataclass(frozen=True)
class PathLossParams:
    A: float = 20.0
    B: float = 46.4
    C: float = 20.0
    carrier_ghz: float = 5.0
    tx_power_dbm: float = 20.0

    def __post_init__(self):
        if not self.A > 0:
            raise ValueError("A must be positive")
        if not self.carrier_ghz > 0:
            raise ValueError("carrier_ghz must be positive")

    @property
    def frequency_term(self) -> float:
        return self.C * math.log10(self.carrier_ghz / 5.0)


@dataclass(frozen=True)
class NoiseModel:
    snr_db: float = 30.0
    tra_sigma_m: float = 0.5

    def __post_init__(self):
        if self.tra_sigma_m < 0:
            raise ValueError("tra_sigma_m must be non-negative")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(snr_db=math.inf, tra_sigma_m=0.0)

    @property
    def rssi_rel_sigma(self) -> float:
        """Relative std of an RSSI range estimate, 10**(-snr/20)."""
        if math.isinf(self.snr_db) and self.snr_db > 0:
            return 0.0
        return 10.0 ** (-self.snr_db / 20.0)

    @property
    def is_noiseless(self) -> bool:
        return self.rssi_rel_sigma == 0.0 and self.tra_sigma_m == 0.0


def path_loss(d: float, params: PathLossParams) -> float:
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d}")
    return params.A * math.log10(d) + params.B + params.frequency_term


def rssi_from_distance(d: float, params: PathLossParams, noise: NoiseModel, rng=None) -> float:
    """Received power in dBm at range ``d``.

    The dB-domain perturbation is zero-mean Gaussian with std
    ``A * sigma / ln(10)``, the first-order image of the relative range
    error ``sigma`` used by :func:`observe`.
    """
    rssi = params.tx_power_dbm - path_loss(d, params)
    sigma_db = params.A * noise.rssi_rel_sigma / math.log(10.0)
    if sigma_db > 0:
        if rng is None:
            raise ValueError("a random generator is required for noisy RSSI")
        rssi -= rng.normal(0.0, sigma_db)
    return rssi


def distance_from_rssi(rssi, params: PathLossParams):
    exponent = (params.tx_power_dbm - rssi - params.B - params.frequency_term) / params.A
    return 10.0 ** exponent


def sample_ranges(true_d, is_rssi, params: PathLossParams, noise: NoiseModel, rng=None):
    """Vectorized range estimates for arrays of true distances.

    ``true_d`` and ``is_rssi`` broadcast together. One standard normal is
    consumed per element, in C order, whatever the feature; that fixed
    consumption is what keeps trial streams reproducible.
    """
    true_d = np.asarray(true_d, dtype=float)
    is_rssi = np.broadcast_to(np.asarray(is_rssi, dtype=bool), true_d.shape)
    if noise.is_noiseless:
        z = np.zeros(true_d.shape)
    else:
        if rng is None:
            raise ValueError("a random generator is required for noisy sensing")
        z = rng.standard_normal(true_d.shape)

    # RSSI: perturb in range, then go through power and back
    target = np.maximum(true_d * (1.0 + noise.rssi_rel_sigma * z), MIN_RANGE_M)
    rssi = params.tx_power_dbm - (params.A * np.log10(target) + params.B + params.frequency_term)
    h_rssi = distance_from_rssi(rssi, params)

    h_tra = true_d + noise.tra_sigma_m * z
    h = np.where(is_rssi, h_rssi, h_tra)
    return np.maximum(h, MIN_RANGE_M)


def observe(
    peer: PeerState,
    user_true_pos: Position,
    user_claimed_id: DeviceId,
    user_true_id: DeviceId,
    params: PathLossParams,
    noise: NoiseModel,
    rng=None,
) -> Observation:
    """One peer's observation of the device under test.

    ``user_true_id`` is the identity this peer perceives; whether a forged ID
    fools the peer is decided by the caller. ``user_claimed_id`` is accepted
    for symmetry with the decision step and not otherwise used here.
    """
    if not user_true_pos.observable:
        return Observation(peer=peer.peer, observed_id=DeviceId(user_true_id), observable=False)
    d = euclidean_distance(peer.b, user_true_pos)
    is_rssi = peer.feature is FeatureKind.RSSI
    h = float(sample_ranges([d], [is_rssi], params, noise, rng)[0])
    if is_rssi:
        return Observation(peer=peer.peer, observed_id=DeviceId(user_true_id), h1=h)
    return Observation(peer=peer.peer, observed_id=DeviceId(user_true_id), h2=h)

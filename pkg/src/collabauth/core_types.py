"""Value types shared by every part of the simulator."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DeviceId(str):
    """Opaque, non-empty device identifier."""

    def __new__(cls, value: str) -> "DeviceId":
        value = str(value)
        if not value:
            raise ValueError("device id must be non-empty")
        return super().__new__(cls, value)


@dataclass(frozen=True)
class Position:
    """A point in meters, or the distinguished unobservable point.

    The unobservable state stands for (+inf, +inf, +inf): a device that no
    peer can sense. It is kept as an explicit flag so solver arithmetic never
    sees infinities; use :meth:`as_array` only on finite positions.
    """

    x1: float = 0.0
    x2: float = 0.0
    x3: float = 0.0
    observable: bool = True

    def __post_init__(self):
        if self.observable:
            coords = (float(self.x1), float(self.x2), float(self.x3))
            if not all(math.isfinite(c) for c in coords):
                raise ValueError(f"non-finite coordinates {coords}")
            object.__setattr__(self, "x1", coords[0])
            object.__setattr__(self, "x2", coords[1])
            object.__setattr__(self, "x3", coords[2])
        else:
            object.__setattr__(self, "x1", math.inf)
            object.__setattr__(self, "x2", math.inf)
            object.__setattr__(self, "x3", math.inf)

    @classmethod
    def unobservable(cls) -> "Position":
        return cls(observable=False)

    @classmethod
    def of(cls, coords: Sequence[float]) -> "Position":
        """Build from a length-2 or length-3 sequence (2-D points get x3 = 0)."""
        coords = [float(c) for c in coords]
        if len(coords) == 2:
            coords.append(0.0)
        if len(coords) != 3:
            raise ValueError(f"expected 2 or 3 coordinates, got {len(coords)}")
        return cls(*coords)

    @property
    def is_finite(self) -> bool:
        return self.observable

    def as_array(self) -> np.ndarray:
        if not self.observable:
            raise ValueError("unobservable position has no coordinates")
        return np.array([self.x1, self.x2, self.x3])

    def distance_to(self, other: "Position") -> float:
        """Like :func:`euclidean_distance`, but infinite if either end is unobservable."""
        if not (self.observable and other.observable):
            return math.inf
        return euclidean_distance(self, other)

    def __eq__(self, other):
        if not isinstance(other, Position):
            return NotImplemented
        if not (self.observable and other.observable):
            return self.observable == other.observable
        return (self.x1, self.x2, self.x3) == (other.x1, other.x2, other.x3)

    def __hash__(self):
        return hash((self.x1, self.x2, self.x3, self.observable))

    def __repr__(self):
        if not self.observable:
            return "Position(unobservable)"
        return f"Position({self.x1:g}, {self.x2:g}, {self.x3:g})"


def euclidean_distance(p: Position, q: Position) -> float:
    if not (p.observable and q.observable):
        raise ValueError("distance is undefined for an unobservable position")
    return math.sqrt((p.x1 - q.x1) ** 2 + (p.x2 - q.x2) ** 2 + (p.x3 - q.x3) ** 2)


class FeatureKind(enum.Enum):
    RSSI = "RSSI"
    TRA = "TRA"


@dataclass(frozen=True)
class Observation:
    """What one peer reports about the device under test.

    ``h1`` is the RSSI-derived distance and ``h2`` the trajectory-derived
    one; the unselected feature is zero.
    """

    peer: DeviceId
    observed_id: DeviceId
    h1: float = 0.0
    h2: float = 0.0
    observable: bool = True

    def __post_init__(self):
        if self.h1 < 0 or self.h2 < 0:
            raise ValueError("distance estimates must be non-negative")
        if self.observable:
            if (self.h1 != 0) == (self.h2 != 0):
                raise ValueError("exactly one of h1, h2 must be nonzero for an observable user")
        elif self.h1 != 0 or self.h2 != 0:
            raise ValueError("unobservable observation carries no estimates")

    def distance(self, feature: FeatureKind) -> float:
        return self.h1 if feature is FeatureKind.RSSI else self.h2


@dataclass(frozen=True)
class PeerState:
    peer: DeviceId
    b: Position
    feature: FeatureKind = FeatureKind.RSSI
    x: Optional[Position] = None
    y: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.b.observable:
            raise ValueError(f"peer {self.peer} must have a finite location")
        if self.x is None:
            object.__setattr__(self, "x", self.b)
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))
        if len(self.y) != 3 or not all(math.isfinite(v) for v in self.y):
            raise ValueError("dual variable must be a finite 3-vector")


@dataclass(frozen=True)
class ConsensusResult:
    x0: Position
    iterations: int
    converged: bool
    residual_trace: tuple = field(default=(), repr=False)
    # per-iteration local variables, shape (K, N, 3), kept for trajectory plots
    x_trace: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    peers: tuple = ()


class Verdict(enum.Enum):
    LEGITIMATE = "Legitimate"
    IDENTITY_SPOOFER = "IdentitySpoofer"
    LOCATION_SPOOFER = "LocationSpoofer"


@dataclass(frozen=True)
class AuthDecision:
    verdict: Verdict
    distance_to_claim: Optional[float] = None
    id_mismatch: bool = False
    diverged: bool = False

    def __post_init__(self):
        if self.id_mismatch and self.verdict is not Verdict.IDENTITY_SPOOFER:
            raise ValueError("an ID mismatch always yields IdentitySpoofer")
        if self.diverged and self.verdict is Verdict.LEGITIMATE:
            raise ValueError("a diverged consensus cannot authenticate a user")

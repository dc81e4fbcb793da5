"""Scenario configuration: parsing, validation and per-epoch inputs.

Config files are flat ``key = value`` lines with dotted keys; ``#`` starts a
comment and values may be double-quoted. Vectors are whitespace separated
(``user.true_pos = "6 6 0"``; a 2-vector gets x3 = 0). An optional leading
``scenario.`` on every key is accepted. Recognised keys::

    seed (required), name, epochs, provider
    user.true_pos | user.claimed_pos | user.velocity | user.true_id | user.claimed_id
    attacker.pos | attacker.true_id | attacker.forged_id | attacker.fools
    peers.<id>.pos | peers.<id>.feature | peers.<id>.unavailable
    pool.<id>.pos | pool.<id>.feature | pool.<id>.unavailable
    mobility.connectivity_radius | mobility.dt
    path_loss.A | .B | .C | .carrier_ghz | .tx_power_dbm
    noise.snr_db | noise.tra_sigma_m
    admm.rho | admm.stop_eps | admm.k_max
    threshold.mu_a | .sigma_a | .epsilon | .iota0 | .iota | .nu
    cost.tau | cost.k_ave | cost.tau_schedule

``user.true_pos = unobservable`` models a location spoofer. ``attacker.fools``
is ``all``, ``none`` or a list of peer ids that read the forged ID.
``cost.tau_schedule`` is a list of ``epoch:tau`` pairs taking effect from
that epoch on.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from .consensus import AdmmConfig
from .core_types import DeviceId, FeatureKind, PeerState, Position
from .decision import CostParams, ThresholdParams, threshold
from .measurement import NoiseModel, PathLossParams
from .protocol import EdgeNode, EdgePool, RoundInputs, SecureGroup

BUNDLED = ("indoor", "outdoor", "localization", "campaign", "location_spoofer")


class ScenarioError(ValueError):
    """Raised for unparsable or invalid scenario text; ``problems`` lists each issue."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class AttackerSpec:
    pos: Position
    true_id: DeviceId
    forged_id: DeviceId
    # peers that read the forged ID; None means every peer
    fools: Optional[FrozenSet[DeviceId]] = None

    def fooled(self, peer: DeviceId) -> bool:
        return self.fools is None or peer in self.fools

    def fools_all(self, peers) -> bool:
        return all(self.fooled(p) for p in peers)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    peers: Tuple[PeerState, ...]
    user_true_pos: Position
    user_claimed_pos: Position
    user_true_id: DeviceId = DeviceId("user")
    user_claimed_id: DeviceId = DeviceId("user")
    user_velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    attacker: Optional[AttackerSpec] = None
    pool: EdgePool = field(default_factory=lambda: EdgePool({}))
    path_loss: PathLossParams = PathLossParams()
    noise: NoiseModel = NoiseModel()
    admm: AdmmConfig = AdmmConfig()
    threshold_params: ThresholdParams = ThresholdParams()
    cost_params_base: CostParams = CostParams()
    tau_schedule: Tuple[Tuple[int, float], ...] = ()
    nu_override: Optional[float] = None
    epochs: int = 1
    dt: float = 1.0
    provider: DeviceId = DeviceId("provider")
    name: str = "scenario"

    @property
    def nu(self) -> float:
        if self.nu_override is not None:
            return self.nu_override
        return threshold(self.threshold_params)

    def user_pos_at(self, epoch: int, which: str = "true") -> Position:
        base = self.user_true_pos if which == "true" else self.user_claimed_pos
        if not base.observable:
            return base
        shift = np.asarray(self.user_velocity) * self.dt * epoch
        return Position(*(base.as_array() + shift))

    def transmitter_pos_at(self, epoch: int) -> Position:
        if self.attacker is not None:
            return self.attacker.pos
        return self.user_pos_at(epoch, "true")

    def round_inputs(self, epoch: int = 0) -> RoundInputs:
        attacker = self.attacker
        if attacker is None:
            true_id = self.user_true_id

            def perceived(_peer):
                return true_id
        else:

            def perceived(peer):
                return attacker.forged_id if attacker.fooled(peer) else attacker.true_id

        claimed = self.user_pos_at(epoch, "claimed")
        user = self.user_pos_at(epoch, "true")
        return RoundInputs(
            transmitter_pos=self.transmitter_pos_at(epoch),
            claimed_pos=claimed,
            claimed_id=self.user_claimed_id,
            perceived_id=perceived,
            user_pos=user if user.observable else claimed,
            nu=self.nu,
        )

    def initial_group(self) -> SecureGroup:
        return SecureGroup(tuple(p.peer for p in self.peers), 0)

    def cost_params(self, epoch: int, n_available: int) -> CostParams:
        tau = self.cost_params_base.tau
        for start, value in sorted(self.tau_schedule):
            if epoch >= start:
                tau = value
        return replace(self.cost_params_base, tau=tau, n_available=n_available)

    def with_peers(self, n: int, feature: Optional[FeatureKind] = None) -> "ScenarioConfig":
        """The first ``n`` peers (file order), optionally forcing one feature."""
        if n > len(self.peers):
            raise ValueError(f"scenario has only {len(self.peers)} peers")
        peers = self.peers[:n]
        if feature is not None:
            peers = tuple(replace(p, feature=feature) for p in peers)
        nodes = dict(self.pool.nodes)
        for p in peers:
            nodes[p.peer] = replace(nodes[p.peer], feature=p.feature)
        return replace(self, peers=peers, pool=EdgePool(nodes, self.pool.connectivity_radius))

    def with_noise(self, noise: NoiseModel) -> "ScenarioConfig":
        return replace(self, noise=noise)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=int(seed))


# --- parsing ---------------------------------------------------------------

_LINE = re.compile(r"^\s*([A-Za-z0-9_.\-]+)\s*=\s*(.*?)\s*$")
_NODE_KEYS = {"pos", "feature", "unavailable"}


def _parse_lines(text: str):
    entries: Dict[str, Tuple[str, int]] = {}
    problems = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            problems.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = m.group(1), m.group(2)
        if key.startswith("scenario."):
            key = key[len("scenario."):]
        if len(value) >= 2 and value[0] == value[-1] == '"':
            value = value[1:-1]
        if key in entries:
            problems.append(f"line {lineno}: duplicate key {key!r} (first on line {entries[key][1]})")
            continue
        entries[key] = (value, lineno)
    return entries, problems


class _Reader:
    """Typed access to parsed entries, collecting problems instead of raising."""

    def __init__(self, entries):
        self.entries = entries
        self.problems: List[str] = []
        self.used = set()

    def _get(self, key):
        self.used.add(key)
        return self.entries.get(key)

    def has(self, key):
        return key in self.entries

    def _fail(self, key, lineno, msg):
        self.problems.append(f"line {lineno}: {key}: {msg}")

    def float(self, key, default=None):
        item = self._get(key)
        if item is None:
            return default
        value, lineno = item
        try:
            return float(value)
        except ValueError:
            self._fail(key, lineno, f"expected a number, got {value!r}")
            return default

    def int(self, key, default=None):
        item = self._get(key)
        if item is None:
            return default
        value, lineno = item
        try:
            return int(value)
        except ValueError:
            self._fail(key, lineno, f"expected an integer, got {value!r}")
            return default

    def str(self, key, default=None):
        item = self._get(key)
        return default if item is None else item[0]

    def vector(self, key, default=None, allow_unobservable=False):
        item = self._get(key)
        if item is None:
            return default
        value, lineno = item
        if allow_unobservable and value.strip().lower() in ("unobservable", "inf"):
            return Position.unobservable()
        try:
            return Position.of([float(v) for v in value.replace(",", " ").split()])
        except ValueError as exc:
            self._fail(key, lineno, f"bad position {value!r} ({exc})")
            return default

    def feature(self, key, default=FeatureKind.RSSI):
        item = self._get(key)
        if item is None:
            return default
        value, lineno = item
        try:
            return FeatureKind(value.strip().upper())
        except ValueError:
            self._fail(key, lineno, f"feature must be RSSI or TRA, got {value!r}")
            return default

    def epochs_set(self, key):
        item = self._get(key)
        if item is None:
            return frozenset()
        value, lineno = item
        try:
            return frozenset(int(v) for v in value.replace(",", " ").split())
        except ValueError:
            self._fail(key, lineno, f"expected a list of epochs, got {value!r}")
            return frozenset()

    def lineno(self, key):
        return self.entries[key][1] if key in self.entries else 0


def _nodes(r: _Reader, prefix: str):
    ids = []
    for key in r.entries:
        parts = key.split(".")
        if parts[0] == prefix and len(parts) == 3 and parts[2] in _NODE_KEYS and parts[1] not in ids:
            ids.append(parts[1])
    nodes = {}
    for nid in ids:
        pos = r.vector(f"{prefix}.{nid}.pos")
        if pos is None:
            r.problems.append(f"{prefix}.{nid}: missing pos")
            continue
        nodes[DeviceId(nid)] = EdgeNode(pos, r.feature(f"{prefix}.{nid}.feature"), r.epochs_set(f"{prefix}.{nid}.unavailable"))
    return nodes


def _build(r: _Reader, name_hint: str) -> ScenarioConfig:
    problems = r.problems
    if not r.has("seed"):
        problems.append("seed required")
    seed = r.int("seed", 0)
    if seed is not None and not 0 <= seed < 2**64:
        problems.append(f"line {r.lineno('seed')}: seed must be an unsigned 64-bit integer")

    true_pos = r.vector("user.true_pos", allow_unobservable=True)
    if true_pos is None:
        if not r.has("user.true_pos"):
            problems.append("user.true_pos is required")
        true_pos = Position()
    claimed_pos = r.vector("user.claimed_pos", true_pos)
    if not claimed_pos.observable:
        problems.append("user.claimed_pos must be finite (give it explicitly for a location spoofer)")
    velocity = r.vector("user.velocity", Position())
    true_id = DeviceId(r.str("user.true_id", "user"))
    claimed_id = DeviceId(r.str("user.claimed_id", true_id))

    peer_nodes = _nodes(r, "peers")
    pool_nodes = _nodes(r, "pool")
    overlap = set(peer_nodes) & set(pool_nodes)
    if overlap:
        problems.append(f"ids listed both as peers and pool nodes: {sorted(overlap)}")
    if len(peer_nodes) < 3:
        problems.append(f"at least 3 peers are required, got {len(peer_nodes)}")
    peers = tuple(PeerState(peer=pid, b=n.pos, feature=n.feature) for pid, n in peer_nodes.items())
    radius = r.float("mobility.connectivity_radius")
    pool = EdgePool({**peer_nodes, **pool_nodes}, radius)

    attacker = None
    if any(k.startswith("attacker.") for k in r.entries):
        apos = r.vector("attacker.pos")
        if apos is None:
            if not r.has("attacker.pos"):
                problems.append("attacker.pos is required when an attacker is configured")
            apos = Position()
        fools_raw = (r.str("attacker.fools", "all") or "all").strip()
        if fools_raw.lower() == "all":
            fools = None
        elif fools_raw.lower() == "none":
            fools = frozenset()
        else:
            fools = frozenset(DeviceId(v) for v in fools_raw.replace(",", " ").split())
            unknown = fools - set(peer_nodes) - set(pool_nodes)
            if unknown:
                problems.append(f"line {r.lineno('attacker.fools')}: unknown peers {sorted(unknown)}")
        attacker = AttackerSpec(
            apos,
            DeviceId(r.str("attacker.true_id", "attacker")),
            DeviceId(r.str("attacker.forged_id", claimed_id)),
            fools,
        )

    def build(cls, section, **kw):
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            problems.append(f"{section}: {exc}")
            return cls()

    pl_default = PathLossParams()
    path_loss = build(
        PathLossParams,
        "path_loss",
        **{k: r.float(f"path_loss.{k}", getattr(pl_default, k)) for k in ("A", "B", "C", "carrier_ghz", "tx_power_dbm")},
    )
    nm_default = NoiseModel()
    noise = build(
        NoiseModel,
        "noise",
        snr_db=r.float("noise.snr_db", nm_default.snr_db),
        tra_sigma_m=r.float("noise.tra_sigma_m", nm_default.tra_sigma_m),
    )
    ad = AdmmConfig()
    admm = build(
        AdmmConfig,
        "admm",
        rho=r.float("admm.rho", ad.rho),
        stop_eps=r.float("admm.stop_eps", ad.stop_eps),
        k_max=r.int("admm.k_max", ad.k_max),
    )
    td = ThresholdParams()
    thr = build(
        ThresholdParams,
        "threshold",
        **{k: r.float(f"threshold.{k}", getattr(td, k)) for k in ("mu_a", "sigma_a", "epsilon", "iota0", "iota")},
    )
    nu = r.float("threshold.nu")
    if nu is not None and not nu > 0:
        problems.append(f"line {r.lineno('threshold.nu')}: threshold.nu must be positive")
    cd = CostParams()
    cost = build(
        CostParams,
        "cost",
        tau=r.float("cost.tau", cd.tau),
        k_ave=r.float("cost.k_ave", cd.k_ave),
        n_available=len(pool.nodes),
    )
    schedule = []
    raw = r.str("cost.tau_schedule")
    if raw:
        try:
            for item in raw.replace(",", " ").split():
                ep, tau = item.split(":")
                schedule.append((int(ep), float(tau)))
        except ValueError:
            problems.append(f"line {r.lineno('cost.tau_schedule')}: expected 'epoch:tau' pairs, got {raw!r}")

    epochs = r.int("epochs", 1)
    if epochs is not None and epochs < 1:
        problems.append("epochs must be at least 1")
    dt = r.float("mobility.dt", 1.0)
    provider = DeviceId(r.str("provider", "provider"))
    name = r.str("name", name_hint)
    if provider in pool.nodes:
        problems.append(f"provider id {provider!r} collides with an edge node")

    unknown = sorted(set(r.entries) - r.used, key=lambda k: r.entries[k][1])
    for key in unknown:
        problems.append(f"line {r.entries[key][1]}: unknown key {key!r}")

    if problems:
        raise ScenarioError(problems)
    return ScenarioConfig(
        seed=seed,
        peers=peers,
        user_true_pos=true_pos,
        user_claimed_pos=claimed_pos,
        user_true_id=true_id,
        user_claimed_id=claimed_id,
        user_velocity=(velocity.x1, velocity.x2, velocity.x3),
        attacker=attacker,
        pool=pool,
        path_loss=path_loss,
        noise=noise,
        admm=admm,
        threshold_params=thr,
        cost_params_base=cost,
        tau_schedule=tuple(schedule),
        nu_override=nu,
        epochs=epochs,
        dt=dt,
        provider=provider,
        name=name,
    )


def parse_scenario(text: str, name: str = "scenario") -> ScenarioConfig:
    entries, problems = _parse_lines(text)
    r = _Reader(entries)
    r.problems.extend(problems)
    return _build(r, name)


def load_scenario(source) -> ScenarioConfig:
    """Load a scenario from a path, a bundled name (``indoor``...) or inline text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and "=" not in source):
        name = str(source)
        if name in BUNDLED:
            text = resources.files("collabauth.scenarios").joinpath(f"{name}.cfg").read_text(encoding="utf-8")
            return parse_scenario(text, name)
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioError([f"cannot read {path}: {exc}"]) from exc
        return parse_scenario(text, path.stem)
    return parse_scenario(source)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("collabauth.scenarios").joinpath(f"{name}.cfg")))

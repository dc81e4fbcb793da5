"""Round-based protocol: collaboration, group maintenance, attacker localization.

One authentication round runs, in bus rounds::

    CollabRequest / CollabAck      provider <-> members
    FeatureShare                   every member to every other member
    ParamShare x K                 one exchange per consensus iteration
    Decision                       members -> provider

Only FeatureShare and ParamShare are peer-to-peer traffic, so a round with
K iterations and N members logs exactly (K + 1) N (N - 1) of them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .consensus import AdmmConfig, run_consensus
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
from .decision import N_MIN, authenticate, peer_count
from .measurement import observe
from .messages import Message, MessageBus, MessageKind

log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    pass


class InsufficientPeers(ProtocolError):
    pass


class PeerUnavailable(ProtocolError):
    def __init__(self, members):
        self.members = tuple(members)
        super().__init__(f"unavailable group members: {', '.join(self.members)}")


class NoReplacement(ProtocolError):
    def __init__(self, group: "SecureGroup"):
        self.group = group
        super().__init__(f"no available edge node to replace a departed peer ({len(group.members)} left)")


@dataclass(frozen=True)
class SecureGroup:
    members: Tuple[DeviceId, ...]
    epoch: int = 0

    def __post_init__(self):
        members = tuple(DeviceId(m) for m in self.members)
        if len(set(members)) != len(members):
            raise ValueError("duplicate group members")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def __contains__(self, item):
        return item in self.members


@dataclass(frozen=True)
class EdgeNode:
    pos: Position
    feature: FeatureKind = FeatureKind.RSSI
    unavailable: frozenset = frozenset()

    def __post_init__(self):
        if not self.pos.observable:
            raise ValueError("edge node positions must be finite")


@dataclass
class EdgePool:
    """Edge nodes the provider may recruit, with their availability.

    A node is available at an epoch unless its schedule lists that epoch or,
    when a connectivity radius is set, the user is out of its range.
    """

    nodes: Dict[DeviceId, EdgeNode]
    connectivity_radius: Optional[float] = None

    def is_available(self, node_id, epoch: int, user_pos: Optional[Position] = None) -> bool:
        node = self.nodes[node_id]
        if epoch in node.unavailable:
            return False
        if self.connectivity_radius is not None and user_pos is not None and user_pos.observable:
            return euclidean_distance(node.pos, user_pos) <= self.connectivity_radius
        return True

    def available(self, epoch: int, user_pos: Optional[Position] = None) -> List[DeviceId]:
        return sorted(n for n in self.nodes if self.is_available(n, epoch, user_pos))

    def peer_state(self, node_id) -> PeerState:
        node = self.nodes[node_id]
        return PeerState(peer=DeviceId(node_id), b=node.pos, feature=node.feature)


@dataclass(frozen=True)
class RoundInputs:
    """What the channel looks like for one round.

    ``perceived_id`` maps a peer to the ID it reads off the transmitting
    device; ``transmitter_pos`` is where that device really is.
    """

    transmitter_pos: Position
    claimed_pos: Position
    claimed_id: DeviceId
    perceived_id: Callable[[DeviceId], DeviceId]
    user_pos: Position
    nu: float


@dataclass
class RoundOutcome:
    decision: AuthDecision
    result: ConsensusResult
    messages: List[Message]
    observations: List[Observation]
    group: SecureGroup

    @property
    def peer_messages(self) -> int:
        return sum(1 for m in self.messages if m.kind in (MessageKind.FEATURE_SHARE, MessageKind.PARAM_SHARE))


@dataclass(frozen=True)
class LocalizationResult:
    estimate: Position
    residual_error: Optional[float] = None


def orchestrate_round(
    provider: DeviceId,
    group: SecureGroup,
    pool: EdgePool,
    inputs: RoundInputs,
    scenario,
    rng,
    bus: MessageBus,
    admm: Optional[AdmmConfig] = None,
) -> RoundOutcome:
    """Run one collaborative authentication for the current group.

    ``scenario`` supplies the channel models (``path_loss``, ``noise``) and
    the default ``admm`` configuration. Raises before emitting anything if
    the group is too small or a member has become unavailable.
    """
    if len(group) < N_MIN:
        raise InsufficientPeers(f"{len(group)} cooperative peers; at least {N_MIN} are required")
    missing = [m for m in group.members if not pool.is_available(m, group.epoch, inputs.user_pos)]
    if missing:
        raise PeerUnavailable(missing)

    start = len(bus.log)
    members = sorted(group.members)

    rnd = bus.next_round()
    for m in members:
        bus.publish(Message(MessageKind.COLLAB_REQUEST, provider, m, rnd))
    for m in members:
        bus.publish(Message(MessageKind.COLLAB_ACK, m, provider, rnd, True))

    peers = [pool.peer_state(m) for m in members]
    observations = [
        observe(
            p,
            inputs.transmitter_pos,
            inputs.claimed_id,
            inputs.perceived_id(p.peer),
            scenario.path_loss,
            scenario.noise,
            rng,
        )
        for p in peers
    ]
    bus.broadcast(
        MessageKind.FEATURE_SHARE,
        members,
        bus.next_round(),
        {o.peer: (p.feature.value, o.distance(p.feature), o.observed_id) for p, o in zip(peers, observations)},
    )

    if all(o.observable for o in observations):
        result = run_consensus(peers, observations, admm or scenario.admm, bus)
    else:
        result = ConsensusResult(x0=Position.unobservable(), iterations=0, converged=False, peers=tuple(members))

    decision = authenticate(inputs.claimed_id, observations, result, inputs.claimed_pos, inputs.nu)
    rnd = bus.next_round()
    for m in members:
        bus.publish(Message(MessageKind.DECISION, m, provider, rnd, decision.verdict.value))

    return RoundOutcome(decision, result, bus.log[start:], observations, group)


def _nearest(candidates: Sequence[DeviceId], pool: EdgePool, target: Position) -> DeviceId:
    return min(candidates, key=lambda j: (pool.nodes[j].pos.distance_to(target), j))


def update_group(
    group: SecureGroup,
    departed: DeviceId,
    pool: EdgePool,
    x0_prev: Position,
    user_pos: Optional[Position] = None,
) -> SecureGroup:
    """Swap a departed peer for the available non-member nearest to ``x0_prev``.

    Availability is judged at ``group.epoch``. Ties go to the smaller ID.
    When nobody can step in, :class:`NoReplacement` carries the shrunk group.
    """
    if departed not in group:
        raise ValueError(f"{departed} is not a member of the group")
    remaining = tuple(m for m in group.members if m != departed)
    candidates = [
        j for j in pool.available(group.epoch, user_pos) if j not in group.members
    ]
    if not candidates:
        raise NoReplacement(SecureGroup(remaining, group.epoch + 1))
    joined = _nearest(candidates, pool, x0_prev)
    return SecureGroup(remaining + (joined,), group.epoch + 1)


def localize_attacker(
    decision: AuthDecision, result: Optional[ConsensusResult], true_attacker_pos: Optional[Position] = None
) -> Optional[LocalizationResult]:
    """Report the agreed point as the attacker's position, when that is meaningful.

    Only identity spoofers with a settled consensus can be localized; a
    location spoofer was never observed and a diverged run agreed on nothing.
    """
    if decision.verdict is not Verdict.IDENTITY_SPOOFER:
        return None
    if result is None or not result.converged or not result.x0.observable:
        return None
    residual = None
    if true_attacker_pos is not None:
        residual = euclidean_distance(result.x0, true_attacker_pos)
    return LocalizationResult(result.x0, residual)


# --- mobility campaign -----------------------------------------------------


@dataclass
class CampaignEpoch:
    epoch: int
    user_pos: Position
    group: SecureGroup
    # (departed, joined-or-None) per departure, in the order handled
    replacements: List[Tuple[DeviceId, Optional[DeviceId]]] = field(default_factory=list)
    # ("drop" | "join", id) from retargeting the group size
    retargets: List[Tuple[str, DeviceId]] = field(default_factory=list)
    target_size: Optional[int] = None
    # group after departures were handled, before resizing
    after_update: Optional[SecureGroup] = None
    outcome: Optional[RoundOutcome] = None
    error: Optional[str] = None


def _retarget(group: SecureGroup, target: int, pool: EdgePool, x0_prev: Position, user_pos: Position):
    members = list(group.members)
    events = []
    while len(members) > target:
        far = max(members, key=lambda j: (pool.nodes[j].pos.distance_to(x0_prev), j))
        members.remove(far)
        events.append(("drop", far))
    candidates = [j for j in pool.available(group.epoch, user_pos) if j not in members]
    while len(members) < target and candidates:
        near = _nearest(candidates, pool, x0_prev)
        candidates.remove(near)
        members.append(near)
        events.append(("join", near))
    return SecureGroup(tuple(members), group.epoch), events


def run_campaign(
    scenario,
    epochs: int,
    rng,
    bus: Optional[MessageBus] = None,
    admm: Optional[AdmmConfig] = None,
) -> List[CampaignEpoch]:
    """Authenticate a moving user once per epoch while maintaining the group.

    Each epoch: members report availability, departed members are replaced
    one by one (nearest available node to the last agreed position), the
    group is resized to the cost-optimal peer count, and a round is run.
    Round failures are recorded and the campaign goes on.

    ``scenario`` provides ``provider``, ``pool``, ``initial_group()``,
    ``round_inputs(epoch)``, ``cost_params(epoch, n_available)`` and the
    channel models.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    bus = bus if bus is not None else MessageBus()
    pool: EdgePool = scenario.pool
    group = scenario.initial_group()
    x0_prev = scenario.user_claimed_pos
    trace: List[CampaignEpoch] = []

    for t in range(epochs):
        inputs = scenario.round_inputs(t)
        user_pos = inputs.user_pos
        group = SecureGroup(group.members, t)
        rec = CampaignEpoch(t, user_pos, group)

        if t > 0:
            rnd = bus.next_round()
            for m in sorted(group.members):
                bus.publish(
                    Message(MessageKind.AVAILABILITY_REPORT, m, scenario.provider, rnd, pool.is_available(m, t, user_pos))
                )
        departed = [m for m in sorted(group.members) if not pool.is_available(m, t, user_pos)]
        for gone in departed:
            try:
                nxt = update_group(group, gone, pool, x0_prev, user_pos)
                joined = next(m for m in nxt.members if m not in group.members)
            except NoReplacement as exc:
                nxt, joined = exc.group, None
                log.info("epoch %d: %s left and no replacement is available", t, gone)
            rec.replacements.append((gone, joined))
            group = SecureGroup(nxt.members, t)

        rec.after_update = group
        n_available = len(pool.available(t, user_pos))
        target = peer_count(scenario.cost_params(t, n_available))
        rec.target_size = target
        group, rec.retargets = _retarget(group, target, pool, x0_prev, user_pos)
        rec.group = group

        try:
            outcome = orchestrate_round(scenario.provider, group, pool, inputs, scenario, rng, bus, admm)
        except ProtocolError as exc:
            rec.error = str(exc)
        else:
            rec.outcome = outcome
            if outcome.result.converged:
                x0_prev = outcome.result.x0
        trace.append(rec)
    return trace

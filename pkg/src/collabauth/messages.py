"""Synchronous in-process message bus with an audit log."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Iterable, List, Optional

from .core_types import DeviceId


class MessageKind(enum.Enum):
    COLLAB_REQUEST = "CollabRequest"
    COLLAB_ACK = "CollabAck"
    FEATURE_SHARE = "FeatureShare"
    PARAM_SHARE = "ParamShare"
    DECISION = "Decision"
    AVAILABILITY_REPORT = "AvailabilityReport"


# messages exchanged among cooperative peers, i.e. the ones the
# per-round communication count covers
PEER_KINDS = frozenset({MessageKind.FEATURE_SHARE, MessageKind.PARAM_SHARE})


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: DeviceId
    to: DeviceId
    round: int
    payload: Any = None

    def __post_init__(self):
        if self.sender == self.to:
            raise ValueError(f"{self.kind.value}: sender and receiver are both {self.sender}")
        if self.round < 0:
            raise ValueError("round must be non-negative")

    def as_line(self) -> str:
        return f"{self.kind.value}\t{self.sender}\t{self.to}\t{self.round}"


class MessageBus:
    """Logs every message exactly once, in publication order.

    Delivery is synchronous: everything published in round ``r`` is visible
    before round ``r + 1`` starts, so the bus only needs to hand out round
    numbers and keep the log.
    """

    def __init__(self):
        self.log: List[Message] = []
        self._next_round = 0

    def next_round(self) -> int:
        r = self._next_round
        self._next_round += 1
        return r

    def publish(self, message: Message) -> None:
        self.log.append(message)

    def broadcast(self, kind: MessageKind, senders: Iterable[DeviceId], round: int, payloads=None) -> None:
        """Every sender to every other sender, ordered by (sender, receiver)."""
        ids = sorted(senders)
        for src in ids:
            payload = None if payloads is None else payloads[src]
            for dst in ids:
                if dst != src:
                    self.publish(Message(kind, src, dst, round, payload))

    def count(self, kinds=None, since: int = 0, until: Optional[int] = None) -> int:
        kinds = PEER_KINDS if kinds is None else frozenset(kinds)
        return sum(1 for m in self.log[since:until] if m.kind in kinds)

    def lines(self) -> List[str]:
        return [m.as_line() for m in self.log]

    def export(self, path) -> None:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("kind\tfrom\tto\tround\n")
                for line in self.lines():
                    fh.write(line + "\n")
        except OSError as exc:
            raise OSError(f"cannot write message log to {path}: {exc}") from exc

"""Stepped information network: messages over direct links with rate, latency,
reliability and timeout.

Transfers on one link are serialized first-come first-served. A message that
would arrive more than `timeout` seconds after it was sent resolves as
TimedOut at ``sent_at + timeout``. Reliability is drawn once per send from the
network's own seeded generator.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np


class NoRoute(LookupError):
    pass


class Status(enum.Enum):
    DELIVERED = "delivered"
    DROPPED = "dropped"
    TIMED_OUT = "timed_out"


@dataclass(frozen=True)
class Message:
    sender: str
    receiver: str
    payload: bytes = b""
    size_bits: int | None = None
    sent_at: float | None = None

    def __post_init__(self):
        if self.sender == self.receiver:
            raise ValueError("sender and receiver must differ")
        if self.size_bits is None:
            object.__setattr__(self, "size_bits", 8 * len(self.payload))
        if self.size_bits < 0:
            raise ValueError("size_bits must be nonnegative")


@dataclass(frozen=True)
class Link:
    from_addr: str
    to_addr: str
    bit_rate: float
    latency: float = 0.0
    reliability: float = 1.0
    timeout: float = math.inf

    def __post_init__(self):
        if not self.bit_rate > 0:
            raise ValueError("bit_rate must be positive")
        if not 0.0 <= self.reliability <= 1.0:
            raise ValueError("reliability must lie in [0, 1]")
        if self.latency < 0:
            raise ValueError("latency must be nonnegative")
        if not self.timeout > self.latency:
            raise ValueError("timeout must exceed latency")


@dataclass(frozen=True)
class DeliveryResult:
    status: Status
    at: float


@dataclass
class _Transfer:
    ticket: int
    message: Message
    link: Link
    tx_start: float
    tx_end: float
    result: DeliveryResult


@dataclass
class InfoNetwork:
    links: dict[tuple[str, str], Link] = field(default_factory=dict)
    seed: int | None = 0
    now: float = 0.0

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self._busy_until: dict[tuple[str, str], float] = {}
        self._pending: list[tuple[float, int]] = []
        self.transfers: dict[int, _Transfer] = {}
        self.inboxes: dict[str, list[Message]] = {}
        self._next_ticket = 0

    def add_link(self, link: Link) -> Link:
        self.links[(link.from_addr, link.to_addr)] = link
        return link

    def send(self, msg: Message, now: float | None = None) -> int:
        """Enqueue `msg` on the direct link sender->receiver and return its ticket."""
        now = self.now if now is None else now
        if now < self.now:
            raise ValueError(f"cannot send at {now} before current time {self.now}")
        link = self.links.get((msg.sender, msg.receiver))
        if link is None:
            raise NoRoute(f"no link {msg.sender} -> {msg.receiver}")
        msg = replace(msg, sent_at=now)
        key = (link.from_addr, link.to_addr)
        tx_start = max(now, self._busy_until.get(key, -math.inf))
        tx_end = tx_start + msg.size_bits / link.bit_rate
        self._busy_until[key] = tx_end
        arrival = tx_end + link.latency
        survives = self.rng.random() < link.reliability
        if arrival - now > link.timeout:
            result = DeliveryResult(Status.TIMED_OUT, now + link.timeout)
        elif not survives:
            result = DeliveryResult(Status.DROPPED, arrival)
        else:
            result = DeliveryResult(Status.DELIVERED, arrival)
        ticket = self._next_ticket
        self._next_ticket += 1
        self.transfers[ticket] = _Transfer(ticket, msg, link, tx_start, tx_end, result)
        heapq.heappush(self._pending, (result.at, ticket))
        return ticket

    def advance(self, to: float) -> list[tuple[int, DeliveryResult]]:
        """Resolve everything due at or before `to`, in (time, ticket) order."""
        if to < self.now:
            raise ValueError(f"cannot advance backwards from {self.now} to {to}")
        out = []
        while self._pending and self._pending[0][0] <= to:
            _, ticket = heapq.heappop(self._pending)
            tr = self.transfers[ticket]
            if tr.result.status is Status.DELIVERED:
                self.inboxes.setdefault(tr.message.receiver, []).append(tr.message)
            out.append((ticket, tr.result))
        self.now = to
        return out

    def drain_inbox(self, address: str) -> list[Message]:
        return self.inboxes.pop(address, [])

    def peek_inbox(self, address: str) -> list[Message]:
        return list(self.inboxes.get(address, []))

    @property
    def in_flight(self) -> int:
        return len(self._pending)

    def bits_transmitted(self, from_addr: str, to_addr: str, t0: float, t1: float) -> float:
        """Bits put on the link during [t0, t1], counting partial transfers pro rata."""
        total = 0.0
        for tr in self.transfers.values():
            if (tr.link.from_addr, tr.link.to_addr) != (from_addr, to_addr) or tr.tx_end <= tr.tx_start:
                continue
            overlap = min(t1, tr.tx_end) - max(t0, tr.tx_start)
            if overlap > 0:
                total += tr.message.size_bits * overlap / (tr.tx_end - tr.tx_start)
        return total

    def trace_rows(self, resolved_only: bool = True) -> list[dict]:
        rows = []
        for ticket in sorted(self.transfers):
            tr = self.transfers[ticket]
            if resolved_only and tr.result.at > self.now:
                continue
            rows.append(
                {
                    "ticket": ticket,
                    "sender": tr.message.sender,
                    "receiver": tr.message.receiver,
                    "size_bits": tr.message.size_bits,
                    "sent_at": tr.message.sent_at,
                    "status": tr.result.status.value,
                    "resolved_at": tr.result.at,
                }
            )
        return rows

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.trace_rows())
        return buf.getvalue()


TRACE_COLUMNS = ["ticket", "sender", "receiver", "size_bits", "sent_at", "status", "resolved_at"]


def send(net: InfoNetwork, msg: Message, now: float) -> int:
    return net.send(msg, now)


def advance(net: InfoNetwork, to: float) -> list[tuple[int, DeliveryResult]]:
    return net.advance(to)

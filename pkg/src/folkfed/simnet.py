"""Deterministic multi-peer network simulator.

Peers run the real protocol engine and exchange real wire frames.  A single
seeded RNG draws per-link latencies (at creation) and per-frame drops (at
send), and a heap ordered by ``(deliver_step, sequence)`` fixes delivery
order, so a trace is a pure function of the seed and the script.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from folkfed.errors import UsageError
from folkfed.identity import generate_identity
from folkfed.sync.driver import _kind_of
from folkfed.sync.peer import Outgoing, Peer

LatencyModel = int | tuple[int, int] | Mapping[tuple[int, int], int] | Callable[[int, int], int]
Audit = Callable[[int, str, str, bytes], None]


@dataclass(frozen=True)
class TraceEvent:
    step: int
    seq: int
    kind: str
    sender: str
    receiver: str
    hash: str

    def line(self) -> str:
        return f"{self.step}\t{self.kind}\t{self.sender}\t{self.receiver}\t{self.hash}"


@dataclass
class Metrics:
    envelopes: int = 0
    bytes: int = 0
    drops: int = 0
    blocked: int = 0
    delivered: int = 0
    steps: int = 0
    quiescent: bool = True
    by_kind: dict[str, int] = field(default_factory=dict)

    def copy(self) -> "Metrics":
        return Metrics(self.envelopes, self.bytes, self.drops, self.blocked, self.delivered, self.steps, self.quiescent, dict(self.by_kind))


def peer_entropy(seed: int, index: int) -> bytes:
    return hashlib.sha256(f"folkfed-simnet:{seed}:{index}".encode("ascii")).digest()


class Network:
    """Discrete-step scheduler over a fixed set of peers."""

    def __init__(
        self,
        peers: Sequence[Peer],
        seed: int = 0,
        latency_model: LatencyModel = 1,
        drop_rate: float = 0.0,
    ):
        if not peers:
            raise UsageError("a network needs at least one peer")
        if not 0.0 <= drop_rate <= 1.0:
            raise UsageError("drop_rate must be within [0, 1]")
        self.seed = seed
        self.rng = random.Random(seed)
        self.order = [p.peer_id for p in peers]
        if len(set(self.order)) != len(self.order):
            raise UsageError("duplicate peer ids")
        self.peers: dict[str, Peer] = {p.peer_id: p for p in peers}
        self.index = {pid: i for i, pid in enumerate(self.order)}
        for p in peers:
            for q in peers:
                if p is not q:
                    p.introduce(q.record)
        self.drop_rate = drop_rate
        self.latency = self._latencies(latency_model)
        self.queue: list[tuple[int, int, str, str, bytes]] = []
        self.now = 0
        self.seq = 0
        self.trace: list[TraceEvent] = []
        self.metrics = Metrics()
        self.groups: dict[str, int] | None = None
        self.audits: list[Audit] = []

    def _latencies(self, model: LatencyModel) -> dict[tuple[int, int], int]:
        n = len(self.order)
        out = {}
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if isinstance(model, int):
                    d = model
                elif isinstance(model, tuple):
                    d = self.rng.randint(model[0], model[1])
                elif isinstance(model, Mapping):
                    d = model.get((i, j), 1)
                else:
                    d = model(i, j)
                if d < 1:
                    raise UsageError("link latency must be at least one step")
                out[(i, j)] = d
        return out

    @property
    def max_latency(self) -> int:
        return max(self.latency.values(), default=1)

    def peer(self, i: int) -> Peer:
        return self.peers[self.order[i]]

    # -- partitions ------------------------------------------------------

    def partition(self, groups: Iterable[Iterable[str | int]]) -> None:
        """Split the peers; ids left out of every group form one more group."""
        assign: dict[str, int] = {}
        for g, group in enumerate(groups):
            for member in group:
                pid = self.order[member] if isinstance(member, int) else member
                if pid not in self.peers:
                    raise UsageError(f"unknown peer {pid}")
                if pid in assign:
                    raise UsageError(f"peer {pid} appears in more than one group")
                assign[pid] = g
        rest = len({*assign.values()})
        for pid in self.order:
            assign.setdefault(pid, rest)
        self.groups = assign if len(set(assign.values())) > 1 else None

    def heal(self) -> None:
        self.groups = None
        for pid in self.order:
            self.send(pid, self.peers[pid].resync())

    def crosses(self, a: str, b: str) -> bool:
        return self.groups is not None and self.groups[a] != self.groups[b]

    # -- scheduling ------------------------------------------------------

    def _event(self, kind: str, sender: str, receiver: str, frame: bytes) -> None:
        self.seq += 1
        self.trace.append(TraceEvent(self.now, self.seq, kind, sender, receiver, hashlib.sha256(frame).hexdigest()))

    def send(self, sender: str, outgoing: Iterable[Outgoing]) -> None:
        for receiver, frame in outgoing:
            m = self.metrics
            m.envelopes += 1
            m.bytes += len(frame)
            kind = _kind_of(frame)
            m.by_kind[kind] = m.by_kind.get(kind, 0) + 1
            self._event("send", sender, receiver, frame)
            if receiver not in self.peers or self.crosses(sender, receiver):
                m.blocked += 1
                self._event("block", sender, receiver, frame)
                continue
            if self.drop_rate and self.rng.random() < self.drop_rate:
                m.drops += 1
                self._event("drop", sender, receiver, frame)
                continue
            due = self.now + self.latency[(self.index[sender], self.index[receiver])]
            heapq.heappush(self.queue, (due, self.seq, sender, receiver, frame))

    def _deliver(self, sender: str, receiver: str, frame: bytes) -> None:
        if self.crosses(sender, receiver):
            self.metrics.blocked += 1
            self._event("block", sender, receiver, frame)
            return
        for audit in self.audits:
            audit(self.now, sender, receiver, frame)
        self.metrics.delivered += 1
        self._event("deliver", sender, receiver, frame)
        self.send(receiver, self.peers[receiver].handle(frame, self.now))

    def step(self) -> int:
        """Advance one step: deliver everything due, then fire due timers."""
        self.now += 1
        delivered = 0
        while self.queue and self.queue[0][0] <= self.now:
            _, _, sender, receiver, frame = heapq.heappop(self.queue)
            self._deliver(sender, receiver, frame)
            delivered += 1
        for pid in self.order:
            peer = self.peers[pid]
            peer.now = max(peer.now, self.now)
            t = peer.next_timer()
            if t is not None and t <= self.now:
                self.send(pid, peer.tick(self.now))
        return delivered

    def idle(self) -> bool:
        return not self.queue and all(p.next_timer() is None for p in self.peers.values())

    def _next_due(self) -> int | None:
        due = [t for t in (p.next_timer() for p in self.peers.values()) if t is not None]
        if self.queue:
            due.append(self.queue[0][0])
        return min(due, default=None)

    def run_until_quiescent(self, max_steps: int = 100_000) -> Metrics:
        """Run until idle; idle gaps are skipped.  Hitting ``max_steps`` clears ``quiescent``."""
        start = self.now
        while not self.idle():
            nxt = self._next_due()
            if nxt is not None and nxt - 1 > self.now:
                self.now = nxt - 1
            if self.now - start >= max_steps:
                self.metrics.quiescent = False
                break
            self.step()
        else:
            self.metrics.quiescent = True
        self.metrics.steps = self.now - start
        return self.metrics.copy()

    settle = run_until_quiescent

    def dump_trace(self) -> str:
        return "".join(e.line() + "\n" for e in self.trace)


def create(
    n: int,
    seed: int = 0,
    latency_model: LatencyModel = 1,
    drop_rate: float = 0.0,
    peer_factory: Callable[[int, object, object], Peer] | None = None,
) -> Network:
    """A network of ``n`` peers whose identities derive from ``seed``.

    ``peer_factory(index, record, secret)`` customizes each peer (rules,
    federation view and so on); by default peers have no grants.
    """
    if n < 1:
        raise UsageError("a network needs at least one peer")
    peers = []
    for i in range(n):
        record, secret = generate_identity(peer_entropy(seed, i), f"sim{i}")
        peers.append(peer_factory(i, record, secret) if peer_factory else Peer(record, secret))
    return Network(peers, seed, latency_model, drop_rate)


def converged(net: Network) -> bool:
    """Every pin's local head equals the target's own head."""
    for peer in net.peers.values():
        for target in peer.pins:
            if peer.store.head(target) != net.peers[target].store.head(target):
                return False
    return True

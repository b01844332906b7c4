"""In-process delivery and the high-level replication operations.

The operations take any *driver*: an object with ``peers`` (id to Peer),
``send(sender, outgoing)`` and ``settle()``.  :class:`Loopback` delivers in
FIFO order on a virtual clock; the simulator provides the same interface
with latency, loss and partitions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Protocol

from folkfed.errors import NotFound, UsageError
from folkfed.federation import FederationState, hint
from folkfed.sync.peer import Outgoing, Peer, Selector, TreeAdvert
from folkfed.terms import Pattern, Quad


class Driver(Protocol):
    peers: dict[str, Peer]

    def send(self, sender: str, outgoing: Iterable[Outgoing]) -> None: ...

    def settle(self) -> int: ...


class Loopback:
    """Lossless, zero-latency delivery between peers in one process."""

    def __init__(self, peers: Iterable[Peer] = (), max_events: int = 1_000_000):
        self.peers: dict[str, Peer] = {}
        self.queue: deque[tuple[str, str, bytes]] = deque()
        self.now = 0
        self.max_events = max_events
        self.delivered = 0
        self.kinds: dict[str, int] = {}
        for p in peers:
            self.add(p)

    def add(self, peer: Peer) -> None:
        for other in self.peers.values():
            other.introduce(peer.record)
            peer.introduce(other.record)
        self.peers[peer.peer_id] = peer

    def send(self, sender: str, outgoing: Iterable[Outgoing]) -> None:
        for receiver, frame in outgoing:
            self.queue.append((sender, receiver, frame))

    def settle(self) -> int:
        """Deliver until no frames are queued and no timers are armed."""
        events = 0
        while True:
            while self.queue:
                sender, receiver, frame = self.queue.popleft()
                events += 1
                if events > self.max_events:
                    raise UsageError("loopback did not settle")
                peer = self.peers.get(receiver)
                if peer is None:
                    continue
                self.delivered += 1
                kind = _kind_of(frame)
                self.kinds[kind] = self.kinds.get(kind, 0) + 1
                self.send(receiver, peer.handle(frame, self.now))
            due = [t for t in (p.next_timer() for p in self.peers.values()) if t is not None]
            if not due:
                return events
            self.now = max(self.now, min(due))
            for pid in sorted(self.peers):
                self.send(pid, self.peers[pid].tick(self.now))


def _kind_of(frame: bytes) -> str:
    from folkfed.sync.wire import KINDS

    code = frame[4] if len(frame) > 4 else 0
    return KINDS[code - 1] if 1 <= code <= len(KINDS) else "?"


@dataclass(frozen=True)
class PullResult:
    commits_applied: int
    blobs_fetched: int
    chunks_held: int
    head: str | None


@dataclass(frozen=True)
class QueryResult:
    quads: frozenset[Quad]
    complete: bool
    unreached: frozenset[str]
    queried: frozenset[str]


def _peer(driver: Driver, peer_id: str) -> Peer:
    try:
        return driver.peers[peer_id]
    except KeyError:
        raise NotFound(f"peer {peer_id} is not on this driver") from None


def advertise(peer: Peer) -> TreeAdvert:
    return peer.advertise()


def pull(driver: Driver, local: str, remote: str, selector: Selector) -> PullResult:
    """Fetch ``selector`` from ``remote`` into ``local`` and wait for quiescence."""
    me = _peer(driver, local)
    before = dict(me.stats)
    driver.send(local, me.pull(remote, selector))
    driver.settle()
    return PullResult(
        me.stats["commits_applied"] - before["commits_applied"],
        me.stats["blobs_fetched"] - before["blobs_fetched"],
        me.stats["chunks_held"] - before["chunks_held"],
        me.store.head(remote),
    )


def pin(driver: Driver, local: str, target: str, selector: Selector) -> PullResult:
    """Pull and keep following ``target`` for later commits."""
    me = _peer(driver, local)
    before = dict(me.stats)
    driver.send(local, me.pin(target, selector))
    driver.settle()
    return PullResult(
        me.stats["commits_applied"] - before["commits_applied"],
        me.stats["blobs_fetched"] - before["blobs_fetched"],
        me.stats["chunks_held"] - before["chunks_held"],
        me.store.head(target),
    )


def unpin(driver: Driver, local: str, target: str) -> None:
    me = _peer(driver, local)
    driver.send(local, me.unpin(target))
    driver.settle()


def commit(driver: Driver, author: str, add=(), remove=()):
    """Commit on ``author`` and deliver the resulting notifications."""
    me = _peer(driver, author)
    c, out = me.commit(add, remove)
    driver.send(author, out)
    driver.settle()
    return c


def federated_query(
    driver: Driver,
    origin: str,
    pattern: Pattern,
    scope: Iterable[str] | None = None,
    hints: FederationState | None = None,
) -> QueryResult:
    """Union of ``pattern`` matches across ``scope``, as seen by ``origin``.

    With ``hints`` only peers the federation index names as candidates are
    contacted.  ``complete`` is False when some targeted peer never answered.
    """
    me = _peer(driver, origin)
    if scope is None:
        scope = set(driver.peers) | set(getattr(driver, "connected", ()))
    targets = set(scope) - {origin}
    if hints is not None:
        targets &= set(hint(hints, pattern))
    qid, out = me.start_query(pattern, targets)
    driver.send(origin, out)
    driver.settle()
    state = me.queries.pop(qid)
    unreached = frozenset(state.targets - set(state.results))
    return QueryResult(me.store.local_query(pattern) | state.quads(), not unreached, unreached, state.targets)

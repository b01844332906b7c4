"""Peer-to-peer replication: envelopes, the peer engine and drivers."""

from __future__ import annotations

from folkfed.sync.driver import (
    Loopback,
    PullResult,
    QueryResult,
    advertise,
    commit,
    federated_query,
    pin,
    pull,
    unpin,
)
from folkfed.sync.peer import Peer, PinRecord, Selector, TreeAdvert
from folkfed.sync.shard import Keyring, ShardChunk, ShardSet, reassemble, shard_out
from folkfed.sync.tcp import TcpDriver
from folkfed.sync.wire import KINDS, Envelope, decode_envelope, encode_envelope, open_envelope, seal

__all__ = [
    "KINDS",
    "Envelope",
    "Keyring",
    "Loopback",
    "Peer",
    "PinRecord",
    "PullResult",
    "QueryResult",
    "Selector",
    "ShardChunk",
    "ShardSet",
    "TcpDriver",
    "TreeAdvert",
    "advertise",
    "commit",
    "decode_envelope",
    "encode_envelope",
    "federated_query",
    "open_envelope",
    "pin",
    "pull",
    "reassemble",
    "seal",
    "shard_out",
    "unpin",
]

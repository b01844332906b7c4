"""Command-line entry point.

Each command loads the local peer (identity, store, config) from the data
directory, calls one library operation and prints its result.  Exit codes
follow the error classes: 0 ok, 1 usage, 2 not found, 3 permission denied,
4 conflict, 5 transport failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, TextIO

from folkfed import __version__
from folkfed.dsl import classify, parse_text, serialize
from folkfed.errors import Conflict, FolkError, NotFound, PermissionDenied, TransportError, UsageError
from folkfed.federation import (
    ACTIVITY_KINDS,
    FederationState,
    Policy,
    check_ratio,
    conservation_holds,
    fulfill_bounty,
    handle_activity,
    make_activity,
    post_bounty,
    rules_from_quads,
    state_from_json,
    state_to_json,
)
from folkfed.identity import (
    HandleTable,
    IdentityRecord,
    SecretHandle,
    decode_record,
    encode_record,
    generate_identity,
    rotate_key,
    rotation_proof,
    secret_from_seed,
)
from folkfed.linkstore import Side, Store
from folkfed.terms import Address, BlobRef, CommitRef, Literal, Pattern, Quad, Term, as_predicate, parse_address
from folkfed.vocab import CONTENT

CONFIG_NAME = "config.json"
IDENTITY_NAME = "identity.fid"
SEED_NAME = "identity.seed"
DEFAULT_LISTEN = "127.0.0.1:7411"


# ---------------------------------------------------------------------------
# configuration and local state


@dataclass
class CliConfig:
    data_dir: Path
    handles: dict[str, str] = field(default_factory=dict)
    transport: str = "tcp"
    listen: str = DEFAULT_LISTEN
    peers: dict[str, str] = field(default_factory=dict)
    pins: dict[str, dict] = field(default_factory=dict)

    @property
    def identity_path(self) -> Path:
        return self.data_dir / IDENTITY_NAME

    @property
    def seed_path(self) -> Path:
        return self.data_dir / SEED_NAME

    @classmethod
    def load(cls, data_dir: Path) -> "CliConfig":
        path = data_dir / CONFIG_NAME
        raw = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
        return cls(
            data_dir,
            dict(raw.get("handles", {})),
            raw.get("transport", "tcp"),
            raw.get("listen", DEFAULT_LISTEN),
            dict(raw.get("peers", {})),
            dict(raw.get("pins", {})),
        )

    def save(self) -> None:
        self.data_dir.mkdir(parents=True, exist_ok=True)
        body = {
            "handles": dict(sorted(self.handles.items())),
            "transport": self.transport,
            "listen": self.listen,
            "peers": dict(sorted(self.peers.items())),
            "pins": dict(sorted(self.pins.items())),
        }
        (self.data_dir / CONFIG_NAME).write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")


def resolve_data_dir(flag: str | None) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get("FOLKFED_DATA_DIR")
    if env:
        return Path(env)
    return Path.home() / ".folkfed"


class Local:
    """The identity, store and config of the peer this process speaks for."""

    def __init__(self, cfg: CliConfig):
        if not cfg.identity_path.exists():
            raise NotFound(f"no identity in {cfg.data_dir}; run 'folkfed id init' first")
        self.cfg = cfg
        self.record: IdentityRecord = decode_record(cfg.identity_path.read_bytes())
        self.secret: SecretHandle = secret_from_seed(bytes.fromhex(cfg.seed_path.read_text().strip()))
        self.me = self.record.peer_id
        self.handles = HandleTable({**cfg.handles, "self": self.me})
        self.store = Store(cfg.data_dir / "store", [self.record], self.handles)

    def address(self, text: str) -> Address:
        """``@peer:path`` with aliases resolved; a bare ``path`` is relative to this peer."""
        try:
            a = parse_address(text if text.startswith("@") else f"@self:{text}")
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return Address(self.store.namespace_of(a), a.segments)

    def peer_id(self, text: str) -> str:
        text = text[1:] if text.startswith("@") else text
        return self.handles.get(text) or text

    def fed_path(self, name: str) -> Path:
        return self.cfg.data_dir / "federations" / f"{name}.json"

    def load_fed(self, name: str) -> FederationState:
        path = self.fed_path(name)
        if not path.exists():
            raise NotFound(f"no federation named {name!r}")
        return state_from_json(json.loads(path.read_text(encoding="utf-8")))

    def save_fed(self, name: str, state: FederationState) -> None:
        path = self.fed_path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(state_to_json(state), indent=2) + "\n", encoding="utf-8")

    def hosted(self) -> dict[str, FederationState]:
        folder = self.cfg.data_dir / "federations"
        return {p.stem: self.load_fed(p.stem) for p in sorted(folder.glob("*.json"))} if folder.exists() else {}

    def make_peer(self, federation: str | None = None):
        from folkfed.sync import Peer

        fed_view: dict[str, list[str]] = {}
        for state in self.hosted().values():
            for m in state.members:
                fed_view.setdefault(m, []).append(state.fed_peer)
        rules = rules_from_quads(self.store.visible(self.me))
        fed = self.load_fed(federation) if federation else None
        return Peer(self.record, self.secret, self.store, rules, fed_view, federation=fed)

    def parse_file(self, path: str) -> frozenset[Quad]:
        text = _read(path)
        return parse_text(text, base=Address(self.me), handles=self.handles)


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise NotFound(f"no such file: {path}") from None
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _object(text: str):
    value = classify(text)
    if not isinstance(value, (Address, BlobRef, CommitRef, Literal, Term)):
        raise UsageError(f"{text!r} is not a standalone value")
    return value


def _hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _emit_quads(quads, fmt: str, out: TextIO) -> None:
    if fmt == "canonical":
        out.write(serialize(quads))
        return
    for q in sorted(quads, key=Quad.sort_key):
        out.write(f"{q.subject} {q.predicate} {q.object}\n")


# ---------------------------------------------------------------------------
# id


def cmd_id_init(args, cfg: CliConfig, out: TextIO) -> int:
    if cfg.identity_path.exists():
        raise Conflict(f"{cfg.identity_path} already exists")
    seed = bytes.fromhex(args.seed) if args.seed else os.urandom(32)
    record, _ = generate_identity(seed, args.handle, args.recovery)
    cfg.data_dir.mkdir(parents=True, exist_ok=True)
    cfg.identity_path.write_bytes(encode_record(record))
    cfg.seed_path.write_text(seed.hex() + "\n")
    os.chmod(cfg.seed_path, 0o600)
    cfg.handles.setdefault(args.handle, record.peer_id)
    cfg.save()
    Store(cfg.data_dir / "store", [record])
    out.write(record.peer_id + "\n")
    return 0


def cmd_id_show(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    r = loc.record
    out.write(f"peer_id {r.peer_id}\n")
    out.write(f"handle {r.display_handle}\n")
    out.write(f"generation {r.generation}\n")
    out.write(f"public_key {r.public_key.hex()}\n")
    if r.recovery_locator:
        out.write(f"recovery {r.recovery_locator}\n")
    return 0


def cmd_id_rotate(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    seed = bytes.fromhex(args.seed) if args.seed else os.urandom(32)
    new_secret = secret_from_seed(seed)
    proof = rotation_proof(loc.secret, loc.record, new_secret.public_key)
    record = rotate_key(loc.record, new_secret.public_key, proof, new_secret)
    loc.store.register_identity(record)
    cfg.identity_path.write_bytes(encode_record(record))
    cfg.seed_path.write_text(seed.hex() + "\n")
    out.write(f"{record.peer_id} generation {record.generation}\n")
    return 0


def cmd_id_export(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    Path(args.output).write_bytes(encode_record(loc.record))
    out.write(args.output + "\n")
    return 0


# ---------------------------------------------------------------------------
# ns


def cmd_ns_put(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    quads = loc.parse_file(args.file)
    foreign = sorted({q.author for q in quads} - {loc.me})
    if foreign:
        raise PermissionDenied("cannot write quads authored by " + ", ".join(foreign))
    attached = set()
    for spec in args.attach or ():
        subject, sep, path = spec.partition("=")
        if not sep:
            raise UsageError(f"--attach expects SUBJECT=FILE, got {spec!r}")
        try:
            data = Path(path).read_bytes()
        except FileNotFoundError:
            raise NotFound(f"no such file: {path}") from None
        ref = loc.store.put_blob(data, "json" if path.endswith(".json") else "bin")
        attached.add(Quad(loc.me, loc.address(subject), CONTENT, ref))
    quads = quads | attached
    current = loc.store.visible(loc.me)
    add = quads - current
    remove = frozenset()
    if args.replace:
        roots = {q.subject.unpinned() for q in quads}
        remove = frozenset(q for q in current if q.subject.unpinned() in roots) - quads
    if not add and not remove:
        out.write(f"{loc.store.head(loc.me) or '-'} unchanged\n")
        return 0
    c = loc.store.commit(loc.me, loc.secret, add, remove)
    out.write(f"{c.id} +{len(c.added)} -{len(c.removed)}\n")
    return 0


def cmd_ns_get(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    rec = loc.store.resolve(loc.address(args.address))
    if not rec.quads:
        raise NotFound(f"nothing at {args.address}")
    _emit_quads(rec.quads, args.format, out)
    return 0


def cmd_ns_log(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    author = loc.peer_id(args.peer) if args.peer else loc.me
    commits = loc.store.log(author)
    if not commits:
        raise NotFound(f"no commits for {author}")
    for c in reversed(commits):
        out.write(f"{c.id} t={c.logical_time} parents={len(c.parents)} +{len(c.added)} -{len(c.removed)}\n")
    return 0


def cmd_ns_diff(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    added, removed = loc.store.diff(args.a, args.b)
    if args.format == "canonical":
        out.write(serialize(added))
        return 0
    for sign, quads in (("-", removed), ("+", added)):
        for q in sorted(quads, key=Quad.sort_key):
            out.write(f"{sign} {q.subject} {q.predicate} {q.object}\n")
    return 0


def cmd_ns_fork(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    c = loc.store.fork(loc.address(args.source), loc.address(args.dest), loc.me, loc.secret)
    out.write(f"{c.id} +{len(c.added)}\n")
    return 0


def _merge_key(text: str):
    key, sep, side = text.rpartition("=")
    path, hash_, pred = key.partition("#")
    if not sep or not hash_ or side not in ("a", "b"):
        raise UsageError(f"--take expects PATH#PREDICATE=a|b, got {text!r}")
    segments = () if path in ("", ".") else tuple(path.split(":"))
    return (segments, pred), Side(side)


def cmd_ns_merge(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    resolution = dict(_merge_key(t) for t in args.take or ())
    dest = loc.address(args.dest) if args.dest else None
    c = loc.store.merge(loc.address(args.a), loc.address(args.b), resolution, loc.me, loc.secret, dest)
    out.write(f"{c.id} +{len(c.added)} -{len(c.removed)}\n")
    return 0


# ---------------------------------------------------------------------------
# fed


def _policy(prev: Policy, args) -> Policy:
    on_receive = dict(prev.on_receive)
    if args.accept_joins:
        on_receive["Join"] = "Accept"
    if args.reject_joins:
        on_receive["Join"] = "Reject"
    return Policy(
        on_receive,
        parse_address(args.allow_schema) if args.allow_schema else prev.allow_schema,
        args.min_ratio if args.min_ratio is not None else prev.min_ratio,
        args.grace_bytes if args.grace_bytes is not None else prev.grace_bytes,
        prev.freeleech | frozenset(parse_address(a).unpinned() for a in args.freeleech or ()),
    )


def _print_policy(p: Policy, out: TextIO) -> None:
    out.write(f"join {p.on_receive.get('Join', 'Reject')}\n")
    out.write(f"min_ratio {p.min_ratio}\n")
    out.write(f"grace_bytes {p.grace_bytes}\n")
    out.write(f"allow_schema {p.allow_schema or '-'}\n")
    for a in sorted(map(str, p.freeleech)):
        out.write(f"freeleech {a}\n")


def cmd_fed_create(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    if loc.fed_path(args.name).exists():
        raise Conflict(f"federation {args.name!r} already exists")
    state = FederationState(loc.me, policy=_policy(Policy(), args))
    loc.save_fed(args.name, state)
    out.write(f"{args.name} {loc.me}\n")
    return 0


def cmd_fed_policy(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    state = loc.load_fed(args.name)
    state = replace(state, policy=_policy(state.policy, args))
    loc.save_fed(args.name, state)
    _print_policy(state.policy, out)
    return 0


def cmd_fed_join(args, cfg: CliConfig, out: TextIO) -> int:
    """Sign an activity (Join by default) and deliver it or write it to a file."""
    from folkfed.sync.peer import activity_json

    loc = Local(cfg)
    payload = loc.parse_file(args.announce) if args.announce else frozenset()
    act = make_activity(args.kind, loc.me, loc.secret, payload)
    body = activity_json(act)
    if args.output:
        body["record"] = encode_record(loc.record).hex()
        Path(args.output).write_text(json.dumps(body, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        out.write(f"{args.kind} activity written to {args.output}\n")
        return 0
    if not args.connect:
        raise UsageError("fed join needs --connect HOST:PORT or -o FILE")
    from folkfed.sync.tcp import TcpDriver

    peer = loc.make_peer()
    with TcpDriver(peer, timeout=args.timeout) as drv:
        fed = drv.connect(*_hostport(args.connect))
        drv.send(loc.me, [peer.send_activity(fed, act)])
        drv.settle()
    if not peer.responses:
        raise TransportError("the federation peer did not answer")
    resp = peer.responses[-1]
    out.write(f"{resp['response']} {resp.get('reason', '')}".rstrip() + "\n")
    if resp["response"] != "Accept":
        raise PermissionDenied(resp.get("reason") or "rejected")
    return 0


def cmd_fed_accept(args, cfg: CliConfig, out: TextIO) -> int:
    """Apply a signed activity file to a federation this peer hosts."""
    from folkfed.sync.peer import activity_from_json

    loc = Local(cfg)
    state = loc.load_fed(args.name)
    body = json.loads(_read(args.activity))
    if "record" in body:
        loc.store.register_identity(decode_record(bytes.fromhex(body["record"])))
    act = activity_from_json(body)
    new, resp = handle_activity(state, act, loc.store.identity_map())
    loc.save_fed(args.name, new)
    out.write(f"{resp.kind} {resp.reason}".rstrip() + "\n")
    if not resp.accepted:
        raise PermissionDenied(resp.reason or "rejected")
    return 0


def cmd_fed_ledger(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    state = loc.load_fed(args.name)
    for m in sorted(state.members):
        out.write(f"member {m}\n")
    for peer, e in sorted(state.ledger.items()):
        gate = "ok" if check_ratio(state, peer) else "blocked"
        out.write(f"ledger {peer} up={e.bytes_up} down={e.bytes_down} spent={e.credits_spent} {gate}\n")
    out.write(f"freeleech_bytes {state.freeleech_bytes}\n")
    out.write(f"bounty_credits {state.bounty_credits}\n")
    out.write(f"conservation {'holds' if conservation_holds(state) else 'VIOLATED'}\n")
    return 0


def cmd_fed_bounty(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    state = loc.load_fed(args.name)
    if args.action == "post":
        if args.credit is None or not args.wanted:
            raise UsageError("bounty post needs --credit and --wanted")
        sponsor = loc.peer_id(args.peer) if args.peer else loc.me
        state = post_bounty(state, sponsor, args.credit, parse_address(args.wanted))
        out.write(state.bounties[-1].id + "\n")
    elif args.action == "fulfill":
        if not args.id or not args.evidence or not args.peer:
            raise UsageError("bounty fulfill needs --id, --peer and --evidence")
        state = fulfill_bounty(state, loc.peer_id(args.peer), args.id, args.evidence)
        out.write(f"{args.id} closed\n")
    else:
        for b in state.bounties:
            status = "open" if b.open else f"closed by {b.fulfiller}"
            out.write(f"{b.id} {b.sponsor} {b.credit_bytes} {b.wanted} {status}\n")
        return 0
    loc.save_fed(args.name, state)
    return 0


# ---------------------------------------------------------------------------
# pin, query, net


def _connect_all(loc: Local, drv, targets: Sequence[str]) -> None:
    for addr in targets:
        remote = drv.connect(*_hostport(addr))
        loc.cfg.peers[remote] = addr


def cmd_pin_add(args, cfg: CliConfig, out: TextIO) -> int:
    from folkfed.sync import Selector, TcpDriver, pin

    loc = Local(cfg)
    root = loc.address(args.target)
    target = root.peer
    where = args.connect or cfg.peers.get(target)
    if not where:
        raise UsageError(f"no known address for {target}; pass --connect HOST:PORT")
    peer = loc.make_peer()
    with TcpDriver(peer, timeout=args.timeout) as drv:
        remote = drv.connect(*_hostport(where))
        if remote != target:
            raise Conflict(f"{where} is {remote}, not {target}")
        result = pin(drv, loc.me, target, Selector(root, not args.no_blobs))
    cfg.peers[target] = where
    cfg.pins[target] = {"root": str(root), "blobs": not args.no_blobs}
    cfg.save()
    out.write(f"{target} head={result.head or '-'} commits={result.commits_applied} blobs={result.blobs_fetched}\n")
    return 0


def cmd_pin_rm(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    target = loc.peer_id(args.target)
    if cfg.pins.pop(target, None) is None:
        raise NotFound(f"no pin on {target}")
    cfg.save()
    out.write(f"unpinned {target}\n")
    return 0


def cmd_pin_ls(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    for target, spec in sorted(cfg.pins.items()):
        out.write(f"{target} {spec['root']} head={loc.store.head(target) or '-'}\n")
    return 0


def cmd_query(args, cfg: CliConfig, out: TextIO) -> int:
    loc = Local(cfg)
    pattern = Pattern(
        loc.peer_id(args.author) if args.author else None,
        loc.address(args.subject) if args.subject else None,
        as_predicate(args.predicate) if args.predicate else None,
        _object(args.object) if args.object else None,
    )
    if not args.connect:
        quads = loc.store.local_query(pattern)
    else:
        from folkfed.sync import TcpDriver, federated_query

        peer = loc.make_peer()
        with TcpDriver(peer, timeout=args.timeout) as drv:
            _connect_all(loc, drv, args.connect)
            result = federated_query(drv, loc.me, pattern)
        quads = result.quads
        if not result.complete:
            out.write(f"# unreached: {', '.join(sorted(result.unreached))}\n")
    _emit_quads(quads, args.format, out)
    return 0


def cmd_net_serve(args, cfg: CliConfig, out: TextIO) -> int:
    from folkfed.sync import Selector, TcpDriver

    loc = Local(cfg)
    peer = loc.make_peer(args.federation)
    listen = args.listen or cfg.listen
    with TcpDriver(peer) as drv:
        host, port = drv.listen(*_hostport(listen))
        out.write(f"listening {host}:{port} as {loc.me}\n")
        out.flush()
        for target, spec in sorted(cfg.pins.items()):
            addr = cfg.peers.get(target)
            if addr is None:
                continue
            try:
                drv.connect(*_hostport(addr))
            except FolkError as exc:
                out.write(f"pin {target}: {exc}\n")
                continue
            with drv.lock:
                outgoing = peer.pin(target, Selector(parse_address(spec["root"]), spec.get("blobs", True)))
            drv.send(loc.me, outgoing)
        try:
            drv.serve_forever(args.duration)
        except KeyboardInterrupt:
            pass
        with drv.lock:
            if args.federation and peer.federation is not None:
                loc.save_fed(args.federation, peer.federation)
    return 0


def cmd_net_connect(args, cfg: CliConfig, out: TextIO) -> int:
    from folkfed.sync import TcpDriver

    loc = Local(cfg)
    with TcpDriver(loc.make_peer()) as drv:
        remote = drv.connect(*_hostport(args.address), timeout=args.timeout)
    cfg.peers[remote] = args.address
    if args.alias:
        cfg.handles[args.alias] = remote
    cfg.save()
    out.write(remote + "\n")
    return 0


# ---------------------------------------------------------------------------
# wf


def _registry(path: str):
    from folkfed.workflow import parse_registry

    return parse_registry(_read(path))


def _load_project(loc: Local, path: str, project: str | None) -> Address:
    """Commit the file's missing quads and return the project address."""
    from folkfed.workflow.model import PROJECT_TYPE

    quads = loc.parse_file(path)
    foreign = sorted({q.author for q in quads} - {loc.me})
    if foreign:
        raise PermissionDenied("project files may only contain your own quads")
    missing = quads - loc.store.visible(loc.me)
    if missing:
        loc.store.commit(loc.me, loc.secret, missing)
    if project:
        return loc.address(project)
    found = sorted({q.subject.unpinned() for q in quads if str(q.predicate) == "a" and q.object == PROJECT_TYPE}, key=str)
    if len(found) != 1:
        raise UsageError(f"{path} declares {len(found)} projects; pick one with --project")
    return found[0]


def _overrides(pairs: Sequence[str] | None) -> dict:
    out = {}
    for p in pairs or ():
        key, sep, value = p.partition("=")
        if not sep:
            raise UsageError(f"expected KEY=VALUE, got {p!r}")
        out[key] = _object(value)
    return out


def cmd_wf_freeze(args, cfg: CliConfig, out: TextIO) -> int:
    from folkfed.workflow import freeze

    loc = Local(cfg)
    project = _load_project(loc, args.project_file, args.project)
    lock = freeze(loc.store, project, _registry(args.registry), _overrides(args.set))
    text = lock.text()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        out.write(f"{lock.hash} {args.output}\n")
    else:
        out.write(text)
    return 0


def cmd_wf_run(args, cfg: CliConfig, out: TextIO) -> int:
    from folkfed.workflow import execute, parse_lockfile

    loc = Local(cfg)
    lock = parse_lockfile(_read(args.lockfile))
    record = execute(lock, loc.store, loc.me)
    for r in record.results:
        where = f" {r.output.hash}" if r.output is not None else ""
        out.write(f"{r.workflow} {r.dataset} {r.step} {r.status}{where}\n")
    if args.commit and record.provenance:
        fresh = record.provenance - loc.store.visible(loc.me)
        if fresh:
            c = loc.store.commit(loc.me, loc.secret, fresh)
            out.write(f"provenance {c.id}\n")
    return 0 if record.ok else 1


def cmd_wf_grid(args, cfg: CliConfig, out: TextIO) -> int:
    from folkfed.workflow import expand_grid

    loc = Local(cfg)
    project = _load_project(loc, args.project_file, args.project)
    grid: dict[str, list] = {}
    for p in args.param or ():
        key, sep, values = p.partition("=")
        if not sep:
            raise UsageError(f"expected KEY=V1,V2,..., got {p!r}")
        grid[key] = [_object(v) for v in values.split(",") if v]
    if not grid:
        raise UsageError("wf grid needs at least one --param")
    locks = expand_grid(loc.store, project, _registry(args.registry), grid)
    folder = Path(args.output)
    folder.mkdir(parents=True, exist_ok=True)
    keys = sorted(grid)
    for i, (lock, combo) in enumerate(zip(locks, itertools.product(*(grid[k] for k in keys)))):
        path = folder / f"grid-{i:03d}.flock"
        path.write_text(lock.text(), encoding="utf-8")
        label = " ".join(f"{k}={v}" for k, v in zip(keys, combo))
        out.write(f"{path.name} {lock.hash} {label}\n")
    return 0


# ---------------------------------------------------------------------------
# sim


def cmd_sim_run(args, cfg: CliConfig, out: TextIO) -> int:
    from folkfed.scenario import run_scenario

    path = Path(args.scenario)
    result = run_scenario(_read(args.scenario), path.parent)
    for line in result.lines:
        out.write(line + "\n")
    if args.trace and result.network is not None:
        Path(args.trace).write_text(result.network.dump_trace(), encoding="utf-8")
    return 0 if result.ok else 1


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=("lines", "canonical"), default="lines")
    timeout = argparse.ArgumentParser(add_help=False)
    timeout.add_argument("--timeout", type=float, default=30.0, help="seconds to wait for the network")

    p = _Parser(prog="folkfed", description="Peer-first federated linked data.")
    p.add_argument("--version", action="version", version=f"folkfed {__version__}")
    p.add_argument("--data-dir", help="peer state directory (default $FOLKFED_DATA_DIR or ~/.folkfed)")
    groups = p.add_subparsers(dest="group", required=True, parser_class=_Parser)

    g = groups.add_parser("id", help="identity").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("init")
    s.add_argument("--handle", default="peer")
    s.add_argument("--recovery")
    s.add_argument("--seed", help="32-byte hex seed (deterministic identities for tests)")
    s.set_defaults(fn=cmd_id_init)
    g.add_parser("show").set_defaults(fn=cmd_id_show)
    s = g.add_parser("rotate")
    s.add_argument("--seed")
    s.set_defaults(fn=cmd_id_rotate)
    s = g.add_parser("export", help="write this identity's .fid record")
    s.add_argument("output")
    s.set_defaults(fn=cmd_id_export)

    g = groups.add_parser("ns", help="namespace").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("put")
    s.add_argument("file")
    s.add_argument("--replace", action="store_true", help="drop existing quads about the file's subjects")
    s.add_argument("--attach", action="append", metavar="SUBJECT=FILE", help="store FILE as SUBJECT's content blob")
    s.set_defaults(fn=cmd_ns_put)
    s = g.add_parser("get", parents=[fmt])
    s.add_argument("address")
    s.set_defaults(fn=cmd_ns_get)
    s = g.add_parser("log")
    s.add_argument("peer", nargs="?")
    s.set_defaults(fn=cmd_ns_log)
    s = g.add_parser("diff", parents=[fmt])
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(fn=cmd_ns_diff)
    s = g.add_parser("fork")
    s.add_argument("source")
    s.add_argument("dest")
    s.set_defaults(fn=cmd_ns_fork)
    s = g.add_parser("merge")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--dest")
    s.add_argument("--take", action="append", metavar="PATH#PREDICATE=a|b")
    s.set_defaults(fn=cmd_ns_merge)

    def policy_flags(sp):
        sp.add_argument("--accept-joins", action="store_true")
        sp.add_argument("--reject-joins", action="store_true")
        sp.add_argument("--min-ratio")
        sp.add_argument("--grace-bytes", type=int)
        sp.add_argument("--freeleech", action="append", metavar="ADDRESS")
        sp.add_argument("--allow-schema", metavar="ADDRESS")

    g = groups.add_parser("fed", help="federations").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("create")
    s.add_argument("name")
    policy_flags(s)
    s.set_defaults(fn=cmd_fed_create)
    s = g.add_parser("policy")
    s.add_argument("name")
    policy_flags(s)
    s.set_defaults(fn=cmd_fed_policy)
    s = g.add_parser("join", parents=[timeout])
    s.add_argument("--connect", metavar="HOST:PORT")
    s.add_argument("-o", "--output", help="write the signed activity to a file instead")
    s.add_argument("--kind", choices=ACTIVITY_KINDS[:4], default="Join")
    s.add_argument("--announce", metavar="FILE.fld", help="quads to announce with the activity")
    s.set_defaults(fn=cmd_fed_join)
    s = g.add_parser("accept")
    s.add_argument("name")
    s.add_argument("activity")
    s.set_defaults(fn=cmd_fed_accept)
    s = g.add_parser("ledger")
    s.add_argument("name")
    s.set_defaults(fn=cmd_fed_ledger)
    s = g.add_parser("bounty")
    s.add_argument("name")
    s.add_argument("action", choices=("ls", "post", "fulfill"))
    s.add_argument("--peer")
    s.add_argument("--credit", type=int)
    s.add_argument("--wanted")
    s.add_argument("--id")
    s.add_argument("--evidence")
    s.set_defaults(fn=cmd_fed_bounty)

    g = groups.add_parser("pin", help="subscriptions").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("add", parents=[timeout])
    s.add_argument("target", help="peer or subtree address, e.g. @alice or @alice:data")
    s.add_argument("--connect", metavar="HOST:PORT")
    s.add_argument("--no-blobs", action="store_true")
    s.set_defaults(fn=cmd_pin_add)
    s = g.add_parser("rm")
    s.add_argument("target")
    s.set_defaults(fn=cmd_pin_rm)
    g.add_parser("ls").set_defaults(fn=cmd_pin_ls)

    s = groups.add_parser("query", parents=[fmt, timeout], help="quad pattern query")
    s.add_argument("--author")
    s.add_argument("--subject")
    s.add_argument("--predicate")
    s.add_argument("--object")
    s.add_argument("--connect", action="append", metavar="HOST:PORT", help="also ask these peers")
    s.set_defaults(fn=cmd_query)

    g = groups.add_parser("wf", help="workflows").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("freeze")
    s.add_argument("project_file")
    s.add_argument("--registry", required=True)
    s.add_argument("--project")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("-o", "--output")
    s.set_defaults(fn=cmd_wf_freeze)
    s = g.add_parser("run")
    s.add_argument("lockfile")
    s.add_argument("--no-commit", dest="commit", action="store_false")
    s.set_defaults(fn=cmd_wf_run)
    s = g.add_parser("grid")
    s.add_argument("project_file")
    s.add_argument("--registry", required=True)
    s.add_argument("--project")
    s.add_argument("--param", action="append", metavar="KEY=V1,V2")
    s.add_argument("-o", "--output", required=True, help="directory for the .flock files")
    s.set_defaults(fn=cmd_wf_grid)

    g = groups.add_parser("net", help="transport").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("serve")
    s.add_argument("--listen", metavar="HOST:PORT")
    s.add_argument("--federation", help="host this federation's activities")
    s.add_argument("--duration", type=float, help="stop after this many seconds")
    s.set_defaults(fn=cmd_net_serve)
    s = g.add_parser("connect", parents=[timeout])
    s.add_argument("address", metavar="HOST:PORT")
    s.add_argument("--alias")
    s.set_defaults(fn=cmd_net_connect)

    g = groups.add_parser("sim", help="simulator").add_subparsers(dest="cmd", required=True)
    s = g.add_parser("run")
    s.add_argument("scenario")
    s.add_argument("--trace", help="write the event trace here")
    s.set_defaults(fn=cmd_sim_run)
    return p


def main(argv: Sequence[str] | None = None, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = CliConfig.load(resolve_data_dir(args.data_dir))
        return args.fn(args, cfg, out)
    except FolkError as exc:
        err.write(f"error: {exc}\n")
        return exc.exit_code
    except ValueError as exc:  # includes JSON and Unicode decoding errors
        err.write(f"error: malformed input: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

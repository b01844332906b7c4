"""Line-oriented scripts that drive the simulator.

One command per line; ``#`` starts a comment.  Peers are named by index.

    network N [seed=S] [latency=K|LO-HI] [drop=P] [grant=full|metadata|encrypted|none]
    commit I SUBJECT PREDICATE VALUE
    blob I SUBJECT SIZE
    random-commits COUNT
    pin I J | pin all
    unpin I J
    partition 0,1 2,3
    heal
    run [MAX_STEPS]
    query I PREDICATE [VALUE]
    expect converged | expect head I J | expect quads I COUNT
    trace PATH

Every peer grants the ``grant`` level to one shared federation that all
peers belong to.  ``network`` must come first.
"""

from __future__ import annotations

import random
import shlex
from dataclasses import dataclass, field
from pathlib import Path

from folkfed.errors import UsageError
from folkfed.federation import Grant, GrantLevel, PermissionRuleSet
from folkfed.simnet import Network, converged, create
from folkfed.sync.driver import federated_query
from folkfed.sync.peer import Peer, Selector
from folkfed.terms import Address, Literal, Pattern, Quad, Term, parse_address
from folkfed.vocab import CONTENT

SIM_FEDERATION = "sim"


@dataclass
class ScenarioResult:
    lines: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    network: Network | None = None

    @property
    def ok(self) -> bool:
        return not self.failures


def _value(text: str):
    if text.startswith("@"):
        return parse_address(text)
    try:
        return Literal.integer(int(text))
    except ValueError:
        return Literal.string(text)


def _int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"{what} must be an integer, not {text!r}") from None


class _Runner:
    def __init__(self, base: Path | None):
        self.base = base
        self.net: Network | None = None
        self.rng = random.Random(0)
        self.result = ScenarioResult()

    def say(self, line: str) -> None:
        self.result.lines.append(line)

    def peer(self, token: str) -> Peer:
        if self.net is None:
            raise UsageError("'network' must come before other commands")
        i = _int(token, "peer index")
        if not 0 <= i < len(self.net.order):
            raise UsageError(f"no peer {i}")
        return self.net.peer(i)

    def commit(self, peer: Peer, quads) -> None:
        _, out = peer.commit(quads)
        self.net.send(peer.peer_id, out)

    # -- commands ------------------------------------------------------------

    def do_network(self, args: list[str]) -> None:
        if self.net is not None:
            raise UsageError("'network' may appear only once")
        if not args:
            raise UsageError("network needs a peer count")
        n = _int(args[0], "peer count")
        opts = dict(a.split("=", 1) for a in args[1:] if "=" in a)
        seed = _int(opts.get("seed", "0"), "seed")
        lat = opts.get("latency", "1")
        latency = tuple(_int(x, "latency") for x in lat.split("-", 1)) if "-" in lat else _int(lat, "latency")
        level = GrantLevel[opts.get("grant", "full").upper()]
        rules = PermissionRuleSet((Grant(SIM_FEDERATION, level),))
        members: dict[str, list[str]] = {}

        def factory(i, record, secret):
            return Peer(record, secret, rules=rules, fed_view=members)

        self.net = create(n, seed, latency, float(opts.get("drop", "0")), factory)
        for pid in self.net.order:
            members[pid] = [SIM_FEDERATION]
        self.rng = random.Random(seed)
        self.say(f"network peers={n} seed={seed}")

    def do_commit(self, args: list[str]) -> None:
        if len(args) != 4:
            raise UsageError("commit I SUBJECT PREDICATE VALUE")
        p = self.peer(args[0])
        q = Quad(p.peer_id, Address(p.peer_id, tuple(args[1].split(":"))), Term(args[2]), _value(args[3]))
        self.commit(p, [q])

    def do_blob(self, args: list[str]) -> None:
        if len(args) != 3:
            raise UsageError("blob I SUBJECT SIZE")
        p = self.peer(args[0])
        data = self.rng.randbytes(_int(args[2], "size"))
        ref = p.store.put_blob(data)
        self.commit(p, [Quad(p.peer_id, Address(p.peer_id, tuple(args[1].split(":"))), CONTENT, ref)])

    def do_random_commits(self, args: list[str]) -> None:
        self.peer("0")
        count = _int(args[0], "count") if args else 1
        for k in range(count):
            p = self.net.peer(self.rng.randrange(len(self.net.order)))
            subject = Address(p.peer_id, (f"item{self.rng.randrange(50)}",))
            self.commit(p, [Quad(p.peer_id, subject, Term("value"), Literal.integer(k))])

    def do_pin(self, args: list[str]) -> None:
        self.peer("0")
        if args == ["all"]:
            pairs = [(i, j) for i in range(len(self.net.order)) for j in range(len(self.net.order)) if i != j]
        elif len(args) == 2:
            pairs = [(_int(args[0], "peer index"), _int(args[1], "peer index"))]
        else:
            raise UsageError("pin I J | pin all")
        for i, j in pairs:
            me, target = self.peer(str(i)), self.peer(str(j))
            self.net.send(me.peer_id, me.pin(target.peer_id, Selector(Address(target.peer_id))))

    def do_unpin(self, args: list[str]) -> None:
        me, target = self.peer(args[0]), self.peer(args[1])
        self.net.send(me.peer_id, me.unpin(target.peer_id))

    def do_partition(self, args: list[str]) -> None:
        self.peer("0")
        groups = [[_int(x, "peer index") for x in g.split(",") if x] for g in args]
        self.net.partition(groups)
        self.say("partition " + " | ".join(",".join(map(str, g)) for g in groups))

    def do_heal(self, args: list[str]) -> None:
        self.peer("0")
        self.net.heal()
        self.say("heal")

    def do_run(self, args: list[str]) -> None:
        self.peer("0")
        m = self.net.run_until_quiescent(_int(args[0], "max steps") if args else 100_000)
        self.say(
            f"run steps={m.steps} envelopes={m.envelopes} bytes={m.bytes} drops={m.drops} "
            f"blocked={m.blocked} quiescent={'yes' if m.quiescent else 'no'}"
        )

    def do_query(self, args: list[str]) -> None:
        if len(args) not in (2, 3):
            raise UsageError("query I PREDICATE [VALUE]")
        p = self.peer(args[0])
        pattern = Pattern(predicate=Term(args[1]), object=_value(args[2]) if len(args) == 3 else None)
        r = federated_query(self.net, p.peer_id, pattern)
        self.say(f"query {args[0]} {args[1]} quads={len(r.quads)} complete={'yes' if r.complete else 'no'}")

    def do_expect(self, args: list[str]) -> None:
        if not args:
            raise UsageError("expect what?")
        what = args[0]
        if what == "converged":
            ok = converged(self.net)
        elif what == "head" and len(args) == 3:
            me, target = self.peer(args[1]), self.peer(args[2])
            ok = me.store.head(target.peer_id) == target.store.head(target.peer_id)
        elif what == "quads" and len(args) == 3:
            ok = len(self.peer(args[1]).store.all_visible()) == _int(args[2], "count")
        else:
            raise UsageError(f"unknown expectation {' '.join(args)!r}")
        text = "expect " + " ".join(args)
        self.say(f"{text}: {'pass' if ok else 'FAIL'}")
        if not ok:
            self.result.failures.append(text)

    def do_trace(self, args: list[str]) -> None:
        self.peer("0")
        path = Path(args[0])
        if self.base is not None and not path.is_absolute():
            path = self.base / path
        path.write_text(self.net.dump_trace(), encoding="utf-8")
        self.say(f"trace {len(self.net.trace)} events")


def run_scenario(text: str, base: Path | None = None) -> ScenarioResult:
    """Execute a scenario script; relative ``trace`` paths resolve against ``base``."""
    runner = _Runner(base)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        cmd, *args = shlex.split(line)
        handler = getattr(runner, "do_" + cmd.replace("-", "_"), None)
        if handler is None:
            raise UsageError(f"line {lineno}: unknown command {cmd!r}")
        try:
            handler(args)
        except (UsageError, KeyError, ValueError) as exc:
            raise UsageError(f"line {lineno}: {exc}") from None
    runner.result.network = runner.net
    return runner.result

from __future__ import annotations

import io
import json
import socket
import subprocess
import sys
from pathlib import Path

import pytest

from conftest import DATASETS, FIXTURES, fixture_text
from folkfed.cli import main
from folkfed.dsl import parse_text, serialize
from folkfed.errors import UsageError
from folkfed.identity import HandleTable, decode_record, generate_identity
from folkfed.linkstore import Store
from folkfed.scenario import run_scenario
from folkfed.terms import Address
from folkfed.workflow import execute, freeze, parse_lockfile, parse_registry

GOLDEN = Path(__file__).parent / "golden"
SEED = "11" * 32
OTHER_SEED = "22" * 32


def cli(data: Path, *argv: str) -> tuple[int, str, str]:
    out, err = io.StringIO(), io.StringIO()
    code = main(["--data-dir", str(data), *argv], out, err)
    return code, out.getvalue(), err.getvalue()


def golden(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8")


@pytest.fixture
def home(tmp_path):
    data = tmp_path / "jonny"
    code, out, _ = cli(data, "id", "init", "--handle", "jonny", "--seed", SEED)
    assert code == 0
    return data


def peer_id(seed_hex: str, handle: str = "jonny") -> str:
    return generate_identity(bytes.fromhex(seed_hex), handle)[0].peer_id


# -- identity --------------------------------------------------------------------------


def test_id_init_and_show(home):
    code, out, _ = cli(home, "id", "show")
    assert code == 0
    assert out == golden("id-show.txt")
    assert out.splitlines()[0] == f"peer_id {peer_id(SEED)}"


def test_id_init_twice_is_a_conflict(home):
    code, _, err = cli(home, "id", "init", "--seed", SEED)
    assert code == 4 and err.startswith("error:")


def test_commands_without_identity_are_not_found(tmp_path):
    assert cli(tmp_path / "empty", "id", "show")[0] == 2


def test_id_rotate_keeps_peer_id(home, tmp_path):
    code, out, _ = cli(home, "id", "rotate", "--seed", OTHER_SEED)
    assert code == 0 and out == f"{peer_id(SEED)} generation 1\n"
    cli(home, "id", "export", str(tmp_path / "me.fid"))
    rec = decode_record((tmp_path / "me.fid").read_bytes())
    assert rec.peer_id == peer_id(SEED) and rec.generation == 1


def test_data_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FOLKFED_DATA_DIR", str(tmp_path / "env"))
    out = io.StringIO()
    assert main(["id", "init", "--seed", SEED], out, io.StringIO()) == 0
    assert (tmp_path / "env" / "identity.fid").exists()


# -- usage errors ----------------------------------------------------------------------------


@pytest.mark.parametrize(
    "argv",
    [["fly"], ["id"], ["ns", "get"], ["ns", "get", "x", "--format", "xml"], ["wf", "freeze", "p.fld"]],
)
def test_bad_commands_exit_1(home, argv):
    assert cli(home, *argv)[0] == 1


# -- namespaces -----------------------------------------------------------------------------


def test_ns_put_get_canonical_golden(home):
    code, out, _ = cli(home, "ns", "put", str(FIXTURES / "my-data.fld"))
    assert code == 0 and out.endswith(" +6 -0\n")
    code, out, _ = cli(home, "ns", "get", "@self:my-data", "--format=canonical")
    assert code == 0
    assert out == golden("my-data.canonical.fld")
    # the command reproduces the direct library call
    me = peer_id(SEED)
    handles = HandleTable({"jonny": me})
    store = Store(home / "store", [decode_record((home / "identity.fid").read_bytes())], handles)
    assert out == serialize(store.resolve(Address(me, ("my-data",))).quads)
    assert parse_text(out) == parse_text(fixture_text("my-data.fld"), handles=handles)


def test_ns_put_is_idempotent(home):
    cli(home, "ns", "put", str(FIXTURES / "my-data.fld"))
    code, out, _ = cli(home, "ns", "put", str(FIXTURES / "my-data.fld"))
    assert code == 0 and out.endswith(" unchanged\n")


def test_ns_get_lines_format(home):
    cli(home, "ns", "put", str(FIXTURES / "my-data.fld"))
    code, out, _ = cli(home, "ns", "get", "my-data")
    assert code == 0 and out == golden("my-data.lines.txt")


def test_ns_get_missing_is_not_found(home):
    assert cli(home, "ns", "get", "@self:nothing-here")[0] == 2
    assert cli(home, "ns", "put", "/no/such/file.fld")[0] == 2


def test_ns_put_foreign_quads_is_denied(home, tmp_path):
    other = peer_id(OTHER_SEED, "x")
    f = tmp_path / "foreign.fld"
    f.write_text(f"@base @{other}\n\n<#thing>\n  value 1\n", encoding="utf-8")
    assert cli(home, "ns", "put", str(f))[0] == 3


def test_ns_log_fork_and_diff(home):
    cli(home, "ns", "put", str(FIXTURES / "my-data.fld"))
    code, out, _ = cli(home, "ns", "fork", "my-data", "copy")
    # six rebased quads plus the fork-of link
    assert code == 0 and out.endswith(" +7\n")
    code, out, _ = cli(home, "ns", "log")
    assert code == 0
    newest, oldest = [l.split()[0] for l in out.splitlines()]
    code, out, _ = cli(home, "ns", "diff", oldest, newest)
    assert code == 0 and len(out.splitlines()) == 7 and all(l.startswith("+ ") for l in out.splitlines())
    assert cli(home, "ns", "diff", newest, newest)[1] == ""


# -- federations ----------------------------------------------------------------------------


def test_federation_join_by_file(home, tmp_path):
    alice = tmp_path / "alice"
    cli(alice, "id", "init", "--handle", "alice", "--seed", OTHER_SEED)
    assert cli(home, "fed", "create", "lab")[0] == 0
    act = tmp_path / "join.json"
    assert cli(alice, "fed", "join", "-o", str(act))[0] == 0
    code, out, _ = cli(home, "fed", "accept", "lab", str(act))
    assert code == 3 and out.startswith("Reject")
    cli(home, "fed", "policy", "lab", "--accept-joins")
    code, out, _ = cli(home, "fed", "accept", "lab", str(act))
    assert code == 0 and out == "Accept\n"
    code, out, _ = cli(home, "fed", "ledger", "lab")
    assert code == 0
    assert out.splitlines()[0] == f"member {peer_id(OTHER_SEED, 'alice')}"
    assert out.splitlines()[-1] == "conservation holds"
    assert cli(home, "fed", "create", "lab")[0] == 4
    assert cli(home, "fed", "ledger", "nope")[0] == 2


# -- transport ------------------------------------------------------------------------------


def _closed_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_connect_to_closed_port_is_transport_failure(home):
    port = _closed_port()
    assert cli(home, "net", "connect", f"127.0.0.1:{port}", "--timeout", "1")[0] == 5


def test_pin_and_query_over_tcp(home, tmp_path):
    cli(home, "ns", "put", str(FIXTURES / "my-data.fld"))
    bob = tmp_path / "bob"
    cli(bob, "id", "init", "--handle", "bob", "--seed", OTHER_SEED)
    # bob joins a federation hosted by jonny, which jonny shares data with
    cli(home, "fed", "create", "lab", "--accept-joins")
    cli(bob, "fed", "join", "-o", str(tmp_path / "join.json"))
    assert cli(home, "fed", "accept", "lab", str(tmp_path / "join.json"))[0] == 0
    perms = tmp_path / "perms.fld"
    perms.write_text(
        "@base @jonny\n\n<#perms>\n  a @fed:Permissions\n  permissionsFor @jonny\n"
        "  federatedWith\n    name @jonny\n    @fed:shareData\n",
        encoding="utf-8",
    )
    assert cli(home, "ns", "put", str(perms))[0] == 0
    proc = subprocess.Popen(
        [sys.executable, "-m", "folkfed", "--data-dir", str(home), "net", "serve", "--listen", "127.0.0.1:0", "--duration", "20"],
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        banner = proc.stdout.readline().split()
        assert banner[0] == "listening"
        where = banner[1]
        code, out, _ = cli(bob, "pin", "add", f"@{peer_id(SEED)}", "--connect", where, "--no-blobs")
        assert code == 0 and "commits=2" in out
        code, out, _ = cli(bob, "pin", "ls")
        assert code == 0 and out.startswith(peer_id(SEED))
        code, local, _ = cli(bob, "query", "--author", peer_id(SEED))
        handles = HandleTable({"jonny": peer_id(SEED)})
        expected = parse_text(fixture_text("my-data.fld"), handles=handles) | parse_text(perms.read_text(), handles=handles)
        assert code == 0 and len(local.splitlines()) == len(expected) == 11
        code, remote, _ = cli(bob, "query", "--predicate", "a", "--connect", where)
        assert code == 0 and "@nwb:NWBFile" in remote
        assert cli(bob, "pin", "rm", peer_id(SEED))[0] == 0
        assert cli(bob, "pin", "rm", peer_id(SEED))[0] == 2
    finally:
        proc.terminate()
        proc.wait(10)


# -- workflows ------------------------------------------------------------------------------


def _seed_datasets(home: Path, tmp_path: Path) -> None:
    for name, versions, data in DATASETS:
        for v in versions:
            blob = tmp_path / f"{name}-{v}.json"
            blob.write_text(json.dumps(data), encoding="utf-8")
            fld = tmp_path / f"{name}-{v}.fld"
            fld.write_text(f"@base @jonny\n\n<#{name}>\n  @fed:version v{v}\n", encoding="utf-8")
            code, _, err = cli(home, "ns", "put", str(fld), "--attach", f"{name}:raw={blob}")
            assert code == 0, err


def test_wf_freeze_twice_is_byte_identical(home, tmp_path):
    _seed_datasets(home, tmp_path)
    project = str(FIXTURES / "builtin-project.fld")
    reg = str(FIXTURES / "registry.txt")
    a, b = tmp_path / "a.flock", tmp_path / "b.flock"
    assert cli(home, "wf", "freeze", project, "--registry", reg, "-o", str(a))[0] == 0
    assert cli(home, "wf", "freeze", project, "--registry", reg, "-o", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    # and it matches the library call on the same store
    me = peer_id(SEED)
    store = Store(home / "store", [decode_record((home / "identity.fid").read_bytes())], HandleTable({"jonny": me}))
    lock = freeze(store, Address(me, ("builtin-project",)), parse_registry(fixture_text("registry.txt")))
    assert a.read_text(encoding="utf-8") == lock.text()
    assert len(lock.datasets) == 3


def test_wf_run_and_grid(home, tmp_path):
    _seed_datasets(home, tmp_path)
    project = str(FIXTURES / "builtin-project.fld")
    reg = str(FIXTURES / "registry.txt")
    lockfile = tmp_path / "p.flock"
    cli(home, "wf", "freeze", project, "--registry", reg, "-o", str(lockfile))
    code, out, _ = cli(home, "wf", "run", str(lockfile), "--no-commit")
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 6 and all(" ok " in l for l in lines)
    me = peer_id(SEED)
    store = Store(home / "store", [decode_record((home / "identity.fid").read_bytes())], HandleTable({"jonny": me}))
    record = execute(parse_lockfile(lockfile.read_text(encoding="utf-8")), store, me)
    assert sorted(l.split()[-1] for l in lines) == sorted(r.output.hash for r in record.results)
    code, out, _ = cli(home, "wf", "grid", project, "--registry", reg, "--param", "Step1:params:bin_width=2,3", "-o", str(tmp_path / "grid"))
    assert code == 0 and len(out.splitlines()) == 2
    assert sorted(p.name for p in (tmp_path / "grid").iterdir()) == ["grid-000.flock", "grid-001.flock"]
    assert cli(home, "wf", "run", str(tmp_path / "missing.flock"))[0] == 2


# -- simulator --------------------------------------------------------------------------------


def test_sim_run_matches_library(home, tmp_path):
    script = tmp_path / "s.txt"
    script.write_text("network 3 seed=4\npin all\nrandom-commits 5\nrun\nexpect converged\n", encoding="utf-8")
    code, out, _ = cli(home, "sim", "run", str(script), "--trace", str(tmp_path / "t.tsv"))
    assert code == 0
    result = run_scenario(script.read_text(encoding="utf-8"), tmp_path)
    assert out == "".join(l + "\n" for l in result.lines)
    assert (tmp_path / "t.tsv").read_text(encoding="utf-8") == result.network.dump_trace()


def test_sim_run_bad_script(home, tmp_path):
    script = tmp_path / "s.txt"
    script.write_text("network 2\nexplode\n", encoding="utf-8")
    assert cli(home, "sim", "run", str(script))[0] == 1
    with pytest.raises(UsageError):
        run_scenario("explode\n")

from __future__ import annotations

import pytest

from folkfed.errors import UsageError
from folkfed.scenario import run_scenario

CONVERGE = """
# four peers, everyone follows everyone
network 4 seed=7 latency=1-4 drop=0.1
pin all
random-commits 25
blob 2 raw 5000
run
expect converged
expect head 0 2
query 1 value
"""


def test_convergence_script_passes(tmp_path):
    result = run_scenario(CONVERGE + "trace out.tsv\n", base=tmp_path)
    assert result.ok, result.failures
    assert result.lines[0] == "network peers=4 seed=7"
    assert any(l.startswith("run steps=") and l.endswith("quiescent=yes") for l in result.lines)
    assert "expect converged: pass" in result.lines
    assert (tmp_path / "out.tsv").read_text().count("\n") == len(result.network.trace)


def test_script_is_deterministic():
    assert run_scenario(CONVERGE).lines == run_scenario(CONVERGE).lines


def test_partition_script_reports_failures_before_heal():
    text = """
network 3 seed=1
pin 1 0
pin 2 0
run
partition 0 1,2
commit 0 x v 1
run
expect head 1 0
heal
run
expect head 1 0
expect head 2 0
"""
    result = run_scenario(text)
    assert result.failures == ["expect head 1 0"]
    assert result.lines.count("expect head 1 0: pass") == 1


def test_metadata_grant_replicates_quads_only():
    result = run_scenario("network 2 grant=metadata\npin 1 0\nblob 0 raw 100\ncommit 0 x v 1\nrun\nexpect quads 1 2\n")
    assert result.ok
    peer1, peer0 = result.network.peer(1), result.network.peer(0)
    assert peer0.store.blob_digests() and not peer1.store.blob_digests()


@pytest.mark.parametrize(
    "text",
    [
        "pin all",
        "network 2\nnetwork 2",
        "network x",
        "network 2\nfly away",
        "network 2\ncommit 5 x v 1",
        "network 2\nexpect nonsense",
        "network 2\npartition 0,1 1",
    ],
)
def test_bad_scripts_raise_usage_errors(text):
    with pytest.raises(UsageError):
        run_scenario(text)

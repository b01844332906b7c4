"""Executing lockfiles with registered executors.

Step data moves as canonical JSON blobs.  Outputs land under each dataset's
planned output address, and provenance quads tie every output blob back to
the lockfile, its step and its input snapshot.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Callable, Mapping

from folkfed.errors import FolkError, NotFound, UsageError
from folkfed.linkstore import Store
from folkfed.terms import Address, BlobRef, CommitRef, Literal, Object, Quad, Term
from folkfed.vocab import CONTENT, DERIVED_FROM, GENERATED_BY, LOCK_HASH, OUTPUT
from folkfed.workflow.dag import topo_order
from folkfed.workflow.lock import LockedStep, Lockfile

Executor = Callable[..., Any]


class ExecutionError(FolkError):
    exit_code = 1


def _numbers(x) -> list:
    if not isinstance(x, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in x):
        raise ExecutionError("expected a flat list of numbers")
    return x


def builtin_bin(series, bin_width: int = 10):
    """Sums of consecutive full windows; a trailing partial window is dropped."""
    series = _numbers(series)
    if not isinstance(bin_width, int) or bin_width < 1:
        raise ExecutionError("bin_width must be a positive integer")
    full = len(series) // bin_width
    return [sum(series[i * bin_width: (i + 1) * bin_width]) for i in range(full)]


def builtin_mean(series):
    series = _numbers(series)
    if not series:
        raise ExecutionError("mean of an empty series")
    return math.fsum(series) / len(series)


def builtin_grayscale(image):
    """Average every innermost triple, e.g. ``[[r, g, b], ...]`` to ``[y, ...]``."""
    if isinstance(image, list) and len(image) == 3 and all(isinstance(v, (int, float)) for v in image):
        return math.fsum(image) / 3
    if isinstance(image, list):
        return [builtin_grayscale(v) for v in image]
    raise ExecutionError("grayscale expects nested lists ending in RGB triples")


def builtin_identity(data):
    return data


BUILTINS: dict[str, Executor] = {
    "builtin:bin": builtin_bin,
    "builtin:mean": builtin_mean,
    "builtin:grayscale": builtin_grayscale,
    "builtin:identity": builtin_identity,
}


def canonical_bytes(value) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _param_value(obj: Object):
    if isinstance(obj, Literal):
        value = obj.value
        if isinstance(value, Decimal):
            return float(value)
        return list(value) if isinstance(value, (tuple, list)) else value
    return str(obj)


@dataclass
class StepResult:
    workflow: str
    step: str
    dataset: Address
    status: str
    output: BlobRef | None = None
    address: Address | None = None


@dataclass
class RunRecord:
    lock_hash: str
    results: list[StepResult] = field(default_factory=list)
    provenance: frozenset[Quad] = frozenset()

    @property
    def ok(self) -> bool:
        return all(r.status in ("ok", "cached") for r in self.results)

    def outputs(self) -> dict[tuple[str, str, str], str]:
        return {(r.workflow, str(r.dataset), r.step): r.output.hash for r in self.results if r.output is not None}


def _input_value(store: Store, snapshot: CommitRef) -> Any:
    quads = store.visible_at(snapshot.commit)
    root = snapshot.address
    blobs = sorted(
        (q.object for q in quads if q.subject.unpinned() == root and q.predicate == CONTENT and isinstance(q.object, BlobRef)),
        key=lambda b: b.hash,
    )
    if not blobs:
        raise NotFound(f"dataset {root} at {snapshot.commit[:12]} has no content blob")
    return json.loads(store.get_blob(blobs[0]).decode("utf-8"))


def execute(
    lock: Lockfile,
    store: Store,
    author: str,
    executors: Mapping[str, Executor] | None = None,
    cache: dict[str, str] | None = None,
) -> RunRecord:
    """Run every workflow of ``lock`` over each of its datasets.

    Repository-provided steps are refused.  A failing step marks its
    downstream steps ``skipped``.  ``cache`` maps (step, inputs, params)
    keys to output blob hashes and is consulted before running.
    """
    executors = BUILTINS if executors is None else executors
    cache = {} if cache is None else cache
    record = RunRecord(lock.hash)
    prov: set[Quad] = set()
    L = lock.address
    for ds in lock.datasets:
        steps = {s.name: s for s in lock.workflow_steps(ds.workflow)}
        deps = {n: [i for i in s.inputs if i != "input"] for n, s in steps.items()}
        order = topo_order(steps, deps)
        values: dict[str, BlobRef] = {}
        failed: set[str] = set()
        try:
            raw = _input_value(store, ds.snapshot)
            source = store.put_blob(canonical_bytes(raw), "json")
        except (FolkError, ValueError) as exc:
            for n in order:
                record.results.append(StepResult(ds.workflow, n, ds.requested, f"failed: {exc}"))
            continue
        prov.add(Quad(author, lock.project, OUTPUT, ds.output))
        prov.add(Quad(author, ds.output, DERIVED_FROM, ds.snapshot))
        prov.add(Quad(author, ds.output, GENERATED_BY, L))
        prov.add(Quad(author, ds.output, LOCK_HASH, Literal.string(lock.hash)))
        for n in order:
            step = steps[n]
            if any(d in failed for d in deps[n]):
                failed.add(n)
                record.results.append(StepResult(ds.workflow, n, ds.requested, "skipped"))
                continue
            inputs = [source if i == "input" else values[i] for i in step.inputs]
            try:
                ref, status = _run_step(step, inputs, store, executors, cache)
            except (FolkError, ValueError, TypeError) as exc:
                failed.add(n)
                record.results.append(StepResult(ds.workflow, n, ds.requested, f"failed: {exc}"))
                continue
            values[n] = ref
            where = ds.output.child(n)
            record.results.append(StepResult(ds.workflow, n, ds.requested, status, ref, where))
            prov |= {
                Quad(author, ds.output, OUTPUT, where),
                Quad(author, where, CONTENT, ref),
                Quad(author, where, GENERATED_BY, L.child(ds.workflow, n)),
                Quad(author, where, LOCK_HASH, Literal.string(lock.hash)),
                Quad(author, where, Term("step"), Term(n)),
            }
            for i in step.inputs:
                prov.add(Quad(author, where, DERIVED_FROM, ds.snapshot if i == "input" else ds.output.child(i)))
        sinks = [n for n in order if n in values and not any(n in deps[m] for m in order)]
        for n in sinks:
            prov.add(Quad(author, ds.output, CONTENT, values[n]))
    record.provenance = frozenset(prov)
    return record


def _run_step(step: LockedStep, inputs: list[BlobRef], store: Store, executors, cache) -> tuple[BlobRef, str]:
    if step.kind != "builtin":
        raise ExecutionError("external execution not supported")
    fn = executors.get(step.entrypoint)
    if fn is None:
        raise NotFound(f"no executor registered for {step.entrypoint}")
    params = {name: _param_value(v) for name, v in step.params}
    key = hashlib.sha256(
        canonical_bytes([step.entrypoint, step.provided_hash, [r.hash for r in inputs], params])
    ).hexdigest()
    hit = cache.get(key)
    if hit is not None and store.has_blob(hit):
        data = store.get_blob(hit)
        return BlobRef(hit, len(data), "json"), "cached"
    args = [json.loads(store.get_blob(r).decode("utf-8")) for r in inputs]
    try:
        out = fn(*args, **params)
    except ExecutionError:
        raise
    except Exception as exc:  # executor bugs become step failures
        raise ExecutionError(f"{step.name} raised {type(exc).__name__}: {exc}") from exc
    try:
        ref = store.put_blob(canonical_bytes(out), "json")
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{step.name} produced a value that is not JSON: {exc}") from None
    cache[key] = ref.hash
    return ref, "ok"

"""Pure-Python kernels; the reference the compiled module must agree with."""

from __future__ import annotations

EXACT, CARET, TILDE, GE, LE, GT, LT = range(7)


def match_version(version, op, pattern):
    n = max(len(version), len(pattern))
    padded = tuple(version) + (0,) * (n - len(version))
    if op == EXACT:
        for i, p in enumerate(pattern):
            if p is not None and padded[i] != p:
                return False
        return True
    lower = tuple(0 if p is None else p for p in pattern) + (0,) * (n - len(pattern))
    if op == GE:
        return padded >= lower
    if op == GT:
        return padded > lower
    if op == LE:
        return padded <= lower
    if op == LT:
        return padded < lower
    if padded < lower:
        return False
    if op == CARET:
        fixed = -1
        for i, p in enumerate(pattern):
            if p is not None:
                fixed = i
                if p != 0:
                    break
    else:
        fixed = max(len(pattern) - 2, 0)
    for i in range(fixed + 1):
        p = pattern[i]
        if p is not None and padded[i] != p:
            return False
    return True


def encode_rows(rows):
    lines = sorted("\x1f".join(row).encode("utf-8") for row in rows)
    return b"\n".join(lines)


def filter_rows(rows, author, subject, predicate, tag, obj):
    out = []
    for i, row in enumerate(rows):
        if author is not None and row[0] != author:
            continue
        if subject is not None and row[1] != subject:
            continue
        if predicate is not None and row[2] != predicate:
            continue
        if tag is not None and (row[3] != tag or row[4] != obj):
            continue
        out.append(i)
    return out

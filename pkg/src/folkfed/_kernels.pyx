# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled kernels; behaviour must match folkfed._kernels_py exactly."""

cdef enum:
    EXACT = 0
    CARET = 1
    TILDE = 2
    GE = 3
    LE = 4
    GT = 5
    LT = 6


cdef int _cmp(tuple version, tuple pattern, Py_ssize_t n):
    # lexicographic compare with zero padding, wildcard read as 0
    cdef Py_ssize_t i
    cdef long v, p
    for i in range(n):
        v = version[i] if i < len(version) else 0
        if i < len(pattern):
            obj = pattern[i]
            p = 0 if obj is None else obj
        else:
            p = 0
        if v < p:
            return -1
        if v > p:
            return 1
    return 0


def match_version(tuple version, int op, tuple pattern):
    cdef Py_ssize_t n = max(len(version), len(pattern))
    cdef Py_ssize_t i, fixed
    cdef long v
    cdef int c
    if op == EXACT:
        for i in range(len(pattern)):
            obj = pattern[i]
            if obj is None:
                continue
            v = version[i] if i < len(version) else 0
            if v != <long>obj:
                return False
        return True
    c = _cmp(version, pattern, n)
    if op == GE:
        return c >= 0
    if op == GT:
        return c > 0
    if op == LE:
        return c <= 0
    if op == LT:
        return c < 0
    if c < 0:
        return False
    if op == CARET:
        fixed = -1
        for i in range(len(pattern)):
            obj = pattern[i]
            if obj is not None:
                fixed = i
                if obj != 0:
                    break
    else:
        fixed = len(pattern) - 2
        if fixed < 0:
            fixed = 0
    for i in range(fixed + 1):
        obj = pattern[i]
        if obj is None:
            continue
        v = version[i] if i < len(version) else 0
        if v != <long>obj:
            return False
    return True


def encode_rows(rows):
    cdef list lines = []
    for row in rows:
        lines.append("\x1f".join(row).encode("utf-8"))
    lines.sort()
    return b"\n".join(lines)


def filter_rows(list rows, author, subject, predicate, tag, obj):
    cdef list out = []
    cdef Py_ssize_t i
    cdef tuple row
    for i in range(len(rows)):
        row = <tuple>rows[i]
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

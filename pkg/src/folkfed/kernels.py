"""Hot-loop kernels: compiled when the extension is built, Python otherwise.

Set ``FOLKFED_PURE_PYTHON=1`` to force the fallback (used by the benchmark
and by the parity tests).
"""

from __future__ import annotations

import os

from folkfed import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("FOLKFED_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from folkfed import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

match_version = _impl.match_version
encode_rows = _impl.encode_rows
filter_rows = _impl.filter_rows

__all__ = ["BACKEND", "match_version", "encode_rows", "filter_rows"]

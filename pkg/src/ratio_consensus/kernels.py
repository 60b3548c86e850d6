"""Select the round kernel at import time.

The compiled extension is used when it was built; set
``RATIO_CONSENSUS_PURE_PYTHON=1`` to force the numpy fallback.
"""
from __future__ import annotations

import os

from . import _kernel_py

python_advance = _kernel_py.advance

try:
    from ._kernel import advance as compiled_advance
except ImportError:  # extension not built
    compiled_advance = None

if compiled_advance is not None and os.environ.get("RATIO_CONSENSUS_PURE_PYTHON") != "1":
    advance = compiled_advance
    BACKEND = "compiled"
else:
    advance = python_advance
    BACKEND = "python"


def get_advance(backend: str | None = None):
    """Kernel for ``backend`` ("compiled", "python") or the import-time default."""
    if backend is None:
        return advance
    if backend == "python":
        return python_advance
    if backend == "compiled":
        if compiled_advance is None:
            raise ImportError("compiled kernel not built; run `pip install -e .`")
        return compiled_advance
    raise ValueError(f"unknown backend {backend!r}")

"""Backend selection for the hot kernels.

The compiled extension is preferred when it imports; the numpy fallback is
always available. ``CLASSIGRAPH_BACKEND`` (``auto``/``compiled``/``fallback``)
pins the choice at import time, ``set_backend`` switches at runtime (used by
the cross-backend tests and the benchmark). Call sites go through the
module-level names, which always point at the active backend.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels  # type: ignore[attr-defined]
except ImportError:  # extension not built
    _kernels = None

HAAR_TWO_HORIZ = _kernels_py.HAAR_TWO_HORIZ
HAAR_TWO_VERT = _kernels_py.HAAR_TWO_VERT
HAAR_THREE = _kernels_py.HAAR_THREE
HAAR_FOUR = _kernels_py.HAAR_FOUR

_FUNCTIONS = (
    "sigmoid",
    "logit_score",
    "box_sums",
    "haar_response",
    "haar_many",
    "cell_hist",
    "cell_hist_many",
)

_active = None


def available_backends() -> tuple[str, ...]:
    return ("compiled", "fallback") if _kernels is not None else ("fallback",)


def backend_name() -> str:
    return _active.BACKEND


def set_backend(name: str) -> str:
    """Activate a backend by name; returns the previously active one."""
    global _active
    if name == "auto":
        name = "compiled" if _kernels is not None else "fallback"
    if name == "compiled":
        if _kernels is None:
            raise RuntimeError("compiled kernels are not available")
        module = _kernels
    elif name == "fallback":
        module = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    previous = _active.BACKEND if _active is not None else None
    _active = module
    for fn in _FUNCTIONS:
        globals()[fn] = getattr(module, fn)
    return previous


set_backend(os.environ.get("CLASSIGRAPH_BACKEND", "auto"))

"""Backend selection for the hot loops.

The compiled extension ``_ckernels`` is used when it imports; otherwise the NumPy
reference code runs. ``DOPPLERSYNC_BACKEND=python`` forces the fallback, and every
entry point also takes an explicit ``backend`` argument ("compiled" / "python").
"""

from __future__ import annotations

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None

HAVE_COMPILED = _ckernels is not None


def default_backend() -> str:
    forced = os.environ.get("DOPPLERSYNC_BACKEND", "").strip().lower()
    if forced in ("python", "compiled"):
        return forced
    return "compiled" if HAVE_COMPILED else "python"


BACKEND = default_backend()


def _use_compiled(backend: str | None) -> bool:
    choice = backend or BACKEND
    if choice == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels requested but dopplersync._ckernels is not built")
        return True
    if choice != "python":
        raise ValueError(f"unknown backend {choice!r}")
    return False


def bp_decode(llr, row_ptr, edge_col, max_iters, clip, backend=None):
    mod = _ckernels if _use_compiled(backend) else _pykernels
    return mod.bp_decode(llr, row_ptr, edge_col, max_iters, clip)


def forward_backward(local, kernel, backend=None):
    mod = _ckernels if _use_compiled(backend) else _pykernels
    return mod.forward_backward(local, kernel)


def pf_filter(backend=None):
    """Compiled particle-filter frame loop, or None when the Python path should run."""
    return _ckernels.pf_filter if _use_compiled(backend) else None

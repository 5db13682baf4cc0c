"""Spline kernel backend selection.

The compiled Cython extension is preferred when it built successfully;
otherwise the vectorized numpy implementation is used.  Both expose the
same three functions (``rqs_forward``, ``rqs_inverse``, ``rqs_backward``)
with identical numerics, and :func:`set_backend` lets tests and
benchmarks pin one explicitly.
"""

from __future__ import annotations

from . import _rqs_np

try:
    from . import _rqs_c

    _DEFAULT = _rqs_c
except ImportError:  # extension not built on this platform
    _rqs_c = None
    _DEFAULT = _rqs_np

_active = _DEFAULT


def available_backends() -> list[str]:
    return ["numpy"] + (["compiled"] if _rqs_c is not None else [])


def backend_name() -> str:
    return "compiled" if _active is _rqs_c else "numpy"


def set_backend(name: str) -> None:
    global _active
    if name == "numpy":
        _active = _rqs_np
    elif name == "compiled":
        if _rqs_c is None:
            raise RuntimeError("compiled kernel extension is not available")
        _active = _rqs_c
    else:
        raise ValueError(f"unknown backend {name!r}")


def rqs_forward(t, w, h, d):
    return _active.rqs_forward(t, w, h, d)


def rqs_inverse(u, w, h, d):
    return _active.rqs_inverse(u, w, h, d)


def rqs_backward(t, w, h, d):
    return _active.rqs_backward(t, w, h, d)

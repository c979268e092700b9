"""Backend dispatch for the hot compositing kernels.

Two interchangeable implementations exist: `accelerated` (numba @njit,
parallel over tiles) and `reference` (pure numpy). Selection order:

  1. explicit `backend=` argument on the rendering entry points,
  2. the SEGWILD_BACKEND environment variable ("numba" or "numpy"),
  3. numba if importable, else numpy.

Both backends implement identical semantics (same truncation, same
compositing order, same early-termination rule) and are cross-checked in
the test suite; `benchmarks/bench_render.py` compares their speed.
"""

import os

_BACKENDS = ("numba", "numpy")


def default_backend_name() -> str:
    name = os.environ.get("SEGWILD_BACKEND", "").strip().lower()
    if name:
        if name not in _BACKENDS:
            raise ValueError(f"SEGWILD_BACKEND must be one of {_BACKENDS}, got {name!r}")
        return name
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        return "numpy"


def get_backend(name=None):
    """Return the kernel module for `name` (or the default backend)."""
    name = name or default_backend_name()
    if name == "numba":
        from . import accelerated
        return accelerated
    if name == "numpy":
        from . import reference
        return reference
    raise ValueError(f"unknown backend {name!r}; expected one of {_BACKENDS}")

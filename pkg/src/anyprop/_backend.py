"""Kernel backend selection.

Hot numeric kernels exist twice: a numba ``@njit`` implementation and a pure
numpy fallback. Both compute the exact same floating-point operation sequence,
so results are bit-identical; the backend is a speed choice, not a semantics
choice.

Selection, in order of precedence:

* ``ANYPROP_BACKEND=numba|numpy`` environment variable,
* ``set_backend()`` at runtime (tests use this),
* default: numba when importable, numpy otherwise.

``ANYPROP_THREADS`` caps parallelism for the kernels that have a parallel
variant (gather-style kernels only; scatter accumulation stays sequential so
the floating-point accumulation order is the reference order). ``0`` (the
default) is the sequential reference mode.
"""

from __future__ import annotations

import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only on numba-less installs
    numba = None
    NUMBA_AVAILABLE = False

_VALID_BACKENDS = ("numba", "numpy")

_backend: str | None = None
_threads: int | None = None


def _env_backend() -> str | None:
    value = os.environ.get("ANYPROP_BACKEND")
    if value is None:
        return None
    value = value.strip().lower()
    if value not in _VALID_BACKENDS:
        raise ValueError(
            f"ANYPROP_BACKEND must be one of {_VALID_BACKENDS}, got {value!r}"
        )
    return value


def active_backend() -> str:
    """Name of the kernel backend in effect: 'numba' or 'numpy'."""
    global _backend
    if _backend is None:
        env = _env_backend()
        if env is not None:
            _backend = env
        else:
            _backend = "numba" if NUMBA_AVAILABLE else "numpy"
    if _backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not importable")
    return _backend


def set_backend(name: str | None) -> None:
    """Force a backend; None restores env/default resolution."""
    global _backend
    if name is not None and name not in _VALID_BACKENDS:
        raise ValueError(f"backend must be one of {_VALID_BACKENDS}, got {name!r}")
    _backend = name


def threads() -> int:
    """Requested parallelism (0 = sequential reference mode)."""
    global _threads
    if _threads is None:
        raw = os.environ.get("ANYPROP_THREADS", "0").strip()
        try:
            n = int(raw)
        except ValueError as exc:
            raise ValueError(f"ANYPROP_THREADS must be an integer, got {raw!r}") from exc
        if n < 0:
            raise ValueError(f"ANYPROP_THREADS must be >= 0, got {n}")
        _threads = n
    return _threads


def set_threads(n: int | None) -> None:
    """Force a thread count; None restores env/default resolution."""
    global _threads
    if n is not None and n < 0:
        raise ValueError(f"thread count must be >= 0, got {n}")
    _threads = n


def parallel_enabled() -> bool:
    """True when the parallel kernel variants should be used."""
    if active_backend() != "numba":
        return False
    n = threads()
    if n <= 1:
        # 0 and 1 both run the sequential reference kernels.
        return False
    limit = numba.config.NUMBA_DEFAULT_NUM_THREADS
    numba.set_num_threads(min(n, limit))
    return True

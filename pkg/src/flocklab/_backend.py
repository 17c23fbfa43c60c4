"""Select the compiled kernels if they were built, else the numpy fallback.

``FLOCKLAB_PURE=1`` forces the fallback at import.  ``using("numpy")`` switches
temporarily (tests, benchmarks).
"""

import contextlib
import os

from . import _pykernels

try:
    if os.environ.get("FLOCKLAB_PURE"):
        raise ImportError("fallback forced by FLOCKLAB_PURE")
    from . import _ckernels
except ImportError:
    _ckernels = None

_BACKENDS = {"numpy": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_active = _BACKENDS.get("compiled", _pykernels)

MAX_COMPILED_DIM = 4


def available():
    return sorted(_BACKENDS)


def name():
    return "compiled" if _active is _ckernels and _ckernels is not None else "numpy"


@contextlib.contextmanager
def using(backend):
    global _active
    if backend not in _BACKENDS:
        raise ValueError(f"backend {backend!r} not available; have {available()}")
    prev = _active
    _active = _BACKENDS[backend]
    try:
        yield
    finally:
        _active = prev


def default_threads():
    return int(os.environ.get("FLOCKLAB_THREADS", "1"))


def _impl(dim):
    if dim > MAX_COMPILED_DIM:
        return _pykernels
    return _active


def alignment_forces(eta, vel, w, fam, par, p, kappa, acc, nthreads=None):
    nthreads = default_threads() if nthreads is None else nthreads
    return _impl(eta.shape[1]).alignment_forces(eta, vel, w, fam, par, p, kappa, acc, nthreads)


def jacobian_forces(eta, vel, jeta, jvel, w, fam, par, p, kappa, out, nthreads=None):
    nthreads = default_threads() if nthreads is None else nthreads
    _impl(eta.shape[1]).jacobian_forces(eta, vel, jeta, jvel, w, fam, par, p, kappa, out, nthreads)


def max_pair_distance(x, nthreads=None):
    nthreads = default_threads() if nthreads is None else nthreads
    return _impl(x.shape[1]).max_pair_distance(x, nthreads)


def cross_moment(x, y, wy, q, nthreads=None):
    nthreads = default_threads() if nthreads is None else nthreads
    return _impl(x.shape[1]).cross_moment(x, y, wy, q, nthreads)

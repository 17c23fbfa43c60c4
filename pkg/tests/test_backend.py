import numpy as np
import pytest

from flocklab import _backend
from flocklab.kernels import Kernel

pytestmark = pytest.mark.skipif("compiled" not in _backend.available(),
                                reason="compiled extension not built")

FAMILIES = [Kernel.constant(1.3), Kernel.powerlaw(0.5), Kernel.bump(0.8)]


def _cloud(n, d, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.dirichlet(np.ones(n))


def _forces(backend, eta, vel, w, kernel, p, threads):
    acc = np.empty_like(vel)
    with _backend.using(backend):
        diss = _backend.alignment_forces(eta, vel, w, kernel.code, kernel.param, p, 1.7, acc, threads)
    return acc, diss


@pytest.mark.parametrize("kernel", FAMILIES, ids=lambda k: k.family)
@pytest.mark.parametrize("p", [2.0, 2.5, 3.0])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_compiled_matches_numpy_bitwise(kernel, p, d):
    eta, vel, w = _cloud(57, d, 3)
    a_c, q_c = _forces("compiled", eta, vel, w, kernel, p, 1)
    a_n, q_n = _forces("numpy", eta, vel, w, kernel, p, 1)
    np.testing.assert_array_equal(a_c, a_n)
    assert q_c == q_n


@pytest.mark.parametrize("threads", [2, 3, 8])
def test_thread_count_does_not_change_bits(threads):
    eta, vel, w = _cloud(301, 2, 9)
    kernel = Kernel.powerlaw(0.5)
    ref = _forces("compiled", eta, vel, w, kernel, 2.5, 1)
    got = _forces("compiled", eta, vel, w, kernel, 2.5, threads)
    np.testing.assert_array_equal(ref[0], got[0])
    assert ref[1] == got[1]


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_jacobian_forces_match(p):
    eta, vel, w = _cloud(40, 2, 4)
    rng = np.random.Generator(np.random.Philox(1))
    jeta = np.eye(2) + 0.1 * rng.normal(size=(40, 2, 2))
    jvel = rng.normal(size=(40, 2, 2))
    kernel = Kernel.powerlaw(1.5)
    outs = {}
    for backend, threads in [("numpy", 1), ("compiled", 1), ("compiled", 4)]:
        out = np.empty_like(jvel)
        with _backend.using(backend):
            _backend.jacobian_forces(eta, vel, jeta, jvel, w, kernel.code, kernel.param, p, 1.0, out, threads)
        outs[backend, threads] = out
    # fused multiply-adds in the compiled loop may differ in the last bit
    np.testing.assert_allclose(outs["numpy", 1], outs["compiled", 1], rtol=1e-13, atol=1e-15)
    np.testing.assert_array_equal(outs["compiled", 1], outs["compiled", 4])


@pytest.mark.parametrize("q", [1.0, 2.0, 3.5, np.inf])
def test_pair_reductions_match(q):
    x, y, w = _cloud(80, 3, 12)
    vals = {}
    for backend in ("numpy", "compiled"):
        with _backend.using(backend):
            vals[backend] = (_backend.max_pair_distance(x, 1), _backend.cross_moment(x, y, w, q, 1))
    assert vals["numpy"] == vals["compiled"]


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        with _backend.using("fortran"):
            pass

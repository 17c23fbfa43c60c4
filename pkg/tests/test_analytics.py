import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flocklab.analytics import (
    DiameterSeries, algebraic_rate_fit, decay_envelope, diameter_series, diameters, energy_report,
    explicit_decay_bound, solve_deta_infty, velocity_fluctuation, velocity_fluctuation_pairs,
)
from flocklab.errors import UnsupportedError
from flocklab.kernels import AtomEnsemble, CouplingParams, Kernel
from flocklab.lagrangian import PhaseState, simulate


def _state(eta, vel):
    return PhaseState(0.0, np.asarray(eta, float), np.asarray(vel, float))


def test_diameter_examples():
    assert diameters(_state([[0.3, 1.0]], [[2.0, 2.0]])) == (0.0, 0.0)
    assert diameters(_state([[0.0], [1.0]], [[-1.0], [1.0]])) == (1.0, 2.0)
    s = 1.7
    tri = s * np.array([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    d_eta, _ = diameters(_state(tri, -tri))
    assert d_eta == pytest.approx(s, rel=1e-15)


def test_envelope_examples():
    t = np.linspace(0, 3, 31)
    series = DiameterSeries(t, np.linspace(0, 5, 31), np.full(31, 2.0))
    env = decay_envelope(series, Kernel.constant(1), CouplingParams(2, 1))
    np.testing.assert_allclose(env, 2.0 * np.exp(-t), rtol=1e-14)
    env = decay_envelope(series, Kernel.constant(1), CouplingParams(3, 1))
    np.testing.assert_allclose(env, 1.0 / (0.5 + t / 2), rtol=1e-14)
    zero = DiameterSeries(t, np.ones(31), np.zeros(31))
    assert np.all(decay_envelope(zero, Kernel.constant(1), CouplingParams(2.5, 1)) == 0)


def test_threshold_examples():
    rep = solve_deta_infty(CouplingParams(2, 1), Kernel.powerlaw(1), 1.0, 0.0)
    assert rep.conditional_ok and rep.d_eta_infty == pytest.approx(math.e - 1, abs=1e-12)
    assert rep.residual <= 1e-10
    rep = solve_deta_infty(CouplingParams(2, 1), Kernel.constant(1), 3.0, 1.0)
    assert rep.d_eta_infty == pytest.approx(4.0, abs=1e-12)
    rep = solve_deta_infty(CouplingParams(2, 1), Kernel.powerlaw(2), 2.0, 0.0)
    assert not rep.conditional_ok and rep.d_eta_infty is None
    with pytest.raises(UnsupportedError):
        solve_deta_infty(CouplingParams(3, 1), Kernel.constant(1), 1.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(p=st.floats(2.0, 2.95), kappa=st.floats(0.1, 5), d_v0=st.floats(0, 5), d_eta0=st.floats(0, 5),
       beta=st.floats(0.1, 3))
def test_threshold_relation_holds(p, kappa, d_v0, d_eta0, beta):
    k = Kernel.powerlaw(beta)
    rep = solve_deta_infty(CouplingParams(p, kappa), k, d_v0, d_eta0)
    if rep.conditional_ok:
        assert rep.d_eta_infty >= d_eta0
        lhs = 2 ** (2 - p) * kappa * k.tail_integral(d_eta0, rep.d_eta_infty)
        assert lhs == pytest.approx(d_v0 ** (3 - p) / (3 - p), abs=1e-10)


def test_explicit_bound_examples():
    assert explicit_decay_bound(2, 1, 0.5, 1.0, 2.0) == pytest.approx(math.exp(-1), rel=1e-15)
    assert explicit_decay_bound(2.5, 1, 1, 3.0, 0.0) == pytest.approx(3.0, rel=1e-15)
    vals = explicit_decay_bound(2.5, 1, 1, 1.0, np.array([0, 1, 10, 1e3, 1e6]))
    assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-5


def test_rate_fit_examples():
    t = np.linspace(0, 50, 200)
    assert algebraic_rate_fit(t, 1 / (1 + t), (1, 50)) == pytest.approx(-1, abs=1e-6)
    assert algebraic_rate_fit(t, 3 * (1 + t) ** -0.5, (1, 50)) == pytest.approx(-0.5, abs=1e-6)
    with pytest.raises(ValueError):
        algebraic_rate_fit(t, 1 / (1 + t), (10, 10.3))


def test_velocity_fluctuation_examples():
    w = np.array([0.5, 0.5])
    assert velocity_fluctuation(np.ones((2, 2)), w) == 0.0
    assert velocity_fluctuation([[1.0], [-1.0]], w) == pytest.approx(2.0, rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), lam=st.floats(-10, 10))
def test_velocity_fluctuation_forms_agree(seed, lam):
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.normal(size=(15, 3))
    w = rng.dirichlet(np.ones(15))
    a, b = velocity_fluctuation(v, w), velocity_fluctuation_pairs(v, w)
    assert a == pytest.approx(b, rel=1e-10)
    assert velocity_fluctuation(lam * v, w) == pytest.approx(lam ** 2 * a, rel=1e-10, abs=1e-300)


def test_two_body_ledger_closed_form():
    ens = AtomEnsemble([[0.0], [1.0]], [0.5, 0.5])
    traj = simulate(ens, [[0.5], [-0.5]], Kernel.constant(1), CouplingParams(2, 1), 2.0, dt=1e-3)
    led = energy_report(traj)
    t = led.times
    np.testing.assert_allclose(led.kinetic, np.exp(-2 * t) / 8, rtol=1e-10)
    np.testing.assert_allclose(led.dissipated, (1 - np.exp(-2 * t)) / 8, atol=1e-13)
    np.testing.assert_allclose(traj.dissipation_rate, np.exp(-2 * t) / 4, rtol=1e-10)
    assert led.max_abs_residual <= 1e-13


def test_zero_velocity_ledger():
    ens = AtomEnsemble([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    led = energy_report(simulate(ens, np.zeros((3, 2)), Kernel.powerlaw(1), CouplingParams(2.5, 1), 1.0))
    assert np.all(led.kinetic == 0) and np.all(led.dissipated == 0) and np.all(led.residual == 0)


def test_ledger_residual_shrinks_when_dt_halves():
    rng = np.random.Generator(np.random.Philox(2))
    ens = AtomEnsemble(rng.uniform(-1, 1, (10, 2)))
    vel = rng.normal(size=(10, 2))
    res = [energy_report(simulate(ens, vel, Kernel.powerlaw(0.5), CouplingParams(2, 3.0), 3.0, dt=dt)).max_abs_residual
           for dt in (0.05, 0.025)]
    assert res[0] / res[1] >= 8


@pytest.mark.parametrize("p", [2.0, 2.5])
def test_trajectory_flocking_invariants(p):
    rng = np.random.Generator(np.random.Philox(31))
    ens = AtomEnsemble(rng.uniform(-1, 1, (30, 2)))
    vel = rng.normal(size=(30, 2))
    k, cp = Kernel.powerlaw(0.5), CouplingParams(p, 2.0)
    traj = simulate(ens, vel, k, cp, 10.0, dt=5e-3)
    series = diameter_series(traj)
    env = decay_envelope(series, k, cp)
    assert np.all(series.d_v <= env * (1 + 1e-6))
    assert np.all(np.diff(series.d_v) <= 1e-9)
    dE = [velocity_fluctuation(s.vel, ens.weights) for s in traj.states()]
    assert np.all(np.diff(dE) <= 1e-9)
    step = np.abs(np.diff(series.d_eta))
    dv_max = np.maximum(series.d_v[:-1], series.d_v[1:])
    assert np.all(step <= dv_max * np.diff(series.times) * (1 + 1e-6))
    rep = solve_deta_infty(cp, k, series.d_v[0], series.d_eta[0])
    assert rep.conditional_ok
    assert series.d_eta.max() <= rep.d_eta_infty * (1 + 1e-6)
    bound = explicit_decay_bound(p, cp.kappa, rep.phi_at_infty, series.d_v[0], series.times)
    assert np.all(series.d_v <= bound * (1 + 1e-6))

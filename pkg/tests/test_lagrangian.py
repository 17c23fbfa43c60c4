import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flocklab.errors import BlowUpError, UnsupportedError
from flocklab.kernels import AtomEnsemble, CouplingParams, Kernel
from flocklab.lagrangian import (
    JacobianState, PhaseState, alignment_rhs, default_timestep, injectivity_certificate, integrate,
    jacobian_rhs, simulate, step_rk4, two_body_oracle,
)

PAIR = AtomEnsemble([[0.5], [-0.5]], [0.5, 0.5])


def _cloud(n, d, seed, spread=1.0):
    rng = np.random.Generator(np.random.Philox(seed))
    return AtomEnsemble(rng.uniform(-1, 1, (n, d)), rng.dirichlet(np.ones(n))), spread * rng.normal(size=(n, d))


def test_two_atom_accelerations():
    w = np.array([0.3, -0.7])
    state = PhaseState(0.0, np.array([[0.0, 0.0], [1.0, 2.0]]), np.array([w, [0.0, 0.0]]))
    ens = AtomEnsemble(state.eta, [0.5, 0.5])
    acc = alignment_rhs(state, ens, Kernel.constant(1.0), CouplingParams(2, 1))
    np.testing.assert_allclose(acc, [-w / 2, w / 2], rtol=1e-15)


def test_equal_velocities_feel_no_force():
    ens, _ = _cloud(20, 3, 1)
    vel = np.tile([0.4, -1.0, 2.0], (20, 1))
    acc = alignment_rhs(PhaseState(0.0, ens.positions, vel), ens, Kernel.powerlaw(0.5), CouplingParams(3, 2))
    assert np.all(acc == 0.0)


def test_mirror_symmetry_is_exact():
    x = np.array([[-1.0, 0.2], [0.0, 0.0], [1.0, -0.2]])
    v = np.array([[0.5, 1.0], [0.0, 0.0], [-0.5, -1.0]])
    ens = AtomEnsemble(x, [0.25, 0.5, 0.25])
    k, cp = Kernel.powerlaw(1.0), CouplingParams(2.5, 1.3)
    a = alignment_rhs(PhaseState(0, x, v), ens, k, cp)
    b = alignment_rhs(PhaseState(0, -x, -v), AtomEnsemble(-x, ens.weights), k, cp)
    np.testing.assert_array_equal(a, -b)


def test_mismatched_lengths_rejected():
    with pytest.raises(ValueError):
        alignment_rhs(PhaseState(0, np.zeros((3, 1)), np.zeros((3, 1))), PAIR, Kernel.constant(1), CouplingParams(2, 1))


def test_weighted_accelerations_sum_to_zero():
    ens, vel = _cloud(50, 2, 7)
    acc = alignment_rhs(PhaseState(0, ens.positions, vel), ens, Kernel.bump(1.5), CouplingParams(3, 1))
    assert np.linalg.norm(ens.weights @ acc) <= 1e-15 * np.abs(acc).sum()


def test_zero_velocity_and_translation_steps():
    ens, _ = _cloud(10, 2, 2)
    k, cp = Kernel.powerlaw(0.5), CouplingParams(2, 1)
    s = step_rk4(PhaseState(0.0, ens.positions, np.zeros((10, 2))), ens, k, cp, 0.1)
    np.testing.assert_array_equal(s.eta, ens.positions)
    assert s.t == 0.1
    c = np.array([[0.25, -0.5]])
    s = step_rk4(PhaseState(0.0, ens.positions, np.repeat(c, 10, 0)), ens, k, cp, 0.125)
    np.testing.assert_array_equal(s.eta, ens.positions + 0.125 * c)


def test_single_step_matches_two_body_oracle():
    cp = CouplingParams(2, 1)
    s = step_rk4(PhaseState(0.0, PAIR.positions, np.array([[-0.25], [0.25]])), PAIR, Kernel.constant(1), cp, 1e-3)
    d, w = two_body_oracle(cp, 1.0, [-0.5], [1.0], 1e-3)
    assert abs((s.eta[0, 0] - s.eta[1, 0]) - d[0]) <= 1e-14
    assert abs((s.vel[0, 0] - s.vel[1, 0]) - w[0]) <= 1e-14


def test_default_timestep_examples():
    k, ens = Kernel.constant(1), PAIR
    assert default_timestep(ens, k, CouplingParams(2, 1), 1.0) == pytest.approx(0.05)
    assert default_timestep(ens, k, CouplingParams(2, 1), 0.0) == 1e-2
    # the +1 in the denominator makes the halving exact only as kappa grows
    base = default_timestep(ens, k, CouplingParams(2, 1e9), 1.0)
    assert default_timestep(ens, k, CouplingParams(2, 2e9), 1.0) == pytest.approx(base / 2, rel=1e-8)


def test_oracle_examples():
    d, w = two_body_oracle(CouplingParams(2, 1), 1.0, [-0.5], [1.0], 1.0)
    assert d[0] == pytest.approx(0.5 + 0.5 * math.exp(-1), abs=1e-15)
    assert w[0] == pytest.approx(-0.5 * math.exp(-1), abs=1e-15)
    _, w = two_body_oracle(CouplingParams(3, 1), 1.0, [1.0], [0.0], 1.0)
    assert abs(w[0]) == pytest.approx(0.5, abs=1e-15)
    d, w = two_body_oracle(CouplingParams(2.5, 1), 1.0, [0.3, 0.4], [1.0, 2.0], 0.0)
    np.testing.assert_array_equal(d, [1.0, 2.0])
    np.testing.assert_array_equal(w, [0.3, 0.4])


def test_simulated_p3_pair_against_closed_form():
    traj = simulate(PAIR, [[-0.5], [0.5]], Kernel.constant(1), CouplingParams(3, 1), 1.0, dt=1e-3)
    v = traj.final.vel
    assert abs(v[0, 0] - v[1, 0]) == pytest.approx(0.5, abs=1e-12)


def test_zero_horizon_returns_initial_state():
    ens, vel = _cloud(5, 2, 3)
    traj = simulate(ens, vel, Kernel.constant(1), CouplingParams(2, 1), 0.0)
    assert len(traj) == 1
    np.testing.assert_array_equal(traj.vel[0], vel)
    np.testing.assert_array_equal(traj.eta[0], ens.positions)


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0, 4.0])
def test_trajectory_invariants(p):
    ens, vel = _cloud(40, 2, 11)
    traj = simulate(ens, vel, Kernel.powerlaw(0.5), CouplingParams(p, 1.5), 5.0, sample_stride=7)
    assert np.all(np.diff(traj.times) > 0)
    np.testing.assert_array_equal(traj.vel[0], vel)
    m0 = traj.momentum[0]
    drift = np.abs(traj.momentum - m0).max()
    assert drift <= 1e-10 * (1 + ens.weights @ np.linalg.norm(vel, axis=1))
    c_expect = traj.center[0] + traj.step_times[:, None] * m0
    assert np.abs(traj.center - c_expect).max() <= 1e-9
    for axis in range(2):
        assert np.abs(traj.vel[..., axis]).max() <= np.abs(vel[:, axis]).max() + 1e-9
    assert traj.vmax.max() <= traj.vmax[0] * (1 + 1e-9)
    assert np.all(np.diff(traj.dissipated) >= 0)


def test_energy_ledger_converges_fourth_order():
    ens, vel = _cloud(12, 2, 5)
    k, cp = Kernel.powerlaw(1.0), CouplingParams(2.5, 2.0)
    res = []
    for dt in (0.04, 0.02):
        traj = simulate(ens, vel, k, cp, 4.0, dt=dt)
        res.append(abs(traj.kinetic[-1] + traj.dissipated[-1] - traj.kinetic[0]))
    assert res[0] / res[1] >= 8


def test_constant_kernel_jacobian_decays_exponentially():
    ens, vel = _cloud(6, 2, 4)
    g0 = np.array([[0.3, -0.1], [0.2, 0.4]])
    traj = simulate(ens, vel, Kernel.constant(1), CouplingParams(2, 1.5), 2.0, dt=1e-2,
                    with_jacobians=True, grad_u0=g0)
    expect = g0 * math.exp(-1.5 * 2.0)
    np.testing.assert_allclose(traj.jvel[-1], np.broadcast_to(expect, traj.jvel[-1].shape), rtol=1e-8)
    assert np.all(np.diff(traj.jv_integral) >= 0)


def test_constant_initial_field_certifies_with_zero_value():
    ens = AtomEnsemble([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    traj = simulate(ens, np.tile([1.0, 2.0], (3, 1)), Kernel.powerlaw(0.5), CouplingParams(2, 1), 3.0,
                    with_jacobians=True, grad_u0=np.zeros((2, 2)))
    np.testing.assert_array_equal(traj.jvel[-1], 0.0)
    np.testing.assert_array_equal(traj.jeta[-1], np.broadcast_to(np.eye(2), (3, 2, 2)))
    assert injectivity_certificate(traj) == (True, 0.0)


def test_constant_kernel_certificate_value():
    traj = simulate(PAIR, [[-0.25], [0.25]], Kernel.constant(1), CouplingParams(2, 1), 30.0, dt=1e-2,
                    with_jacobians=True, grad_u0=[[-0.5]])
    ok, value = injectivity_certificate(traj)
    assert ok and value == pytest.approx(0.5, rel=1e-6)


def test_jacobian_rhs_shape_and_first_block():
    ens, vel = _cloud(4, 3, 8)
    jac = JacobianState(np.broadcast_to(np.eye(3), (4, 3, 3)), np.zeros((4, 3, 3)))
    d_eta, d_vel = jacobian_rhs(PhaseState(0, ens.positions, vel), jac, ens, Kernel.powerlaw(1), CouplingParams(2, 1))
    np.testing.assert_array_equal(d_eta, jac.jvel)
    assert d_vel.shape == (4, 3, 3)


@pytest.mark.parametrize("kernel,p", [(Kernel.powerlaw(1.0), 2.0), (Kernel.powerlaw(0.5), 3.0),
                                      (Kernel.constant(1.0), 2.5)])
def test_jacobian_matches_finite_differences(kernel, p):
    # zero-weight probes ride the flow without acting on it, so their
    # displacement from the reference atom is the flow-map derivative
    rng = np.random.Generator(np.random.Philox(21))
    n, d, eps = 8, 2, 1e-6
    x = rng.uniform(-1, 1, (n, d))
    A = np.array([[-0.4, 0.3], [0.1, -0.6]])
    vel = x @ A.T + 0.2 * np.sin(x[:, ::-1])
    w = np.full(n, 1.0 / n)
    grad = np.broadcast_to(A, (n, d, d))
    cp = CouplingParams(p, 1.0)
    ref = integrate(x, vel, w, kernel, cp, 2.0, 1e-3, stride=2000,
                    jeta0=np.broadcast_to(np.eye(d), (n, d, d)), jvel0=grad)
    probes_x = np.array([x[0] + eps * e for e in np.eye(d)])
    probes_v = np.array([vel[0] + eps * A @ e for e in np.eye(d)])
    run = integrate(np.vstack([x, probes_x]), np.vstack([vel, probes_v]), np.concatenate([w, [0.0] * d]),
                    kernel, cp, 2.0, 1e-3, stride=2000)
    fd_eta = (run.eta[-1, n:] - ref.eta[-1, 0]).T / eps
    fd_vel = (run.vel[-1, n:] - ref.vel[-1, 0]).T / eps
    np.testing.assert_allclose(fd_eta, ref.jeta[-1, 0], rtol=1e-4, atol=1e-4 * np.abs(ref.jeta[-1, 0]).max())
    np.testing.assert_allclose(fd_vel, ref.jvel[-1, 0], rtol=1e-4, atol=1e-4 * np.abs(ref.jvel[-1, 0]).max())


def test_blow_up_raises_with_partial_data():
    with pytest.raises(BlowUpError) as info:
        simulate(PAIR, [[-100.0], [100.0]], Kernel.constant(1), CouplingParams(6, 1), 50.0, dt=1.0)
    assert info.value.step >= 1
    assert len(info.value.partial["times"]) >= 1


def test_with_jacobians_requires_gradient():
    with pytest.raises(ValueError):
        simulate(PAIR, [[0.0], [0.0]], Kernel.constant(1), CouplingParams(2, 1), 1.0, with_jacobians=True)


def test_oracle_rejects_negative_constant():
    with pytest.raises(UnsupportedError):
        two_body_oracle(CouplingParams(2, 1), -1.0, [1.0], [0.0], 1.0)


@settings(max_examples=25, deadline=None)
@given(w0=st.floats(-3, 3).filter(lambda x: abs(x) > 1e-3), p=st.sampled_from([2.0, 2.5, 3.0, 3.5]),
       kappa=st.floats(0.2, 3.0))
def test_oracle_agrees_with_simulation(w0, p, kappa):
    cp = CouplingParams(p, kappa)
    traj = simulate(PAIR, [[w0 / 2], [-w0 / 2]], Kernel.constant(1), cp, 1.0, dt=1e-3, record_diameters=False)
    d, w = two_body_oracle(cp, 1.0, [w0], [1.0], 1.0)
    fin = traj.final
    assert fin.eta[0, 0] - fin.eta[1, 0] == pytest.approx(d[0], abs=1e-9)
    assert fin.vel[0, 0] - fin.vel[1, 0] == pytest.approx(w[0], abs=1e-9)

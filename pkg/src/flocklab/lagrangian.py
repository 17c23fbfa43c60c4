"""Fixed-step RK4 integration of the weighted p-alignment particle system.

    eta_i' = v_i
    v_i'   = kappa sum_j w_j phi(|eta_i - eta_j|) G_p(v_j - v_i)

The dissipation rate (kappa/2) sum_ij w_i w_j phi |v_i - v_j|^p is integrated
alongside the state with the same RK4 weights, so the kinetic-energy ledger
closes to O(dt^4).  Optional per-atom Jacobians (d eta/dx, d v/dx) are
advanced with the same stages.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import BlowUpError, UnsupportedError
from .kernels import BUMP

C_SAFE = 0.1


@dataclass(frozen=True, eq=False)
class PhaseState:
    t: float
    eta: np.ndarray
    vel: np.ndarray


@dataclass(frozen=True, eq=False)
class JacobianState:
    jeta: np.ndarray
    jvel: np.ndarray
    accumulated_jv_norm: float = 0.0


@dataclass(eq=False)
class Trajectory:
    """Sampled states plus per-step scalar diagnostics.

    ``times``/``eta``/``vel`` hold every ``stride``-th state (and the last).
    Per-step arrays (``step_times``, ``kinetic``, ``dissipated``, ...) have one
    entry per step including t = 0.
    """

    ensemble: object
    kernel: object
    cp: object
    dt: float
    stride: int
    weights: np.ndarray
    times: np.ndarray
    eta: np.ndarray
    vel: np.ndarray
    step_times: np.ndarray
    momentum: np.ndarray
    center: np.ndarray
    kinetic: np.ndarray
    dissipation_rate: np.ndarray
    dissipated: np.ndarray
    vmax: np.ndarray
    d_eta: np.ndarray = None
    d_v: np.ndarray = None
    jeta: np.ndarray = None
    jvel: np.ndarray = None
    jv_integral: np.ndarray = None
    step_jv_integral: np.ndarray = None
    warnings: list = field(default_factory=list)

    @property
    def has_jacobians(self):
        return self.jvel is not None

    def __len__(self):
        return len(self.times)

    def state(self, k):
        return PhaseState(float(self.times[k]), self.eta[k], self.vel[k])

    def states(self):
        for k in range(len(self.times)):
            yield self.state(k)

    def jacobian(self, k):
        if not self.has_jacobians:
            raise ValueError("trajectory was integrated without Jacobians")
        return JacobianState(self.jeta[k], self.jvel[k], float(self.jv_integral[k]))

    @property
    def final(self):
        return self.state(len(self.times) - 1)


def _c(a):
    a = np.ascontiguousarray(a, dtype=float)
    # the compiled kernels take writable memoryviews; ensemble arrays are frozen
    return a if a.flags.writeable else a.copy()


def _forces(eta, vel, w, kernel, cp, threads):
    acc = np.empty_like(vel)
    diss = _backend.alignment_forces(eta, vel, w, kernel.code, kernel.param, cp.p,
                                     cp.kappa, acc, threads)
    return acc, diss


def _jac_forces(eta, vel, jeta, jvel, w, kernel, cp, threads):
    out = np.empty_like(jvel)
    _backend.jacobian_forces(eta, vel, jeta, jvel, w, kernel.code, kernel.param, cp.p,
                             cp.kappa, out, threads)
    return out


def _jv_norm(jvel):
    n, d, _ = jvel.shape
    if n == 0:
        return 0.0
    if d == 1:
        return float(np.max(np.abs(jvel[:, 0, 0])))
    return float(np.max(np.linalg.norm(jvel, ord=2, axis=(1, 2))))


def _check_aligned(state, ensemble):
    if state.eta.shape != ensemble.positions.shape or state.vel.shape != ensemble.positions.shape:
        raise ValueError(
            f"state arrays {state.eta.shape}/{state.vel.shape} do not match "
            f"ensemble {ensemble.positions.shape}")


def alignment_rhs(state, ensemble, kernel, cp, threads=None):
    """Accelerations a_i for every atom (ascending-j inner sums)."""
    _check_aligned(state, ensemble)
    acc, _ = _forces(_c(state.eta), _c(state.vel), _c(ensemble.weights), kernel, cp, threads)
    return acc


def dissipation_rate(state, ensemble, kernel, cp, threads=None):
    _check_aligned(state, ensemble)
    _, diss = _forces(_c(state.eta), _c(state.vel), _c(ensemble.weights), kernel, cp, threads)
    return diss


def jacobian_rhs(state, jac, ensemble, kernel, cp, threads=None):
    """Time derivatives (dJ^eta/dt, dJ^v/dt) of the per-atom Jacobians."""
    _check_aligned(state, ensemble)
    djv = _jac_forces(_c(state.eta), _c(state.vel), _c(jac.jeta), _c(jac.jvel),
                      _c(ensemble.weights), kernel, cp, threads)
    return np.array(jac.jvel, dtype=float), djv


def _rk4_increments(eta, vel, w, kernel, cp, dt, threads, jeta=None, jvel=None):
    """Increments of one RK4 step.

    Returns (d_eta, d_vel, d_dissipated, d_jeta, d_jvel, d_jv_integral, rate at step start).
    """
    h2 = 0.5 * dt
    h6 = dt / 6.0
    a1, d1 = _forces(eta, vel, w, kernel, cp, threads)
    e2 = eta + h2 * vel
    v2 = vel + h2 * a1
    a2, d2 = _forces(e2, v2, w, kernel, cp, threads)
    e3 = eta + h2 * v2
    v3 = vel + h2 * a2
    a3, d3 = _forces(e3, v3, w, kernel, cp, threads)
    e4 = eta + dt * v3
    v4 = vel + dt * a3
    a4, d4 = _forces(e4, v4, w, kernel, cp, threads)
    de = h6 * (vel + 2.0 * v2 + 2.0 * v3 + v4)
    dv = h6 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    dq = h6 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
    if jeta is None:
        return de, dv, dq, None, None, 0.0, d1
    b1 = _jac_forces(eta, vel, jeta, jvel, w, kernel, cp, threads)
    je2 = jeta + h2 * jvel
    jv2 = jvel + h2 * b1
    b2 = _jac_forces(e2, v2, je2, jv2, w, kernel, cp, threads)
    je3 = jeta + h2 * jv2
    jv3 = jvel + h2 * b2
    b3 = _jac_forces(e3, v3, je3, jv3, w, kernel, cp, threads)
    je4 = jeta + dt * jv3
    jv4 = jvel + dt * b3
    b4 = _jac_forces(e4, v4, je4, jv4, w, kernel, cp, threads)
    dje = h6 * (jvel + 2.0 * jv2 + 2.0 * jv3 + jv4)
    djv = h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    dg = h6 * (_jv_norm(jvel) + 2.0 * _jv_norm(jv2) + 2.0 * _jv_norm(jv3) + _jv_norm(jv4))
    return de, dv, dq, dje, djv, dg, d1


class _Compensated:
    """Kahan accumulator: keeps the low-order bits lost when adding small steps."""

    def __init__(self, value):
        self.value = value
        self.err = np.zeros_like(value) if isinstance(value, np.ndarray) else 0.0

    def add(self, inc):
        y = inc - self.err
        t = self.value + y
        self.err = (t - self.value) - y
        self.value = t
        return t


def step_rk4(state, ensemble, kernel, cp, dt, threads=None):
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    _check_aligned(state, ensemble)
    eta, vel = _c(state.eta), _c(state.vel)
    de, dv, *_ = _rk4_increments(eta, vel, _c(ensemble.weights), kernel, cp, dt, threads)
    eta = eta + de
    vel = vel + dv
    if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(vel))):
        raise BlowUpError("non-finite state after RK4 step", t=state.t + dt)
    return PhaseState(state.t + dt, eta, vel)


def default_timestep(ensemble, kernel, cp, u0_sup):
    """Stability-scaled step c_safe / (kappa phi(0) (2U)^(p-2) + kappa L_phi U + 1)."""
    if u0_sup <= 0:
        return 1e-2
    rate = (cp.kappa * kernel.sup * (2.0 * u0_sup) ** (cp.p - 2.0)
            + cp.kappa * kernel.lipschitz_constant * u0_sup + 1.0)
    return C_SAFE / rate


def step_count(T, dt):
    """Number of equal steps covering [0, T] with step at most ``dt``."""
    return max(1, math.ceil(T / dt - 1e-9))


def integrate(eta0, vel0, weights, kernel, cp, T, dt, stride=1, jeta0=None, jvel0=None,
              record_diameters=True, threads=None, ensemble=None):
    """Core integrator on raw arrays.

    Unlike ``simulate`` the weights are not validated, so zero-weight probe
    particles (which feel the flow but do not act on it) are allowed.
    """
    eta = _c(np.array(eta0, dtype=float))
    vel = _c(np.array(vel0, dtype=float))
    w = _c(np.array(weights, dtype=float))
    n_atoms, dim = eta.shape
    with_jac = jeta0 is not None
    if T < 0:
        raise ValueError("horizon T must be >= 0")
    stride = int(stride)
    if stride < 1:
        raise ValueError("sample_stride must be >= 1")
    nsteps = 0 if T == 0 else step_count(T, dt)
    h = T / nsteps if nsteps else float(dt)
    sample_steps = list(range(0, nsteps + 1, stride))
    if sample_steps[-1] != nsteps:
        sample_steps.append(nsteps)
    ns = len(sample_steps)

    s_eta = np.empty((ns, n_atoms, dim))
    s_vel = np.empty((ns, n_atoms, dim))
    st = np.array([k * h for k in sample_steps])
    tsteps = np.arange(nsteps + 1) * h
    mom = np.empty((nsteps + 1, dim))
    cen = np.empty((nsteps + 1, dim))
    kin = np.empty(nsteps + 1)
    rate = np.empty(nsteps + 1)
    qacc = np.empty(nsteps + 1)
    vmax = np.empty(nsteps + 1)
    deta = np.empty(nsteps + 1) if record_diameters else None
    dv = np.empty(nsteps + 1) if record_diameters else None
    if with_jac:
        jeta = _c(np.array(jeta0, dtype=float))
        jvel = _c(np.array(jvel0, dtype=float))
        s_jeta = np.empty((ns,) + jeta.shape)
        s_jvel = np.empty((ns,) + jvel.shape)
        s_g = np.empty(ns)
        step_g = np.empty(nsteps + 1)
    else:
        jeta = jvel = None
    notes = []
    kink_flagged = False

    def record(k, eta, vel, q, g):
        mom[k] = w @ vel
        cen[k] = w @ eta
        kin[k] = 0.5 * float(w @ np.einsum("ij,ij->i", vel, vel))
        qacc[k] = q
        vmax[k] = float(np.max(np.sqrt(np.einsum("ij,ij->i", vel, vel))))
        if record_diameters:
            deta[k] = _backend.max_pair_distance(eta, threads)
            dv[k] = _backend.max_pair_distance(vel, threads)
        if with_jac:
            step_g[k] = g

    q = 0.0
    g = 0.0
    si = 0
    record(0, eta, vel, q, g)

    def sample(eta, vel, jeta, jvel, g):
        nonlocal si
        s_eta[si] = eta
        s_vel[si] = vel
        if with_jac:
            s_jeta[si] = jeta
            s_jvel[si] = jvel
            s_g[si] = g
        si += 1

    sample(eta, vel, jeta, jvel, g)
    next_sample = 1
    # long runs add ~1e4 small increments; compensated sums keep the energy
    # ledger at truncation level instead of a rounding random walk
    acc_eta = _Compensated(eta)
    acc_vel = _Compensated(vel)
    acc_q = _Compensated(0.0)
    for k in range(1, nsteps + 1):
        de, dv_, dq, dje, djv, dg, r0 = _rk4_increments(
            eta, vel, w, kernel, cp, h, threads, jeta, jvel)
        rate[k - 1] = r0
        eta_n = acc_eta.add(de)
        vel_n = acc_vel.add(dv_)
        if with_jac:
            jeta_n = jeta + dje
            jvel_n = jvel + djv
        else:
            jeta_n = jvel_n = None
        if not (np.all(np.isfinite(eta_n)) and np.all(np.isfinite(vel_n))
                and (not with_jac or (np.all(np.isfinite(jeta_n)) and np.all(np.isfinite(jvel_n))))):
            err = BlowUpError(f"non-finite state at step {k} (t={k * h:.6g})", step=k, t=k * h)
            err.partial = {"times": st[:si], "eta": s_eta[:si], "vel": s_vel[:si],
                           "step_times": tsteps[:k], "kinetic": kin[:k]}
            raise err
        if with_jac and kernel.family == BUMP and not kink_flagged:
            r_old = np.linalg.norm(eta[:, None, :] - eta[None, :, :], axis=-1) < kernel.param
            r_new = np.linalg.norm(eta_n[:, None, :] - eta_n[None, :, :], axis=-1) < kernel.param
            if np.any(r_old != r_new):
                kink_flagged = True
                notes.append(f"bump kink crossed near t={k * h:.6g}; Jacobian is one-sided there")
        eta, vel, jeta, jvel = eta_n, vel_n, jeta_n, jvel_n
        q = acc_q.add(dq)
        g = g + dg
        record(k, eta, vel, q, g)
        if next_sample < ns and sample_steps[next_sample] == k:
            sample(eta, vel, jeta, jvel, g)
            next_sample += 1
    _, rate[nsteps] = _forces(eta, vel, w, kernel, cp, threads)

    traj = Trajectory(
        ensemble=ensemble, kernel=kernel, cp=cp, dt=h, stride=stride, weights=w,
        times=st, eta=s_eta, vel=s_vel, step_times=tsteps, momentum=mom, center=cen,
        kinetic=kin, dissipation_rate=rate, dissipated=qacc, vmax=vmax, d_eta=deta, d_v=dv,
        warnings=notes)
    if with_jac:
        traj.jeta = s_jeta
        traj.jvel = s_jvel
        traj.jv_integral = s_g
        traj.step_jv_integral = step_g
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return traj


def simulate(ensemble, vel0, kernel, cp, T, dt=None, sample_stride=1, with_jacobians=False,
             grad_u0=None, record_diameters=True, threads=None):
    """Integrate the atomic system from (x_i, u0(x_i)) over [0, T].

    ``dt=None`` uses ``default_timestep``.  The step is shrunk so that an
    integer number of equal steps covers [0, T].
    """
    vel0 = np.array(vel0, dtype=float)
    if vel0.ndim == 1 and ensemble.dim == 1:
        vel0 = vel0[:, None]
    if vel0.shape != ensemble.positions.shape:
        raise ValueError(f"velocities {vel0.shape} do not match ensemble {ensemble.positions.shape}")
    if not np.all(np.isfinite(vel0)):
        raise ValueError("initial velocities must be finite")
    if dt is None:
        u0_sup = float(np.max(np.linalg.norm(vel0, axis=1)))
        dt = default_timestep(ensemble, kernel, cp, u0_sup)
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    jeta0 = jvel0 = None
    if with_jacobians:
        if grad_u0 is None:
            raise ValueError("with_jacobians requires grad_u0")
        n, d = ensemble.positions.shape
        jvel0 = np.array(grad_u0, dtype=float)
        if jvel0.shape == (d, d):
            jvel0 = np.broadcast_to(jvel0, (n, d, d))
        if jvel0.shape != (n, d, d):
            raise ValueError(f"grad_u0 must have shape {(n, d, d)} or {(d, d)}")
        jeta0 = np.broadcast_to(np.eye(d), (n, d, d))
    return integrate(ensemble.positions, vel0, ensemble.weights, kernel, cp, T, dt,
                     stride=sample_stride, jeta0=jeta0, jvel0=jvel0,
                     record_diameters=record_diameters, threads=threads, ensemble=ensemble)


def two_body_oracle(cp, c, w0, d0, t):
    """Relative position/velocity of two half-weight atoms under Constant(c).

    w = v_1 - v_2 obeys w' = -kappa c G_p(w), so w keeps its direction and
    |w| has the closed forms below; d = eta_1 - eta_2 integrates w exactly.
    """
    w0 = np.atleast_1d(np.asarray(w0, dtype=float))
    d0 = np.atleast_1d(np.asarray(d0, dtype=float))
    if w0.shape != d0.shape:
        raise ValueError("w0 and d0 must have the same shape")
    rate = cp.kappa * float(c)
    p = cp.p
    s0 = float(np.linalg.norm(w0))
    if t == 0 or s0 == 0.0 or rate == 0.0:
        return d0 + t * w0, w0.copy()
    if rate < 0:
        raise UnsupportedError("kernel constant must be >= 0")
    if p == 2:
        decay = math.exp(-rate * t)
        return d0 + w0 * (-math.expm1(-rate * t)) / rate, w0 * decay
    a = s0 ** (2.0 - p)
    b = (p - 2.0) * rate
    s = (a + b * t) ** (-1.0 / (p - 2.0))
    m = 1.0 / (p - 2.0)
    if p == 3:
        dist = math.log1p(b * t / a) / b
    else:
        dist = ((a + b * t) ** (1.0 - m) - a ** (1.0 - m)) / (b * (1.0 - m))
    unit = w0 / s0
    return d0 + unit * dist, unit * s


def injectivity_certificate(traj):
    """(certified, value) with value = int_0^T max_i |J^v_i|_2 dt."""
    if not traj.has_jacobians:
        raise ValueError("trajectory was integrated without Jacobians")
    value = float(traj.jv_integral[-1])
    return value < 1.0, value


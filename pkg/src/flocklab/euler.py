"""Eulerian fields reconstructed from the Lagrangian atoms by spatial binning.

Atoms landing in the same cell of a lattice with spacing h form a fibre.
Per cell we get the mass rho, barycentric velocity u, the fibre covariance
theta (Reynolds stress tau = rho theta) and, for p > 2, the nonlinear defect
force coming from fibre-averaging G_p.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedError
from .kernels import g_p


@dataclass(frozen=True, eq=False)
class Disintegration:
    """Atoms grouped by lattice cell floor(eta / h).

    Cells are sorted lexicographically by index.  ``order`` lists atoms cell
    by cell (stable within a cell) and ``starts`` marks where each cell begins.
    """

    h: float
    keys: np.ndarray
    cell_of: np.ndarray
    mass: np.ndarray
    fibre_weights: np.ndarray
    order: np.ndarray
    starts: np.ndarray

    @property
    def n_cells(self):
        return len(self.keys)

    @property
    def centers(self):
        return (self.keys + 0.5) * self.h

    def members(self, z):
        end = self.starts[z + 1] if z + 1 < len(self.starts) else len(self.order)
        return self.order[self.starts[z]:end]


@dataclass(frozen=True, eq=False)
class EulerianSnapshot:
    t: float
    keys: np.ndarray
    centers: np.ndarray
    mass: np.ndarray
    momentum: np.ndarray
    u: np.ndarray
    theta: np.ndarray

    @property
    def trace_theta(self):
        return np.trace(self.theta, axis1=1, axis2=2)


def _weights(ensemble_or_weights):
    w = getattr(ensemble_or_weights, "weights", ensemble_or_weights)
    return np.asarray(w, dtype=float)


def disintegrate(state, ensemble, h):
    """Bin atoms into cells of side ``h``; fibre weights are w_i / rho_cell."""
    if not h > 0:
        raise ValueError(f"cell size h must be > 0, got {h}")
    w = _weights(ensemble)
    eta = np.asarray(state.eta, dtype=float)
    idx = np.floor(eta / h).astype(np.int64)
    keys, cell_of = np.unique(idx, axis=0, return_inverse=True)
    cell_of = cell_of.reshape(-1)
    mass = np.bincount(cell_of, weights=w, minlength=len(keys))
    order = np.argsort(cell_of, kind="stable")
    counts = np.bincount(cell_of, minlength=len(keys))
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return Disintegration(float(h), keys, cell_of, mass, w / mass[cell_of], order, starts)


def eulerian_snapshot(state, ensemble, dis):
    vel = np.asarray(state.vel, dtype=float)
    w = _weights(ensemble)
    n_cells = dis.n_cells
    d = vel.shape[1]
    nu = dis.fibre_weights
    u = np.zeros((n_cells, d))
    mom = np.zeros((n_cells, d))
    np.add.at(u, dis.cell_of, nu[:, None] * vel)
    np.add.at(mom, dis.cell_of, w[:, None] * vel)
    omega = vel - u[dis.cell_of]
    theta = np.zeros((n_cells, d, d))
    np.add.at(theta, dis.cell_of, nu[:, None, None] * omega[:, :, None] * omega[:, None, :])
    return EulerianSnapshot(state.t, dis.keys, dis.centers, dis.mass, mom, u, theta)


def fibre_fluctuations(state, dis, snap):
    """omega_i = v_i - u(cell of i)."""
    return np.asarray(state.vel, dtype=float) - snap.u[dis.cell_of]


def trace_identity_residual(snap, state, ensemble):
    """|sum rho tr(theta) - (sum w |v|^2 - sum rho |u|^2)|."""
    w = _weights(ensemble)
    vel = np.asarray(state.vel, dtype=float)
    lhs = float(snap.mass @ snap.trace_theta)
    rhs = float(w @ np.einsum("ij,ij->i", vel, vel)) - float(snap.mass @ np.einsum("ij,ij->i", snap.u, snap.u))
    return abs(lhs - rhs)


def reynolds_norm(snap):
    """Trace norm sum_z rho_z tr(theta_z) of the Reynolds stress."""
    return float(snap.mass @ snap.trace_theta)


def defect_kernel(snap, state, ensemble, dis, z, zeta, cp):
    """Fibre-averaged coupling minus its barycentric evaluation between cells z, zeta."""
    p = cp.p
    omega = fibre_fluctuations(state, dis, snap)
    ix = dis.members(z)
    iy = dis.members(zeta)
    du = snap.u[zeta] - snap.u[z]
    arg = du[None, None, :] + omega[iy][None, :, :] - omega[ix][:, None, :]
    nu = dis.fibre_weights
    wts = nu[ix][:, None] * nu[iy][None, :]
    return np.einsum("xy,xyk->k", wts, g_p(arg, p)) - g_p(du, p)


def _cell_pair_sums(values, dis):
    """sum over x in cell z, y in cell zeta of values[x, y] (atoms in cell order)."""
    v = values[dis.order][:, dis.order]
    v = np.add.reduceat(v, dis.starts, axis=0)
    return np.add.reduceat(v, dis.starts, axis=1)


@dataclass(frozen=True, eq=False)
class DefectForce:
    per_cell: np.ndarray
    total_norm: float


def defect_force(snap, state, dis, kernel, cp):
    """R_z = kappa sum_zeta phi(|c_z - c_zeta|) K(z, zeta) rho_zeta, plus sum rho |R|.

    Uses omega_y - omega_x + u_zeta - u_z = v_y - v_x, so the fibre average is
    a cell-pair reduction of the atom-pair matrix G_p(v_y - v_x).
    """
    vel = np.asarray(state.vel, dtype=float)
    nu = dis.fibre_weights
    pair = g_p(vel[None, :, :] - vel[:, None, :], cp.p)
    wts = nu[:, None] * nu[None, :]
    d = vel.shape[1]
    avg = np.stack([_cell_pair_sums(wts * pair[:, :, k], dis) for k in range(d)], axis=-1)
    du = snap.u[None, :, :] - snap.u[:, None, :]
    K = avg - g_p(du, cp.p)
    c = snap.centers
    dist = np.sqrt(np.einsum("zyk,zyk->zy", c[:, None, :] - c[None, :, :], c[:, None, :] - c[None, :, :]))
    R = cp.kappa * np.einsum("zy,zyk->zk", kernel(dist) * snap.mass[None, :], K)
    total = float(snap.mass @ np.linalg.norm(R, axis=1))
    return DefectForce(R, total)


@dataclass(frozen=True)
class DissipationSplit:
    d_ea: float
    d_rey: float
    d_total: float
    residual: float


def dissipation_split(snap, state, ensemble, dis, kernel, cp):
    """Macroscopic + Reynolds parts of the p = 2 dissipation vs the Lagrangian total.

    Split terms evaluate phi at cell centres; the total uses atom positions.
    """
    if cp.p != 2:
        raise UnsupportedError("dissipation split is defined for p = 2 only")
    w = _weights(ensemble)
    eta = np.asarray(state.eta, dtype=float)
    vel = np.asarray(state.vel, dtype=float)
    c = snap.centers
    cdist = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
    phic = kernel(cdist)
    rr = snap.mass[:, None] * snap.mass[None, :]
    du2 = np.sum((snap.u[:, None, :] - snap.u[None, :, :]) ** 2, axis=-1)
    d_ea = cp.kappa * float(np.sum(phic * du2 * rr))
    omega = fibre_fluctuations(state, dis, snap)
    nu = dis.fibre_weights
    dom2 = np.sum((omega[:, None, :] - omega[None, :, :]) ** 2, axis=-1)
    fib = _cell_pair_sums(nu[:, None] * nu[None, :] * dom2, dis)
    d_rey = cp.kappa * float(np.sum(phic * fib * rr))
    adist = np.linalg.norm(eta[:, None, :] - eta[None, :, :], axis=-1)
    dv2 = np.sum((vel[:, None, :] - vel[None, :, :]) ** 2, axis=-1)
    d_total = cp.kappa * float(np.sum(w[:, None] * w[None, :] * kernel(adist) * dv2))
    return DissipationSplit(d_ea, d_rey, d_total, abs(d_ea + d_rey - d_total))


def _pair_dissipation(state, weights, kernel, p, dis=None):
    """sum_ij w_i w_j phi |v_i - v_j|^p with phi at atoms (dis=None) or cell centres."""
    eta = np.asarray(state.eta, dtype=float)
    vel = np.asarray(state.vel, dtype=float)
    if dis is None:
        r = np.linalg.norm(eta[:, None, :] - eta[None, :, :], axis=-1)
    else:
        c = dis.centers[dis.cell_of]
        r = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
    s = np.linalg.norm(vel[:, None, :] - vel[None, :, :], axis=-1)
    return float(np.sum(weights[:, None] * weights[None, :] * kernel(r) * s ** p))


@dataclass(frozen=True, eq=False)
class EnergyInequality:
    times: np.ndarray
    lhs: np.ndarray
    rhs: float
    tol: np.ndarray
    ok: bool

    @property
    def max_excess(self):
        return float(np.max(self.lhs - self.rhs - self.tol))


def energy_inequality_check(traj, h, rk4_const=1.0):
    """Eulerian energy + cell-centred dissipation <= initial energy + tol.

    Macro energy is 1/2 sum rho (|u|^2 + tr theta).  The dissipation integral
    is the RK4-integrated Lagrangian one plus a trapezoid of the (small)
    cell-centre correction, so the sample spacing only enters through that
    correction.  tol = kappa sqrt(d) L_phi h (2M)^(p-2) 2 E0 t + C dt^4 t,
    with M = max |u0|, plus a rounding allowance.
    """
    w = np.asarray(traj.weights, dtype=float)
    kernel, cp = traj.kernel, traj.cp
    n_samples = len(traj.times)
    macro = np.empty(n_samples)
    corr = np.empty(n_samples)
    lag_q = np.empty(n_samples)
    step_index = np.rint(traj.times / traj.dt).astype(int)
    for k, state in enumerate(traj.states()):
        dis = disintegrate(state, w, h)
        snap = eulerian_snapshot(state, w, dis)
        macro[k] = 0.5 * float(snap.mass @ (np.einsum("ij,ij->i", snap.u, snap.u) + snap.trace_theta))
        corr[k] = 0.5 * cp.kappa * (_pair_dissipation(state, w, kernel, cp.p, dis)
                                    - _pair_dissipation(state, w, kernel, cp.p))
        lag_q[k] = traj.dissipated[step_index[k]]
    t = traj.times
    corr_int = np.concatenate([[0.0], np.cumsum(0.5 * (corr[1:] + corr[:-1]) * np.diff(t))])
    lhs = macro + lag_q + corr_int
    e0 = float(traj.kinetic[0])
    dim = traj.eta.shape[2]
    vmax0 = float(traj.vmax[0])
    budget = (cp.kappa * math.sqrt(dim) * kernel.lipschitz_constant * h
              * (2.0 * vmax0) ** (cp.p - 2.0) * 2.0 * e0)
    tol = budget * t + rk4_const * traj.dt ** 4 * t + 1e-13 * (1.0 + e0)
    return EnergyInequality(t, lhs, e0, tol, bool(np.all(lhs <= e0 + tol)))


def velocity_marginal_stats(state, ensemble):
    """(barycentre sum w_i v_i, support diameter max |v_i - v_j|)."""
    from .analytics import diameters
    w = _weights(ensemble)
    vel = np.asarray(state.vel, dtype=float)
    return w @ vel, diameters(state)[1]


def kinetic_moments(state, ensemble, dis):
    """Per-cell moments of the phase-space lift (eta, v)#rho0.

    Returns (mass, momentum, second moment sum w v v^T); the second moment
    equals rho (u u^T + theta).
    """
    w = _weights(ensemble)
    vel = np.asarray(state.vel, dtype=float)
    d = vel.shape[1]
    mom = np.zeros((dis.n_cells, d))
    second = np.zeros((dis.n_cells, d, d))
    np.add.at(mom, dis.cell_of, w[:, None] * vel)
    np.add.at(second, dis.cell_of, w[:, None, None] * vel[:, :, None] * vel[:, None, :])
    return dis.mass.copy(), mom, second

"""1D critical thresholds, collision monitoring and the large-coupling injectivity test."""

import math
from dataclasses import dataclass

import numpy as np

from .analytics import solve_deta_infty
from .errors import UnsupportedError
from .kernels import CouplingParams

SUBCRITICAL = "subcritical"
SUPERCRITICAL = "supercritical"
TIE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EffectiveVelocity1D:
    """v_hat per atom; ``violating_pair`` = (i, j) with x_i > x_j, v_hat_i < v_hat_j.

    When supercritical the flagged pair is the one with the earliest forced
    collision; among adjacent atoms this is also the global minimum.
    """

    v_hat: np.ndarray
    classification: str
    violating_pair: tuple = None
    t_c_bound: float = math.inf

    @property
    def subcritical(self):
        return self.classification == SUBCRITICAL


def _positions_1d(ensemble):
    x = np.asarray(ensemble.positions, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise UnsupportedError(f"needs a 1D ensemble, got dimension {x.shape[1]}")
        x = x[:, 0]
    return x


def effective_velocity(ensemble, u0, kernel, kappa):
    """v_hat_i = u0_i - kappa sum_j w_j Phi(x_j - x_i) with Phi the odd primitive of phi."""
    x = _positions_1d(ensemble)
    w = np.asarray(ensemble.weights, dtype=float)
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    if u0.shape != x.shape:
        raise ValueError(f"expected {len(x)} velocities, got {u0.shape}")
    prim = np.vectorize(kernel.primitive, otypes=[float])
    v_hat = np.array([u0[i] - kappa * float(w @ prim(x - x[i])) for i in range(len(x))])

    order = np.argsort(x, kind="stable")
    best = None
    for a, b in zip(order[:-1], order[1:]):
        # b is to the right of a
        if x[b] == x[a]:
            if abs(v_hat[b] - v_hat[a]) > TIE_TOL:
                hi, lo = (b, a) if v_hat[b] < v_hat[a] else (a, b)
                cand = (0.0, int(hi), int(lo))
                best = cand if best is None or cand[0] < best[0] else best
            continue
        if v_hat[b] < v_hat[a]:
            t_c = collision_bound(x[b], x[a], v_hat[b], v_hat[a])
            if best is None or t_c < best[0]:
                best = (t_c, int(b), int(a))
    if best is None:
        return EffectiveVelocity1D(v_hat, SUBCRITICAL)
    return EffectiveVelocity1D(v_hat, SUPERCRITICAL, (best[1], best[2]), best[0])


def collision_bound(x, y, v_hat_x, v_hat_y):
    """Upper bound (x - y)/(v_hat(y) - v_hat(x)) on the first collision time, x > y."""
    if not x >= y:
        raise ValueError(f"needs x >= y, got x={x}, y={y}")
    if v_hat_x >= v_hat_y:
        return math.inf
    return (x - y) / (v_hat_y - v_hat_x)


@dataclass(frozen=True, eq=False)
class OrderMonitor:
    times: np.ndarray
    min_scaled_gap: np.ndarray
    min_gap: np.ndarray
    gap_tol: float
    first_collision_time: float = None
    collision_pair: tuple = None

    @property
    def collided(self):
        return self.first_collision_time is not None


def _adjacent_gaps(traj, order):
    eta = traj.eta[:, :, 0]
    return eta[:, order[1:]] - eta[:, order[:-1]]


def order_preservation_monitor(traj, ensemble, kernel, kappa):
    """Track adjacent gaps against the contraction bound (x_i - x_j) e^(-kappa phi(0) t).

    The first collision time is linearly interpolated between the last sample
    with all gaps above ``gap_tol`` and the first sample where one is not.
    """
    x = _positions_1d(ensemble)
    if len(x) < 2:
        t = np.asarray(traj.times)
        return OrderMonitor(t, np.full(len(t), np.inf), np.full(len(t), np.inf), 0.0)
    order = np.argsort(x, kind="stable")
    gap0 = np.diff(x[order])
    if np.any(gap0 <= 0):
        raise ValueError("order monitor needs distinct initial positions")
    t = np.asarray(traj.times, dtype=float)
    gaps = _adjacent_gaps(traj, order)
    gap_tol = 1e-9 * float(x.max() - x.min())
    scaled = gaps / (gap0[None, :] * np.exp(-kappa * kernel.sup * t)[:, None])
    hit = np.nonzero(np.any(gaps <= gap_tol, axis=1))[0]
    t_c = pair = None
    if len(hit):
        k = int(hit[0])
        col = int(np.argmin(gaps[k]))
        pair = (int(order[col + 1]), int(order[col]))
        if k == 0:
            t_c = float(t[0])
        else:
            g0, g1 = gaps[k - 1, col], gaps[k, col]
            t_c = float(t[k - 1] + (t[k] - t[k - 1]) * g0 / (g0 - g1)) if g0 != g1 else float(t[k])
    return OrderMonitor(t, scaled.min(axis=1), gaps.min(axis=1), gap_tol, t_c, pair)


def _count_crossings(gap, tol):
    sign = 0
    count = 0
    for g in gap:
        s = 1 if g > tol else (-1 if g < -tol else 0)
        if s == 0:
            continue
        if sign and s != sign:
            count += 1
        sign = s
    return count


def single_collision_check(traj, pair):
    """Number of sign changes of eta_i - eta_j (hysteresis band gap_tol)."""
    i, j = pair
    eta = traj.eta[:, :, 0]
    tol = 1e-9 * float(np.ptp(eta[0])) if eta.shape[1] > 1 else 0.0
    return _count_crossings(eta[:, i] - eta[:, j], tol)


def crossing_counts(traj):
    """Crossing count for every pair i < j, as an (N, N) upper-triangular array."""
    eta = traj.eta[:, :, 0]
    n = eta.shape[1]
    tol = 1e-9 * float(np.ptp(eta[0])) if n > 1 else 0.0
    out = np.zeros((n, n), dtype=int)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = _count_crossings(eta[:, i] - eta[:, j], tol)
    return out


@dataclass(frozen=True)
class LargeKappaReport:
    threshold: float
    satisfied: bool
    predicted_gradient_integral: float
    d_eta_infty: float
    phi_at_infty: float
    integrable_variant_threshold: float = None
    reason: str = ""


def large_kappa_condition(kernel, kappa, grad_u0_sup, d_v0, d_eta0, p=2):
    """Coupling strength that keeps int_0^inf |grad v| below 1 (p = 2).

    threshold = (phi(D) |grad u0| + 2 |phi'| d_v0) / phi(D)^2 with D the
    spatial-diameter bound; integrable kernels also need kappa above
    d_v0 / int_{d_eta0}^inf phi for D to exist.
    """
    if p != 2:
        raise UnsupportedError("large-coupling condition is stated for p = 2")
    cp = CouplingParams(p, kappa)
    lip = kernel.lipschitz_constant
    integrable = None
    if not kernel.heavy_tailed:
        tail = kernel.tail_integral(d_eta0)
        integrable = math.inf if tail == 0 else d_v0 / tail
    rep = solve_deta_infty(cp, kernel, d_v0, d_eta0)
    if not rep.conditional_ok:
        return LargeKappaReport(math.inf, False, math.inf, math.inf, 0.0, integrable,
                                "spatial diameter bound does not exist for this kappa")
    D, phi_D = rep.d_eta_infty, rep.phi_at_infty
    if phi_D <= 0:
        return LargeKappaReport(math.inf, False, math.inf, D, phi_D, integrable,
                                "kernel vanishes at the diameter bound")
    threshold = (phi_D * grad_u0_sup + 2.0 * lip * d_v0) / phi_D ** 2
    if integrable is not None:
        threshold = max(threshold, integrable)
    denom = kappa * phi_D ** 2 - lip * d_v0
    if denom <= 0:
        return LargeKappaReport(threshold, False, math.inf, D, phi_D, integrable,
                                "kappa phi(D)^2 <= |phi'| d_v0: gradient damping hypothesis fails")
    predicted = (phi_D * grad_u0_sup + lip * d_v0) / denom
    return LargeKappaReport(threshold, kappa > threshold, predicted, D, phi_D, integrable)


@dataclass(frozen=True)
class CertificateComparison:
    measured: float
    bound: float
    ok: bool


def gronwall_certificate_compare(report, traj):
    if not traj.has_jacobians:
        raise ValueError("trajectory was integrated without Jacobians")
    measured = float(traj.jv_integral[-1])
    ok = measured <= report.predicted_gradient_integral * (1.0 + 1e-3)
    if report.satisfied:
        ok = ok and measured < 1.0
    return CertificateComparison(measured, report.predicted_gradient_integral, ok)

"""Diameters, decay envelopes, flocking thresholds and energy ledgers."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import bisect

from . import _backend
from .errors import UnsupportedError


@dataclass(frozen=True, eq=False)
class DiameterSeries:
    times: np.ndarray
    d_eta: np.ndarray
    d_v: np.ndarray


@dataclass(frozen=True)
class ThresholdReport:
    conditional_ok: bool
    d_eta_infty: float = None
    phi_at_infty: float = None
    residual: float = None


@dataclass(frozen=True, eq=False)
class EnergyLedger:
    times: np.ndarray
    kinetic: np.ndarray
    dissipated: np.ndarray
    residual: np.ndarray

    @property
    def max_abs_residual(self):
        return float(np.max(np.abs(self.residual)))


def diameters(state):
    """(max_ij |eta_i - eta_j|, max_ij |v_i - v_j|)."""
    eta = np.ascontiguousarray(state.eta, dtype=float)
    vel = np.ascontiguousarray(state.vel, dtype=float)
    if len(eta) < 2:
        return 0.0, 0.0
    return _backend.max_pair_distance(eta), _backend.max_pair_distance(vel)


def diameter_series(traj):
    """Per-step diameters when the run recorded them, else per sample."""
    if traj.d_eta is not None:
        return DiameterSeries(traj.step_times, traj.d_eta, traj.d_v)
    pairs = [diameters(s) for s in traj.states()]
    return DiameterSeries(traj.times, np.array([a for a, _ in pairs]), np.array([b for _, b in pairs]))


def decay_envelope(series, kernel, cp):
    """Integrated diameter inequality D+ d_v <= -2^(2-p) kappa phi(d_eta) d_v^(p-1).

    The time integral of phi(d_eta) is a trapezoid rule on the series grid.
    """
    t = np.asarray(series.times, dtype=float)
    dv0 = float(series.d_v[0])
    if dv0 == 0.0:
        return np.zeros_like(t)
    integral = cumulative_trapezoid(kernel(np.asarray(series.d_eta, dtype=float)), t, initial=0.0)
    p = cp.p
    if p == 2:
        return dv0 * np.exp(-cp.kappa * integral)
    base = dv0 ** (2.0 - p) + (p - 2.0) * 2.0 ** (2.0 - p) * cp.kappa * integral
    return base ** (-1.0 / (p - 2.0))


def _check_sub3(p):
    if not 2 <= p < 3:
        raise UnsupportedError(f"needs 2 <= p < 3, got p={p}")


def solve_deta_infty(cp, kernel, d_v0, d_eta0):
    """Bound D on the spatial diameter when velocity alignment wins.

    D solves d_v0^(3-p)/(3-p) = 2^(2-p) kappa int_{d_eta0}^D phi.  When the
    full tail cannot absorb the left side the report has conditional_ok=False.
    """
    p = cp.p
    _check_sub3(p)
    if d_v0 < 0 or d_eta0 < 0:
        raise ValueError("diameters must be >= 0")
    scale = 2.0 ** (2.0 - p) * cp.kappa
    need = d_v0 ** (3.0 - p) / (3.0 - p)
    if not need < scale * kernel.tail_integral(d_eta0, math.inf):
        return ThresholdReport(False)
    if need == 0.0:
        return ThresholdReport(True, float(d_eta0), float(kernel(d_eta0)), 0.0)

    def gap(D):
        return scale * kernel.tail_integral(d_eta0, D) - need

    lo, width = float(d_eta0), 1.0
    hi = lo + width
    while gap(hi) < 0:
        lo = hi
        width *= 2.0
        hi = lo + width
    root = bisect(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    return ThresholdReport(True, root, float(kernel(root)), abs(gap(root)))


def explicit_decay_bound(p, kappa, phi_min, d_v0, t):
    """Velocity-diameter bound once phi(d_eta) >= phi_min for all time."""
    _check_sub3(p)
    if not phi_min > 0:
        raise ValueError("phi_min must be > 0")
    t = np.asarray(t, dtype=float)
    if d_v0 == 0:
        out = np.zeros_like(t)
    elif p == 2:
        out = d_v0 * np.exp(-kappa * phi_min * t)
    else:
        out = (d_v0 ** (2.0 - p) + (p - 2.0) * 2.0 ** (2.0 - p) * kappa * phi_min * t) ** (-1.0 / (p - 2.0))
    return out if out.ndim else float(out)


def algebraic_rate_fit(times, d_v, window):
    """Least-squares slope of log d_v against log(1 + t) on ``window``."""
    t = np.asarray(times, dtype=float)
    dv = np.asarray(d_v, dtype=float)
    t1, t2 = window
    sel = (t >= t1) & (t <= t2)
    if sel.sum() < 3:
        raise ValueError(f"window [{t1}, {t2}] holds fewer than 3 samples")
    if np.any(dv[sel] <= 0):
        raise ValueError("d_v must be positive on the fit window")
    slope, _ = np.polyfit(np.log1p(t[sel]), np.log(dv[sel]), 1)
    return float(slope)


def velocity_fluctuation(vel, weights):
    """sum_ij w_i w_j |v_i - v_j|^2, evaluated as 2 sum_i w_i |v_i - mean|^2."""
    vel = np.asarray(vel, dtype=float)
    w = np.asarray(weights, dtype=float)
    if vel.ndim == 1:
        vel = vel[:, None]
    dev = vel - w @ vel
    return 2.0 * float(w @ np.einsum("ij,ij->i", dev, dev))


def velocity_fluctuation_pairs(vel, weights):
    """Direct O(N^2) double sum; reference for ``velocity_fluctuation``."""
    vel = np.asarray(vel, dtype=float)
    w = np.asarray(weights, dtype=float)
    if vel.ndim == 1:
        vel = vel[:, None]
    diff = vel[:, None, :] - vel[None, :, :]
    return float(np.einsum("i,j,ijk,ijk->", w, w, diff, diff))


def energy_report(traj):
    """Kinetic energy, RK4-integrated dissipation and their balance residual."""
    kin = np.asarray(traj.kinetic)
    diss = np.asarray(traj.dissipated)
    return EnergyLedger(traj.step_times, kin, diss, kin + diss - kin[0])

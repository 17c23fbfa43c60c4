"""Particle-vs-reference discrepancies: modulated energies, Wasserstein
distances on empirical measures, comparison-lemma solvers and N-sweeps."""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from . import _backend
from .errors import HypothesisError, UnsupportedError
from .lagrangian import integrate

SMALL_N = 512


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        n = len(pts)
        if n == 0:
            raise ValueError("empirical measure needs at least one point")
        w = np.full(n, 1.0 / n) if self.weights is None else np.array(self.weights, dtype=float)
        if w.shape != (n,) or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive, one per point, and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)


def _as_measure(m):
    return m if isinstance(m, EmpiricalMeasure) else EmpiricalMeasure(m)


def _check_q(q):
    if not q >= 1:
        raise ValueError(f"q must be in [1, inf], got {q}")


def modulated_energy(particles, reference, ensemble, q):
    """(E_q(X|eta), E_q(V|v)) under the product coupling of the N particles
    (weights 1/N) with the reference atoms (weights w_k).  q = inf takes the
    maximum over all (i, k)."""
    _check_q(q)
    w = np.asarray(getattr(ensemble, "weights", ensemble), dtype=float)
    out = []
    for x, y in ((particles.eta, reference.eta), (particles.vel, reference.vel)):
        x = np.ascontiguousarray(x, dtype=float)
        y = np.ascontiguousarray(y, dtype=float)
        if math.isinf(q):
            _, dmax = _backend.cross_moment(x, y, w, 0.0)
            out.append(dmax)
        else:
            total, _ = _backend.cross_moment(x, y, w, float(q))
            out.append((total / len(x)) ** (1.0 / q))
    return out[0], out[1]


@dataclass(frozen=True, eq=False)
class ModulatedReport:
    q: float
    times: np.ndarray
    e_x: np.ndarray
    e_v: np.ndarray

    @property
    def total(self):
        return self.e_x + self.e_v

    @property
    def sup_total(self):
        return float(np.max(self.total))

    @property
    def initial_total(self):
        return float(self.total[0])


def modulated_series(particle_traj, reference_traj, q):
    if not np.array_equal(particle_traj.times, reference_traj.times):
        raise ValueError("particle and reference runs must share sample times")
    ex = np.empty(len(particle_traj.times))
    ev = np.empty_like(ex)
    for k, (ps, rs) in enumerate(zip(particle_traj.states(), reference_traj.states())):
        ex[k], ev[k] = modulated_energy(ps, rs, reference_traj.weights, q)
    return ModulatedReport(q, np.asarray(particle_traj.times), ex, ev)


def _quantile_pairs(mu, nu):
    """Merged-CDF monotone coupling: (mass, x, y) per elementary interval."""
    xo = np.argsort(mu.points[:, 0], kind="stable")
    yo = np.argsort(nu.points[:, 0], kind="stable")
    xs, ws = mu.points[xo, 0], mu.weights[xo]
    ys, vs = nu.points[yo, 0], nu.weights[yo]
    if len(xs) == len(ys) and np.all(ws == ws[0]) and np.all(vs == vs[0]):
        return np.full(len(xs), 1.0 / len(xs)), xs, ys
    cx = np.cumsum(ws)
    cy = np.cumsum(vs)
    cx[-1] = cy[-1] = 1.0
    levels = np.union1d(cx, cy)
    mass = np.diff(np.concatenate([[0.0], levels]))
    mid = levels - 0.5 * mass
    ix = np.minimum(np.searchsorted(cx, mid), len(xs) - 1)
    iy = np.minimum(np.searchsorted(cy, mid), len(ys) - 1)
    keep = mass > 1e-14
    return mass[keep], xs[ix[keep]], ys[iy[keep]]


def wasserstein_1d(mu, nu, q):
    """Exact W_q on the line via the monotone (quantile) coupling."""
    _check_q(q)
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.dim != 1 or nu.dim != 1:
        raise UnsupportedError("wasserstein_1d needs one-dimensional measures")
    mass, x, y = _quantile_pairs(mu, nu)
    gap = np.abs(x - y)
    if math.isinf(q):
        return float(gap.max())
    return float(mass @ gap ** q) ** (1.0 / q)


def _equal_sized(mu, nu):
    mu, nu = _as_measure(mu), _as_measure(nu)
    if len(mu) != len(nu):
        raise ValueError(f"measures have different sizes {len(mu)} and {len(nu)}")
    if mu.dim != nu.dim:
        raise ValueError("measures live in different dimensions")
    if len(mu) > SMALL_N:
        raise ValueError(f"exact solvers are limited to N <= {SMALL_N}")
    n = len(mu)
    if not (np.allclose(mu.weights, 1.0 / n, rtol=0, atol=1e-15)
            and np.allclose(nu.weights, 1.0 / n, rtol=0, atol=1e-15)):
        raise ValueError("exact solvers need equal weights")
    return mu, nu


def _distance_matrix(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def wasserstein_exact_smallN(mu, nu, q):
    """W_q between equal-size, equal-weight empiricals by optimal assignment."""
    _check_q(q)
    if math.isinf(q):
        return wasserstein_infty_smallN(mu, nu)
    mu, nu = _equal_sized(mu, nu)
    cost = _distance_matrix(mu.points, nu.points) ** q
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / len(mu)) ** (1.0 / q)


def _has_perfect_matching(allowed):
    match = maximum_bipartite_matching(csr_matrix(allowed), perm_type="column")
    return bool(np.all(match >= 0))


def wasserstein_infty_smallN(mu, nu):
    """Bottleneck matching value: smallest r admitting a perfect matching with edges <= r."""
    mu, nu = _equal_sized(mu, nu)
    dist = _distance_matrix(mu.points, nu.points)
    cand = np.unique(dist)
    lo, hi = 0, len(cand) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _has_perfect_matching(dist <= cand[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(cand[lo])


def _lift(state):
    return np.hstack([np.asarray(state.eta, dtype=float), np.asarray(state.vel, dtype=float)])


def product_bound(e_x, e_v, q):
    """2^(1-1/q) (E_X^q + E_V^q)^(1/q); 2 max(E_X, E_V) for q = inf."""
    if math.isinf(q):
        return 2.0 * max(e_x, e_v)
    return 2.0 ** (1.0 - 1.0 / q) * (e_x ** q + e_v ** q) ** (1.0 / q)


def phase_space_product_bound(particles, reference, ensemble, q, exact=True):
    """(bound, exact) comparing particles with the mono-kinetic lift of the atoms.

    The lift puts mass w_k at (eta_k, v_k), i.e. it assumes singleton fibres.
    ``exact`` is None unless both sides are equal-size equal-weight and small.
    """
    e_x, e_v = modulated_energy(particles, reference, ensemble, q)
    bound = product_bound(e_x, e_v, q)
    value = None
    w = np.asarray(getattr(ensemble, "weights", ensemble), dtype=float)
    n = len(particles.eta)
    if exact and len(w) == n <= SMALL_N and np.allclose(w, 1.0 / n, rtol=0, atol=1e-15):
        value = wasserstein_exact_smallN(_lift(particles), _lift(reference), q)
    return bound, value


def _bl_dictionary(dim, center, seed=0xB1):
    """64 vector fields R^d -> R^d with sup norm <= 1 and Lipschitz constant <= 1."""
    rng = np.random.Generator(np.random.Philox(seed))
    fields = []
    for b in range(dim):
        for a in range(dim):
            for s in (1.0, -1.0):
                fields.append(("ramp", a, b, s, center[b]))
    for a in range(dim):
        fields.append(("const", a))
    while len(fields) < 40:
        k = rng.normal(size=dim)
        k *= rng.uniform(0.25, 3.0) / np.linalg.norm(k)
        fields.append(("sin", int(rng.integers(dim)), k, rng.uniform(0, 2 * math.pi)))
    while len(fields) < 64:
        n = rng.normal(size=dim)
        n /= np.linalg.norm(n)
        e = rng.normal(size=dim)
        e /= np.linalg.norm(e)
        fields.append(("tent", e, n, float(n @ center) + rng.uniform(-1.5, 1.5)))
    return fields


def _eval_field(f, x):
    n, dim = x.shape
    out = np.zeros((n, dim))
    kind = f[0]
    if kind == "ramp":
        _, a, b, s, c = f
        out[:, a] = s * np.clip(x[:, b] - c, -1.0, 1.0)
    elif kind == "const":
        out[:, f[1]] = 1.0
    elif kind == "sin":
        _, a, k, ph = f
        out[:, a] = np.sin(x @ k + ph) / max(1.0, float(np.linalg.norm(k)))
    else:
        _, e, nrm, c = f
        out = np.maximum(0.0, 1.0 - np.abs(x @ nrm - c))[:, None] * e[None, :]
    return out


@dataclass(frozen=True)
class BLReport:
    rhs_bound: float
    lower_estimate: float

    @property
    def ok(self):
        return self.lower_estimate <= self.rhs_bound * (1.0 + 1e-12) + 1e-15


def bl_momentum_bound(particles, reference, ensemble, q):
    """Bounded-Lipschitz momentum discrepancy: analytic upper bound and a
    64-field dictionary lower estimate (an estimate, not the metric)."""
    if q == 1:
        raise UnsupportedError("q = 1 makes the conjugate exponent degenerate")
    _check_q(q)
    w = np.asarray(getattr(ensemble, "weights", ensemble), dtype=float)
    xv = np.asarray(particles.vel, dtype=float)
    speed = np.linalg.norm(xv, axis=1)
    if math.isinf(q):
        moment = float(np.mean(speed))
    else:
        qc = q / (q - 1.0)
        moment = float(np.mean(speed ** qc)) ** (1.0 / qc)
    e_x, e_v = modulated_energy(particles, reference, w, q)
    rhs = moment * e_x + e_v
    eta = np.asarray(reference.eta, dtype=float)
    vel = np.asarray(reference.vel, dtype=float)
    x = np.asarray(particles.eta, dtype=float)
    center = w @ eta
    best = 0.0
    for f in _bl_dictionary(eta.shape[1], center):
        ref = float(np.einsum("k,kd,kd->", w, _eval_field(f, eta), vel))
        par = float(np.einsum("id,id->", _eval_field(f, x), xv)) / len(x)
        best = max(best, abs(ref - par))
    return BLReport(rhs, best)


@dataclass(frozen=True)
class IntegralBoundResult:
    bound: float
    numeric_integral: float
    ok: bool


def _rk4(fun, y, t, h):
    k1 = fun(t, y)
    k2 = fun(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = fun(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = fun(t + h, y + h * k3)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def gronwall_integral_bound(a, b, f0, g0, steps_per_unit=200):
    """Integrate f' = g, g' = -a g + b f e^(-a t) and compare int g with
    (a g0 + b f0)/(a^2 - b).

    The run stops at t = 50/a; the remaining tail is bounded analytically
    from g' <= -a g + b f(inf) e^(-a t).
    """
    if not (b > 0 and a > math.sqrt(b)):
        raise HypothesisError(f"needs a > sqrt(b) > 0, got a={a}, b={b}")
    if f0 < 0 or g0 < 0:
        raise ValueError("f0 and g0 must be >= 0")
    bound = (a * g0 + b * f0) / (a * a - b)
    horizon = 50.0 / a
    n = max(1000, int(math.ceil(horizon * a * steps_per_unit)))
    h = horizon / n

    def rhs(t, y):
        return np.array([y[1], -a * y[1] + b * y[0] * math.exp(-a * t), y[1]])

    y = np.array([float(f0), float(g0), 0.0])
    for k in range(n):
        y = _rk4(rhs, y, k * h, h)
    f_T, g_T, integral = y
    decay = b * math.exp(-a * horizon) / (a * a)
    tail = (g_T / a + decay * f_T) / (1.0 - decay)
    numeric = integral + tail
    return IntegralBoundResult(bound, numeric, numeric <= bound * (1.0 + 1e-6) + 1e-300)


@dataclass(frozen=True, eq=False)
class DampedBoundResult:
    bound_const: float
    times: np.ndarray
    f: np.ndarray
    g: np.ndarray
    bound_holds: bool
    g_decays: bool


def gronwall_damped_bound(c0, h_times, h_values, f0, g0, horizon=None, steps=20000):
    """Integrate f' = g, g' = -c0 g + h f for sampled h >= 0 (linear interpolation).

    Checks f + g <= max(c0, 1/c0) e^(|h|_1 / c0) (f0 + g0) and g(T) <= 1e-3 g0.
    """
    if not c0 > 0:
        raise ValueError("c0 must be > 0")
    ht = np.asarray(h_times, dtype=float)
    hv = np.asarray(h_values, dtype=float)
    if np.any(hv < 0):
        raise ValueError("h must be nonnegative")
    T = float(ht[-1]) if horizon is None else float(horizon)
    h_l1 = float(trapezoid(hv, ht))
    const = max(c0, 1.0 / c0) * math.exp(h_l1 / c0) * (f0 + g0)
    dt = T / steps

    def rhs(t, y):
        return np.array([y[1], -c0 * y[1] + np.interp(t, ht, hv, right=0.0) * y[0]])

    y = np.array([float(f0), float(g0)])
    ts = np.linspace(0.0, T, steps + 1)
    fs = np.empty(steps + 1)
    gs = np.empty(steps + 1)
    fs[0], gs[0] = y
    for k in range(steps):
        y = _rk4(rhs, y, ts[k], dt)
        fs[k + 1], gs[k + 1] = y
    holds = bool(np.all(fs + gs <= const * (1.0 + 1e-9) + 1e-300))
    return DampedBoundResult(const, ts, fs, gs, holds, bool(gs[-1] <= 1e-3 * g0))


@dataclass(frozen=True)
class StabilityRow:
    n: int
    seed: int
    q: float
    sup_total: float
    initial_total: float
    sup_ratio: float
    terminal_velocity_ratio: float
    momentum_mismatch: float
    d_v_particles0: float
    wall_time_s: float = field(default=0.0, compare=False)


def sample_particles(ensemble, vel0, n, seed):
    """i.i.d. draws from the atomic measure, velocities u0(x_i), then a uniform
    shift so the particle momentum equals the reference momentum."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(n)])))
    idx = rng.choice(len(ensemble.weights), size=n, p=ensemble.weights)
    x = np.array(ensemble.positions[idx])
    v = np.array(vel0[idx])
    v += ensemble.weights @ vel0 - v.mean(axis=0)
    return x, v


def stability_experiment(ensemble, vel0, kernel, cp, n_grid, seeds, q, horizon, dt,
                         stride=1, threads=None, reference=None):
    """Sweep particle counts and seeds; one row per (N, seed, q).

    ``q`` may be a single order or a list.  sup_ratio = sup_t(E_X + E_V) /
    (E_X + E_V)(0) (reported as 1 when both vanish); terminal_velocity_ratio
    = E_V(T) / E_V(0).
    """
    vel0 = np.asarray(vel0, dtype=float)
    qs = list(q) if isinstance(q, (list, tuple)) else [q]
    if reference is None:
        reference = integrate(ensemble.positions, vel0, ensemble.weights, kernel, cp, horizon, dt,
                              stride=stride, record_diameters=False, threads=threads)
    rows = []
    for n in n_grid:
        for seed in seeds:
            start = time.perf_counter()
            x, v = sample_particles(ensemble, vel0, n, seed)
            part = integrate(x, v, np.full(n, 1.0 / n), kernel, cp, horizon, dt, stride=stride,
                             record_diameters=False, threads=threads)
            mismatch = float(np.max(np.abs(part.momentum - reference.momentum)))
            dvp = _backend.max_pair_distance(np.ascontiguousarray(v))
            sim_time = time.perf_counter() - start
            for qq in qs:
                start = time.perf_counter()
                rep = modulated_series(part, reference, qq)
                sup, init = rep.sup_total, rep.initial_total
                ratio = 1.0 if sup == 0 and init == 0 else sup / init
                ev0 = rep.e_v[0]
                term = 0.0 if ev0 == 0 and rep.e_v[-1] == 0 else rep.e_v[-1] / ev0
                rows.append(StabilityRow(int(n), int(seed), float(qq), sup, init, ratio, term,
                                         mismatch, dvp, sim_time + time.perf_counter() - start))
    return rows


def finite_time_growth_constant(kernel, cp, d_v_particles0, horizon):
    """e^(max(1, 2 kappa L_phi d_V(0)^(p-1)) T): finite-time stability factor for p >= 2."""
    rate = max(1.0, 2.0 * cp.kappa * kernel.lipschitz_constant * d_v_particles0 ** (cp.p - 1.0))
    return math.exp(rate * horizon)


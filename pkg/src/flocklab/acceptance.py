"""Acceptance checks 1-14, shared by ``flocklab verify`` and the test suite.

Runs are cached per process so checks that look at the same simulations
(maximum principle, energy ledger, envelopes, determinism) integrate once.
"""

import atexit
import filecmp
import json
import math
import os
import shutil
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import analytics, euler, meanfield, runner, thresholds
from .analytics import diameters
from .config import build_scenario, preset_config
from .kernels import AtomEnsemble, CouplingParams, Kernel
from .lagrangian import integrate, simulate, two_body_oracle
from .presets import PRESETS


@dataclass(frozen=True)
class Result:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f}s)"


_cache = {}
_workdir = None


def _tmp():
    global _workdir
    if _workdir is None:
        _workdir = tempfile.mkdtemp(prefix="flocklab-accept-")
        atexit.register(shutil.rmtree, _workdir, True)
    return _workdir


def command_run(preset, command=None, threads=1, **overrides):
    """Run a preset's command into a private directory; cached on all inputs."""
    command = command or runner.PRESET_COMMAND[preset]
    key = (preset, command, threads, json.dumps(overrides, sort_keys=True))
    if key not in _cache:
        out = os.path.join(_tmp(), f"run{len(_cache):03d}")
        cfg = preset_config(preset, **overrides)
        result = runner.COMMANDS[command](cfg, out, threads)
        result["out_dir"] = out
        _cache[key] = result
    return _cache[key]


def _flock(seed, p, dt, threads):
    """Heavy-tail flock run; the dt/2 companions skip diameters (only the ledger is used)."""
    if dt == 1e-3:
        # the preset's own (seed, p) is left implicit so the determinism check reuses it
        defaults = PRESETS["heavy-tail-flock"]
        overrides = {k: v for k, v in (("seed", seed), ("p", p)) if v != defaults[k]}
        return command_run("heavy-tail-flock", "simulate", threads, **overrides)["trajectory"]
    key = ("flock", seed, p, dt, threads)
    if key not in _cache:
        sc = build_scenario(preset_config("heavy-tail-flock", seed=seed, p=p))
        _cache[key] = runner.run_simulation(sc, threads, record_diameters=False, dt=dt)
    return _cache[key]


FLOCK_SEEDS = (1, 2, 3, 4, 5)
FLOCK_PS = (2, 2.5, 3)


def _fmt(x):
    return f"{x:.3g}"


# --- individual criteria -------------------------------------------------------------

def check_two_body_p2(threads=1):
    errs = []
    vals = None
    for overrides in ({}, {"dt": 5e-4, "sample_stride": 20}):
        res = command_run("two-body-p2", "simulate", threads, **overrides)
        errs.append(res["max_rel_error"])
        if vals is None:
            traj = res["trajectory"]
            k = int(np.argmin(np.abs(traj.times - 1.0)))
            vals = (traj.eta[k, 1, 0] - traj.eta[k, 0, 0], traj.vel[k, 1, 0] - traj.vel[k, 0, 0])
    ratio = errs[0] / errs[1] if errs[1] > 0 else math.inf
    ok_vals = abs(vals[0] - 0.683940) <= 5e-7 and abs(vals[1] + 0.183940) <= 5e-7
    ok = errs[0] <= 1e-6 and ratio >= 12 and ok_vals
    return ok, (f"max_rel_error={_fmt(errs[0])} halving_ratio={ratio:.2f} "
                f"d(1)={vals[0]:.6f} w(1)={vals[1]:.6f}")


def check_two_body_p3(threads=1):
    traj = command_run("two-body-p3", "simulate", threads)["trajectory"]
    k = int(np.argmin(np.abs(traj.times - 1.0)))
    w1 = abs(traj.vel[k, 1, 0] - traj.vel[k, 0, 0])
    return abs(w1 - 0.5) <= 1e-6, f"|w(1)|={w1:.12f}"


def _momentum_drift(traj):
    scale = max(float(np.linalg.norm(traj.momentum[0])), float(traj.vmax[0]))
    return float(np.max(np.linalg.norm(traj.momentum - traj.momentum[0], axis=1))) / scale


def check_maximum_principle(threads=1):
    worst_v = worst_m = 0.0
    for seed in FLOCK_SEEDS:
        for p in FLOCK_PS:
            traj = _flock(seed, p, 1e-3, threads)
            worst_v = max(worst_v, float(np.max(traj.vmax)) / float(traj.vmax[0]))
            worst_m = max(worst_m, _momentum_drift(traj))
    ok = worst_v <= 1 + 1e-9 and worst_m <= 1e-10
    return ok, f"max |v|/|u0|_inf={worst_v:.15f} max momentum drift={_fmt(worst_m)} (15 runs)"


def check_energy_ledger(threads=1):
    worst = 0.0
    min_ratio = math.inf
    for seed in FLOCK_SEEDS:
        for p in FLOCK_PS:
            r1 = analytics.energy_report(_flock(seed, p, 1e-3, threads)).max_abs_residual
            r2 = analytics.energy_report(_flock(seed, p, 5e-4, threads)).max_abs_residual
            worst = max(worst, r1)
            min_ratio = min(min_ratio, r1 / r2 if r2 > 0 else math.inf)
    ok = worst <= 1e-6 and min_ratio >= 8
    return ok, f"max residual={_fmt(worst)} min halving ratio={min_ratio:.2f} (15 runs)"


def check_envelopes(threads=1):
    worst = 0.0
    for seed in FLOCK_SEEDS:
        for p in FLOCK_PS:
            traj = _flock(seed, p, 1e-3, threads)
            sc = build_scenario(preset_config("heavy-tail-flock", seed=seed, p=p))
            series = analytics.diameter_series(traj)
            env = analytics.decay_envelope(series, sc.kernel, sc.cp)
            worst = max(worst, float(np.max(series.d_v / env)))
    res = command_run("p25-algebraic", "diagnose", threads)
    traj = res["trajectory"]
    series = analytics.diameter_series(traj)
    slope = analytics.algebraic_rate_fit(series.times, series.d_v, (10, 100))
    ok = worst <= 1 + 1e-6 and slope <= -0.8
    return ok, f"max d_v/envelope={worst:.12f} p=2.5 slope on [10,100]={slope:.3f}"


def check_threshold_solver(threads=1):
    cp = CouplingParams(2, 1.0)
    kernel = Kernel.powerlaw(1.0)
    rep = analytics.solve_deta_infty(cp, kernel, 1.0, 0.0)
    D = rep.d_eta_infty
    ens = AtomEnsemble([[0.0], [0.0]])
    traj = simulate(ens, [[0.5], [-0.5]], kernel, cp, 30.0, dt=1e-3, sample_stride=100, threads=threads)
    series = analytics.diameter_series(traj)
    bound = analytics.explicit_decay_bound(2, 1.0, rep.phi_at_infty, 1.0, series.times)
    d_ok = float(np.max(series.d_eta)) <= (math.e - 1) * (1 + 1e-6)
    v_ok = bool(np.all(series.d_v <= bound * (1 + 1e-6)))
    ok = abs(D - (math.e - 1)) <= 1e-10 and d_ok and v_ok
    return ok, (f"d_eta_inf-(e-1)={D - (math.e - 1):.2e} max d_eta={np.max(series.d_eta):.12f} "
                f"max d_v/bound={np.max(series.d_v / bound):.6f}")


def check_dichotomy(threads=1):
    sub = command_run("subcritical-1d", "threshold", threads)
    sup = command_run("supercritical-1d", "threshold", threads)
    ratio = float(np.min(sub["monitor"].min_scaled_gap))
    t_c = sup["monitor"].first_collision_time
    bound = sup["effective"].t_c_bound
    crossings = max(int(thresholds.crossing_counts(r["trajectory"]).max()) for r in (sub, sup))
    ok = (sub["effective"].subcritical and not sub["monitor"].collided and ratio >= 1 - 1e-6
          and t_c is not None and abs(t_c - math.log(2)) <= 1e-3 and t_c <= bound and crossings <= 1)
    return ok, (f"subcritical min ratio={ratio:.9f}; collision t={t_c:.6f} (ln2={math.log(2):.6f}) "
                f"bound={bound:g}; max crossings={crossings}")


def check_eulerian(threads=1):
    traj = _flock(1, 2, 1e-3, threads)
    w = traj.weights
    state0 = traj.state(0)
    x = state0.eta
    dmin = float(np.min(np.linalg.norm(x[:, None] - x[None], axis=-1) + np.eye(len(x)) * 1e9))
    fine = dmin / (2.0 * math.sqrt(x.shape[1]))
    snap0 = euler.eulerian_snapshot(state0, w, euler.disintegrate(state0, w, fine))
    tau0 = euler.reynolds_norm(snap0)
    rng = np.random.Generator(np.random.Philox(8))
    cp = traj.cp
    worst_eig = math.inf
    worst_trace = worst_de = worst_k = 0.0
    h0 = runner.default_cell_size(state0)
    for h in (h0, 4 * h0):
        for state in traj.states():
            dis = euler.disintegrate(state, w, h)
            snap = euler.eulerian_snapshot(state, w, dis)
            scale = 1.0 + float(w @ np.einsum("ij,ij->i", state.vel, state.vel))
            worst_trace = max(worst_trace, euler.trace_identity_residual(snap, state, w) / scale)
            worst_eig = min(worst_eig, float(np.min(np.linalg.eigvalsh(snap.theta))))
            worst_de = max(worst_de, runner.delta_e_residual(state, w, dis))
            for _ in range(4):
                z, zeta = rng.integers(dis.n_cells, size=2)
                k = euler.defect_kernel(snap, state, w, dis, int(z), int(zeta), cp)
                worst_k = max(worst_k, float(np.max(np.abs(k))))
    ok = tau0 == 0.0 and worst_eig >= -1e-12 and worst_trace <= 1e-10 and worst_k <= 1e-12 and worst_de <= 1e-10
    return ok, (f"tau(0)={tau0:g} min eig={worst_eig:.2e} trace residual={worst_trace:.2e} "
                f"defect kernel={worst_k:.2e} delta-E residual={worst_de:.2e}")


def check_closure(threads=1):
    res = command_run("supercritical-1d", "reconstruct", threads)
    header = res["header"]
    rows = np.array(res["rows"], dtype=float)
    col = {name: i for i, name in enumerate(header)}
    rey = rows[:, col["reynolds_norm"]]
    traj = res["trajectory"]
    d_v = np.array([diameters(s)[1] for s in traj.states()])
    vsupp = rows[:, col["v_support_diameter"]]
    ubar = rows[:, [i for n, i in col.items() if n.startswith("ubar_")]]
    drift = float(np.max(np.abs(ubar - ubar[0])))
    peak = float(np.max(rey))
    ok = (peak > 0 and rey[-1] <= 1e-2 * peak and bool(np.all(vsupp <= d_v))
          and vsupp[-1] <= 1e-3 * d_v[0] and drift <= 1e-10)
    return ok, (f"reynolds peak={peak:.3g} final={rey[-1]:.3g} final support/d_v(0)={vsupp[-1] / d_v[0]:.2e} "
                f"ubar drift={drift:.2e}")


def check_large_kappa(threads=1):
    res = command_run("large-kappa-euler", "threshold", threads)
    rep = res["large_kappa"]
    cmp_ = res["certificate"]
    ok = (abs(cmp_.measured - 0.5) <= 1e-3 and abs(rep.predicted_gradient_integral - 0.5) <= 1e-12
          and rep.satisfied and cmp_.ok and cmp_.measured < 1)
    return ok, (f"measured={cmp_.measured:.9f} bound={rep.predicted_gradient_integral:g} "
                f"threshold={rep.threshold:g} certified={cmp_.measured < 1}")


def check_gronwall(threads=1):
    rng = np.random.Generator(np.random.Philox(11))
    worst_ratio = 0.0
    integral_ok = True
    for _ in range(10):
        b = rng.uniform(0.1, 4.0)
        a = math.sqrt(b) * rng.uniform(1.1, 3.0)
        f0, g0 = rng.uniform(0.0, 2.0, size=2)
        r = meanfield.gronwall_integral_bound(a, b, f0, g0)
        integral_ok &= bool(r.ok)
        worst_ratio = max(worst_ratio, r.numeric_integral / r.bound)
    damped_ok = True
    worst_g = 0.0
    t = np.linspace(0.0, 60.0, 6001)
    for _ in range(10):
        c0 = rng.uniform(0.5, 2.0)
        amp, lam, om = rng.uniform(0.1, 1.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 5.0)
        h = amp * np.exp(-lam * t) * (1.0 + 0.5 * np.sin(om * t))
        f0, g0 = rng.uniform(0.1, 2.0, size=2)
        r = meanfield.gronwall_damped_bound(c0, t, h, f0, g0)
        damped_ok &= r.bound_holds and r.g_decays
        worst_g = max(worst_g, r.g[-1] / g0)
    return integral_ok and damped_ok, (f"max integral/bound={worst_ratio:.6f} damped bound holds={damped_ok} "
                                f"max g(T)/g0={worst_g:.2e}")


def _mono_kinetic_pair(threads):
    key = ("mono", threads)
    if key not in _cache:
        sc = build_scenario(preset_config("heavy-tail-flock", seed=3,
                                          ensemble={"sampler": "uniform-ball", "R": 1.0, "N": 64}))
        x, v = meanfield.sample_particles(sc.ensemble, sc.vel0, 64, 5)
        ref = integrate(sc.ensemble.positions, sc.vel0, sc.ensemble.weights, sc.kernel, sc.cp, 5.0, 1e-2,
                        stride=10, record_diameters=False, threads=threads)
        part = integrate(x, v, np.full(64, 1 / 64), sc.kernel, sc.cp, 5.0, 1e-2, stride=10,
                         record_diameters=False, threads=threads)
        _cache[key] = (sc, ref, part)
    return _cache[key]


def check_wasserstein(threads=1):
    rng = np.random.Generator(np.random.Philox(12))
    worst = 0.0
    for k in range(200):
        n = int(rng.integers(2, 41))
        a = rng.normal(size=n)
        b = rng.normal(loc=rng.uniform(-1, 1), scale=rng.uniform(0.5, 2), size=n)
        q = (1.0, 2.0, 3.0)[k % 3]
        worst = max(worst, abs(meanfield.wasserstein_exact_smallN(a, b, q) - meanfield.wasserstein_1d(a, b, q)))
        worst = max(worst, abs(meanfield.wasserstein_infty_smallN(a, b) - meanfield.wasserstein_1d(a, b, math.inf)))
    sc, ref, part = _mono_kinetic_pair(threads)
    ok_bound = True
    tight = 0.0
    for q in (2.0, math.inf):
        for ps, rs in zip(part.states(), ref.states()):
            bound, exact = meanfield.phase_space_product_bound(ps, rs, sc.ensemble, q)
            ok_bound &= exact is not None and exact <= bound
            tight = max(tight, exact / bound if bound > 0 else 0.0)
    return worst <= 1e-10 and ok_bound, (f"max 1D disagreement={worst:.2e} product bound holds={ok_bound} "
                                         f"max exact/bound={tight:.3f}")


def check_meanfield(threads=1):
    rows = command_run("meanfield-sweep", "meanfield", threads)["rows"]
    ratios = np.array([r.sup_ratio for r in rows])
    spread = float(ratios.max() / ratios.min())
    term = max(r.terminal_velocity_ratio for r in rows)
    res3 = command_run("meanfield-sweep", "meanfield", threads, p=3, T=5.0)
    table3 = res3["table"]
    growth_ok = all(row[3] <= row[8] * 1.1 for row in table3)
    worst3 = max(row[3] / row[8] for row in table3)
    ok = spread <= 1.5 and term <= 0.1 and growth_ok
    return ok, (f"p=2 ratio spread across N={spread:.4f} max E_V(T)/E_V(0)={term:.2e}; "
                f"p=3 max ratio/growth constant={worst3:.2e}")


def _csv_files(out_dir):
    return sorted(f for f in os.listdir(out_dir) if f.endswith(".csv") and f != "timing.csv")


# cheap presets that are also rerun at one thread into a fresh directory
_REPEATED = ("two-body-p2", "subcritical-1d")


def check_determinism(threads=1):
    mismatches = []
    for preset in sorted(PRESETS):
        base = command_run(preset, threads=1)["out_dir"]
        for nthreads in (2, 8):
            other = command_run(preset, threads=nthreads)["out_dir"]
            files = _csv_files(base)
            if files != _csv_files(other) or not files:
                mismatches.append(f"{preset}@{nthreads}: file sets differ")
                continue
            for f in files:
                if not filecmp.cmp(os.path.join(base, f), os.path.join(other, f), shallow=False):
                    mismatches.append(f"{preset}@{nthreads}:{f}")
        if preset in _REPEATED:
            again = os.path.join(_tmp(), f"again-{preset}")
            runner.COMMANDS[runner.PRESET_COMMAND[preset]](preset_config(preset), again, 1)
            for f in _csv_files(base):
                if not filecmp.cmp(os.path.join(base, f), os.path.join(again, f), shallow=False):
                    mismatches.append(f"{preset} repeat:{f}")
    return not mismatches, ("all CSVs byte-identical for 8 presets x threads {1,2,8}" if not mismatches
                            else "differ: " + ", ".join(mismatches))


CRITERIA = [
    (1, "two-body oracle p=2", check_two_body_p2),
    (2, "two-body oracle p=3", check_two_body_p3),
    (3, "maximum principle and momentum", check_maximum_principle),
    (4, "energy ledger", check_energy_ledger),
    (5, "decay envelopes", check_envelopes),
    (6, "threshold solver", check_threshold_solver),
    (7, "1D dichotomy", check_dichotomy),
    (8, "Eulerian reconstruction", check_eulerian),
    (9, "asymptotic closure", check_closure),
    (10, "large-coupling certificate", check_large_kappa),
    (11, "comparison lemmas", check_gronwall),
    (12, "Wasserstein stack", check_wasserstein),
    (13, "mean-field uniformity", check_meanfield),
    (14, "determinism", check_determinism),
]


def run_one(number, threads=1):
    for num, title, fn in CRITERIA:
        if num == number:
            start = time.perf_counter()
            try:
                passed, detail = fn(threads)
            except Exception as exc:  # report, don't abort the remaining checks
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            return Result(num, title, bool(passed), detail, time.perf_counter() - start)
    raise ValueError(f"no criterion {number}")


def run_all(only=None, threads=1, echo=None):
    results = []
    for num, _, _ in CRITERIA:
        if only and num not in only:
            continue
        res = run_one(num, threads)
        results.append(res)
        if echo:
            echo(res.line())
    return results

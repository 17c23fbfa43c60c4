"""Subcommand implementations: each builds the scenario, runs it and writes artifacts."""

import os
from dataclasses import replace

import numpy as np

from . import analytics, euler, io, meanfield, thresholds
from .analytics import diameters
from .config import build_scenario
from .errors import BlowUpError, HypothesisError, UnsupportedError
from .kernels import CONSTANT
from .lagrangian import default_timestep, injectivity_certificate, simulate, two_body_oracle


def run_dt(sc):
    """Configured step, or the stability-scaled default for this scenario."""
    if sc.config.dt is not None:
        return sc.config.dt
    u0_sup = float(np.max(np.linalg.norm(sc.vel0, axis=1)))
    return default_timestep(sc.ensemble, sc.kernel, sc.cp, u0_sup)


def run_simulation(sc, threads=None, with_jacobians=False, record_diameters=True, dt=None):
    cfg = sc.config
    grad = None
    if with_jacobians:
        if sc.grad_u0 is None:
            raise UnsupportedError("Jacobians need a closed-form u0 (not velocities from a file)")
        grad = sc.grad_u0
    return simulate(sc.ensemble, sc.vel0, sc.kernel, sc.cp, cfg.T, dt=dt or run_dt(sc),
                    sample_stride=cfg.sample_stride, with_jacobians=with_jacobians, grad_u0=grad,
                    record_diameters=record_diameters, threads=threads)


def _sample_steps(traj):
    return np.rint(np.asarray(traj.times) / traj.dt).astype(int)


def timeseries_rows(traj):
    d = traj.eta.shape[2]
    header = (["step", "t", "kinetic", "dissipated", "ledger_residual", "vmax", "d_eta", "d_v"]
              + [f"momentum_{a}" for a in range(d)] + [f"center_{a}" for a in range(d)])
    rows = []
    e0 = traj.kinetic[0]
    for k in _sample_steps(traj):
        de = traj.d_eta[k] if traj.d_eta is not None else float("nan")
        dv = traj.d_v[k] if traj.d_v is not None else float("nan")
        rows.append([int(k), traj.step_times[k], traj.kinetic[k], traj.dissipated[k],
                     traj.kinetic[k] + traj.dissipated[k] - e0, traj.vmax[k], de, dv]
                    + list(traj.momentum[k]) + list(traj.center[k]))
    return header, rows


def oracle_applicable(sc):
    w = sc.ensemble.weights
    return sc.ensemble.size == 2 and sc.kernel.family == CONSTANT and w[0] == w[1]


def oracle_rows(sc, traj):
    """Two-atom constant-kernel run against the closed form: relative errors per sample."""
    d = traj.eta[:, 1, :] - traj.eta[:, 0, :]
    w = traj.vel[:, 1, :] - traj.vel[:, 0, :]
    dim = d.shape[1]
    header = (["t"] + [f"d_{a}" for a in range(dim)] + [f"w_{a}" for a in range(dim)]
              + [f"d_oracle_{a}" for a in range(dim)] + [f"w_oracle_{a}" for a in range(dim)]
              + ["rel_error", "max_rel_error"])
    rows = []
    worst = 0.0
    for k, t in enumerate(traj.times):
        do, wo = two_body_oracle(sc.cp, sc.kernel.param, w[0], d[0], float(t))
        err = 0.0
        for sim, ref in ((d[k], do), (w[k], wo)):
            scale = float(np.linalg.norm(ref))
            gap = float(np.linalg.norm(sim - ref))
            err = max(err, gap / scale if scale > 0 else gap)
        worst = max(worst, err)
        rows.append([t] + list(d[k]) + list(w[k]) + list(do) + list(wo) + [err, worst])
    return header, rows, worst


def _prepare(out_dir):
    if out_dir is not None:
        io.ensure_dir(out_dir)
    return out_dir


def _guarded(out_dir, command, cfg, body):
    """Run ``body``; on blow-up keep partial artifacts and drop a FAILED marker."""
    try:
        return body()
    except BlowUpError as exc:
        if out_dir is not None:
            partial = getattr(exc, "partial", None)
            if partial:
                rows = [[t, e] for t, e in zip(partial["step_times"], partial["kinetic"])]
                io.write_csv(os.path.join(out_dir, "partial_timeseries.csv"), ["t", "kinetic"], rows)
            io.write_manifest(out_dir, command, cfg, {"status": "failed"})
            io.mark_failed(out_dir, str(exc))
        raise


def cmd_simulate(cfg, out_dir=None, threads=None):
    _prepare(out_dir)

    def body():
        sc = build_scenario(cfg)
        traj = run_simulation(sc, threads)
        result = {"scenario": sc, "trajectory": traj, "files": []}
        if oracle_applicable(sc):
            header, rows, worst = oracle_rows(sc, traj)
            result["max_rel_error"] = worst
            if out_dir:
                io.write_csv(os.path.join(out_dir, "oracle.csv"), header, rows)
                result["files"].append("oracle.csv")
        if out_dir:
            header, rows = timeseries_rows(traj)
            io.write_csv(os.path.join(out_dir, "timeseries.csv"), header, rows)
            result["files"].append("timeseries.csv")
            if cfg.dump_states:
                for k, state in enumerate(traj.states()):
                    io.write_state(out_dir, k, sc.ensemble.weights, state)
            io.write_manifest(out_dir, "simulate", cfg, {"dt_used": traj.dt, "samples": len(traj)})
        return result

    return _guarded(out_dir, "simulate", cfg, body)


def diagnostics(sc, traj):
    """Envelope, ledger, maximum principle and threshold quantities for a run."""
    series = analytics.diameter_series(traj)
    env = analytics.decay_envelope(series, sc.kernel, sc.cp)
    ledger = analytics.energy_report(traj)
    u0_sup = float(traj.vmax[0])
    mom = np.linalg.norm(traj.momentum - traj.momentum[0], axis=1)
    mom_scale = max(float(np.linalg.norm(traj.momentum[0])), u0_sup, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        env_ratio = np.where(env > 0, series.d_v / env, np.where(series.d_v > 0, np.inf, 0.0))
    items = [
        ("max_ledger_residual", ledger.max_abs_residual),
        ("max_vmax_ratio", float(np.max(traj.vmax)) / u0_sup if u0_sup > 0 else 0.0),
        ("max_momentum_drift_rel", float(np.max(mom)) / mom_scale),
        ("max_envelope_ratio", float(np.max(env_ratio))),
        ("heavy_tailed", sc.kernel.heavy_tailed),
    ]
    if 2 <= sc.cp.p < 3:
        rep = analytics.solve_deta_infty(sc.cp, sc.kernel, float(series.d_v[0]), float(series.d_eta[0]))
        items.append(("d_eta_infty_exists", rep.conditional_ok))
        if rep.conditional_ok:
            items.append(("d_eta_infty", rep.d_eta_infty))
            items.append(("max_d_eta", float(np.max(series.d_eta))))
    if sc.cp.p > 2 and traj.step_times[-1] >= 100 and series.d_v[-1] > 0:
        items.append(("d_v_slope_10_100", analytics.algebraic_rate_fit(series.times, series.d_v, (10, 100))))
    return series, env, ledger, items


def cmd_diagnose(cfg, out_dir=None, threads=None):
    _prepare(out_dir)

    def body():
        sc = build_scenario(cfg)
        traj = run_simulation(sc, threads)
        series, env, ledger, items = diagnostics(sc, traj)
        if out_dir:
            idx = _sample_steps(traj)
            rows = [[series.times[k], series.d_eta[k], series.d_v[k], env[k], ledger.kinetic[k],
                     ledger.dissipated[k], ledger.residual[k]] for k in idx]
            io.write_csv(os.path.join(out_dir, "diagnostics.csv"),
                         ["t", "d_eta", "d_v", "envelope", "kinetic", "dissipated", "ledger_residual"], rows)
            io.write_report(os.path.join(out_dir, "report.txt"), items)
            io.write_manifest(out_dir, "diagnose", cfg, {"dt_used": traj.dt})
        return {"scenario": sc, "trajectory": traj, "report": items}

    return _guarded(out_dir, "diagnose", cfg, body)


def default_cell_size(state):
    d_eta0 = diameters(state)[0]
    return d_eta0 / 32.0 if d_eta0 > 0 else 1.0


def reconstruction_rows(sc, traj, h):
    w = sc.ensemble.weights
    d = traj.eta.shape[2]
    header = (["t", "n_cells", "reynolds_norm", "defect_norm", "trace_residual", "momentum_mismatch",
               "min_theta_eig", "delta_e_residual"] + [f"ubar_{a}" for a in range(d)]
              + ["v_support_diameter", "split_residual"])
    rows = []
    last = None
    for state in traj.states():
        dis = euler.disintegrate(state, w, h)
        snap = euler.eulerian_snapshot(state, w, dis)
        defect = euler.defect_force(snap, state, dis, sc.kernel, sc.cp)
        mom = float(np.max(np.abs(snap.mass @ snap.u - w @ state.vel)))
        eig = float(np.min(np.linalg.eigvalsh(snap.theta))) if len(snap.theta) else 0.0
        ubar, vdiam = euler.velocity_marginal_stats(state, w)
        split = (euler.dissipation_split(snap, state, w, dis, sc.kernel, sc.cp).residual
                 if sc.cp.p == 2 else float("nan"))
        rows.append([state.t, dis.n_cells, euler.reynolds_norm(snap), defect.total_norm,
                     euler.trace_identity_residual(snap, state, w), mom, eig,
                     delta_e_residual(state, w, dis)] + list(ubar) + [vdiam, split])
        last = (snap, defect)
    return header, rows, last


def delta_e_residual(state, weights, dis):
    """Relative gap in delta E = sum |u_z - u_zeta|^2 rho rho + 2 sum rho tr(theta).

    Both sides are unchanged by a common velocity shift, so they are evaluated
    in the frame of the mean velocity. Once flocked, the spread is many orders
    below the mean and the lab-frame cell averages would round it away.
    """
    w = np.asarray(weights, dtype=float)
    vel = np.asarray(state.vel, dtype=float)
    state = replace(state, vel=vel - w @ vel)
    snap = euler.eulerian_snapshot(state, w, dis)
    lhs = analytics.velocity_fluctuation(state.vel, w)
    du = snap.u[:, None, :] - snap.u[None, :, :]
    rhs = (float(np.einsum("z,y,zyk,zyk->", snap.mass, snap.mass, du, du))
           + 2.0 * float(snap.mass @ snap.trace_theta))
    return abs(lhs - rhs) / max(abs(lhs), 1e-300) if lhs != 0 else abs(rhs)


def cmd_reconstruct(cfg, out_dir=None, threads=None):
    _prepare(out_dir)

    def body():
        sc = build_scenario(cfg)
        traj = run_simulation(sc, threads)
        h = cfg.h or default_cell_size(traj.state(0))
        header, rows, (snap, defect) = reconstruction_rows(sc, traj, h)
        ineq = euler.energy_inequality_check(traj, h)
        items = [("h", h), ("energy_inequality_ok", ineq.ok), ("energy_max_excess", ineq.max_excess),
                 ("reynolds_final", rows[-1][2]), ("reynolds_peak", max(r[2] for r in rows))]
        if out_dir:
            io.write_csv(os.path.join(out_dir, "reconstruct.csv"), header, rows)
            sh, sr = io.snapshot_rows(snap, defect)
            io.write_csv(os.path.join(out_dir, "snapshot_final.csv"), sh, sr)
            io.write_report(os.path.join(out_dir, "report.txt"), items)
            io.write_manifest(out_dir, "reconstruct", cfg, {"dt_used": traj.dt, "h_used": h})
        return {"scenario": sc, "trajectory": traj, "rows": rows, "header": header,
                "energy": ineq, "report": items, "h": h}

    return _guarded(out_dir, "reconstruct", cfg, body)


def threshold_items(sc, traj):
    items = []
    result = {}
    state0 = traj.state(0)
    d_eta0, d_v0 = diameters(state0)
    if sc.ensemble.dim == 1:
        ev = thresholds.effective_velocity(sc.ensemble, sc.vel0[:, 0], sc.kernel, sc.cp.kappa)
        mon = thresholds.order_preservation_monitor(traj, sc.ensemble, sc.kernel, sc.cp.kappa)
        pair = ev.violating_pair
        items += [("classification", ev.classification),
                  ("violating_pair", "" if pair is None else f"{pair[0]}:{pair[1]}"),
                  ("t_c_bound", ev.t_c_bound),
                  ("first_collision_time", mon.first_collision_time),
                  ("min_monitor_ratio", float(np.min(mon.min_scaled_gap)))]
        if sc.ensemble.size <= 256:
            items.append(("max_crossings", int(thresholds.crossing_counts(traj).max())))
        result.update(effective=ev, monitor=mon)
    if sc.cp.p == 2 and sc.grad_u0_sup is not None:
        try:
            rep = thresholds.large_kappa_condition(sc.kernel, sc.cp.kappa, sc.grad_u0_sup, d_v0, d_eta0)
        except (UnsupportedError, HypothesisError) as exc:
            items.append(("large_kappa_error", str(exc)))
        else:
            items += [("kappa_threshold", rep.threshold), ("satisfied", rep.satisfied),
                      ("predicted_gradient_integral", rep.predicted_gradient_integral)]
            result["large_kappa"] = rep
            if traj.has_jacobians:
                cmp_ = thresholds.gronwall_certificate_compare(rep, traj)
                items += [("measured_gradient_integral", cmp_.measured), ("certificate_ok", cmp_.ok)]
                result["certificate"] = cmp_
    if traj.has_jacobians:
        certified, value = injectivity_certificate(traj)
        items += [("injectivity_certified", certified), ("jv_integral", value)]
    return items, result


def cmd_threshold(cfg, out_dir=None, threads=None):
    _prepare(out_dir)

    def body():
        sc = build_scenario(cfg)
        traj = run_simulation(sc, threads, with_jacobians=sc.grad_u0 is not None)
        items, result = threshold_items(sc, traj)
        if out_dir:
            io.write_report(os.path.join(out_dir, "threshold.txt"), items)
            mon = result.get("monitor")
            if mon is not None:
                io.write_csv(os.path.join(out_dir, "order_monitor.csv"), ["t", "min_scaled_gap", "min_gap"],
                             zip(mon.times, mon.min_scaled_gap, mon.min_gap))
            if traj.has_jacobians:
                io.write_csv(os.path.join(out_dir, "certificate.csv"), ["t", "jv_integral"],
                             zip(traj.times, traj.jv_integral))
            io.write_manifest(out_dir, "threshold", cfg, {"dt_used": traj.dt})
        result.update(scenario=sc, trajectory=traj, report=items)
        return result

    return _guarded(out_dir, "threshold", cfg, body)


MEANFIELD_HEADER = ["N", "seed", "q", "sup_ratio", "terminal_velocity_ratio", "sup_total",
                    "initial_total", "momentum_mismatch", "growth_constant"]


def cmd_meanfield(cfg, out_dir=None, threads=None):
    """N-sweep table; wall-clock times go to timing.csv so meanfield.csv stays byte-stable."""
    _prepare(out_dir)
    if cfg.meanfield is None:
        raise UnsupportedError("meanfield needs a 'meanfield' block (n_grid, seeds)")

    def body():
        sc = build_scenario(cfg)
        dt = run_dt(sc)
        rows = meanfield.stability_experiment(
            sc.ensemble, sc.vel0, sc.kernel, sc.cp, cfg.meanfield["n_grid"], cfg.meanfield["seeds"],
            list(cfg.q), cfg.T, dt, stride=cfg.sample_stride, threads=threads)
        table = [[r.n, r.seed, r.q, r.sup_ratio, r.terminal_velocity_ratio, r.sup_total, r.initial_total,
                  r.momentum_mismatch,
                  meanfield.finite_time_growth_constant(sc.kernel, sc.cp, r.d_v_particles0, cfg.T)]
                 for r in rows]
        if out_dir:
            io.write_csv(os.path.join(out_dir, "meanfield.csv"), MEANFIELD_HEADER, table)
            io.write_csv(os.path.join(out_dir, "timing.csv"), ["N", "seed", "q", "wall_time_s"],
                         [[r.n, r.seed, r.q, r.wall_time_s] for r in rows])
            io.write_manifest(out_dir, "meanfield", cfg, {"dt_used": dt})
        return {"scenario": sc, "rows": rows, "table": table, "dt": dt}

    return _guarded(out_dir, "meanfield", cfg, body)


COMMANDS = {
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "reconstruct": cmd_reconstruct,
    "threshold": cmd_threshold,
    "meanfield": cmd_meanfield,
}

# the command whose CSV output represents each preset
PRESET_COMMAND = {
    "two-body-p2": "simulate",
    "two-body-p3": "simulate",
    "subcritical-1d": "threshold",
    "supercritical-1d": "threshold",
    "heavy-tail-flock": "simulate",
    "p25-algebraic": "diagnose",
    "large-kappa-euler": "threshold",
    "meanfield-sweep": "meanfield",
}

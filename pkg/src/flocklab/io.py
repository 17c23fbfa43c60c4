"""Deterministic artifact output: RFC-4180 CSV, manifest, atom dumps, failure marker."""

import csv
import json
import math
import os

import numpy as np

from .kernels import format_float, save_atoms

FAILED_MARKER = "FAILED"


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format_float(x)
    return "" if x is None else str(x)


def write_csv(path, header, rows):
    """Write rows with 17 significant digits; CRLF line endings per RFC 4180."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def write_manifest(out_dir, command, cfg, extra=None):
    from . import __version__, _backend
    doc = {
        "command": command,
        "library_version": __version__,
        "backend": _backend.name(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    if extra:
        doc.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_state(out_dir, index, weights, state):
    path = os.path.join(out_dir, f"state_{index:04d}.txt")
    save_atoms(path, weights, state.eta, state.vel)
    return path


def write_report(path, items):
    """key=value lines, one per item, in the given order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in items:
            fh.write(f"{key}={_cell(value)}\n")


def format_report(items):
    return "\n".join(f"{k}={_cell(v)}" for k, v in items)


def mark_failed(out_dir, message):
    with open(os.path.join(out_dir, FAILED_MARKER), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(message.rstrip() + "\n")


def snapshot_rows(snap, defect=None):
    """Header and rows for a per-cell export: index, rho, u, theta (upper), tr theta, R."""
    d = snap.u.shape[1]
    upper = [(a, b) for a in range(d) for b in range(a, d)]
    header = ([f"cell_{a}" for a in range(d)] + ["rho"] + [f"u_{a}" for a in range(d)]
              + [f"theta_{a}{b}" for a, b in upper] + ["tr_theta"] + [f"R_{a}" for a in range(d)])
    rows = []
    for z in range(len(snap.mass)):
        R = defect.per_cell[z] if defect is not None else [float("nan")] * d
        rows.append(list(snap.keys[z]) + [snap.mass[z]] + list(snap.u[z])
                    + [snap.theta[z, a, b] for a, b in upper] + [snap.trace_theta[z]] + list(R))
    return header, rows

"""JSON run configuration: schema validation, preset expansion and scenario building."""

import copy
import difflib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .kernels import AtomEnsemble, CouplingParams, Kernel, load_atoms
from .presets import PRESETS

TOP_KEYS = ("preset", "dim", "kernel", "p", "kappa", "ensemble", "u0", "dt", "T",
            "sample_stride", "h", "q", "seed", "out", "meanfield", "dump_states")
KERNEL_PARAM = {"constant": "c", "powerlaw": "beta", "bump": "R"}
SAMPLER_KEYS = {
    "uniform-ball": ("R", "N"),
    "gaussian-truncated": ("sigma", "R", "N"),
    "grid": ("n", "R"),
}
U0_KEYS = {
    "constant": ("c",),
    "linear": ("A",),
    "affine": ("A", "b"),
    "sinusoid": ("amplitude", "wavevectors", "phase"),
}
MEANFIELD_KEYS = ("n_grid", "seeds")
# common misspellings or names borrowed from the math, mapped to their home
ALIASES = {
    "phi_exponent": "kernel.beta",
    "beta": "kernel.beta",
    "radius": "kernel.R",
    "coupling": "kappa",
    "kappa_coupling": "kappa",
    "exponent": "p",
    "timestep": "dt",
    "horizon": "T",
    "t_final": "T",
    "n_atoms": "ensemble.N",
    "N": "ensemble.N",
    "stride": "sample_stride",
    "cell_size": "h",
    "threads": "--threads (command-line flag)",
}
MAX_SEED = 2 ** 64 - 1


@dataclass(frozen=True)
class SimConfig:
    dim: int
    kernel: Kernel
    p: float
    kappa: float
    ensemble: dict
    u0: dict
    dt: float
    T: float
    sample_stride: int
    h: float
    q: tuple
    seed: int
    out: str
    meanfield: dict
    preset: str
    dump_states: bool

    @property
    def coupling(self):
        return CouplingParams(self.p, self.kappa)

    def to_dict(self):
        """Canonical JSON-ready echo; parse_config(dumps(to_dict())) round-trips."""
        return {
            "preset": self.preset,
            "dim": self.dim,
            "kernel": self.kernel.to_dict(),
            "p": self.p,
            "kappa": self.kappa,
            "ensemble": copy.deepcopy(self.ensemble),
            "u0": copy.deepcopy(self.u0),
            "dt": "auto" if self.dt is None else self.dt,
            "T": self.T,
            "sample_stride": self.sample_stride,
            "h": self.h,
            "q": ["inf" if math.isinf(q) else q for q in self.q],
            "seed": self.seed,
            "out": self.out,
            "meanfield": copy.deepcopy(self.meanfield),
            "dump_states": self.dump_states,
        }


def _suggest(key, valid):
    if key in ALIASES:
        return f" (did you mean {ALIASES[key]!r}?)"
    close = difflib.get_close_matches(key, valid, n=1)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _matrix(x, rows, cols):
    try:
        a = np.array(x, dtype=float)
    except (TypeError, ValueError):
        return None
    if a.shape != (rows, cols) or not np.all(np.isfinite(a)):
        return None
    return a


def expand_preset(raw):
    """Merge a config over its named preset; top-level keys replace wholesale."""
    name = raw.get("preset")
    if name is None:
        return dict(raw)
    if name not in PRESETS:
        raise ConfigError([f"unknown preset {name!r}; choose one of {', '.join(sorted(PRESETS))}"])
    merged = copy.deepcopy(PRESETS[name])
    merged.update({k: v for k, v in raw.items() if k != "preset"})
    merged["preset"] = name
    return merged


def _check_unknown(obj, valid, prefix, errors):
    for key in obj:
        if key not in valid:
            errors.append(f"unknown key {prefix}{key!r}{_suggest(key, valid)}")


def validate(raw):
    """Validate an expanded config dict; collect every problem before failing."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    _check_unknown(raw, TOP_KEYS, "", errors)
    for key in ("dim", "kernel", "p", "kappa", "ensemble", "T"):
        if key not in raw:
            errors.append(f"missing required key {key!r}")

    dim = raw.get("dim")
    if dim is not None and not (_is_int(dim) and dim >= 1):
        errors.append(f"dim must be a positive integer, got {dim!r}")
        dim = None

    kernel = None
    kspec = raw.get("kernel")
    if kspec is not None:
        if not isinstance(kspec, dict) or kspec.get("family") not in KERNEL_PARAM:
            errors.append(f"kernel.family must be one of {sorted(KERNEL_PARAM)}")
        else:
            pkey = KERNEL_PARAM[kspec["family"]]
            _check_unknown(kspec, ("family", pkey), "kernel.", errors)
            if pkey not in kspec:
                errors.append(f"kernel.{pkey} is required for the {kspec['family']} family")
            elif not _is_num(kspec[pkey]):
                errors.append(f"kernel.{pkey} must be a finite number")
            else:
                try:
                    kernel = Kernel(kspec["family"], kspec[pkey])
                except ValueError as exc:
                    errors.append(f"kernel: {exc}")

    p = raw.get("p")
    if p is not None and not (_is_num(p) and p >= 2):
        errors.append(f"p must be ≥ 2, got {p!r}")
    kappa = raw.get("kappa")
    if kappa is not None and not (_is_num(kappa) and kappa > 0):
        errors.append(f"kappa must be > 0, got {kappa!r}")

    ens = raw.get("ensemble")
    from_file = False
    if ens is not None:
        if not isinstance(ens, dict):
            errors.append("ensemble must be an object")
        elif "file" in ens:
            from_file = True
            _check_unknown(ens, ("file",), "ensemble.", errors)
            if not isinstance(ens["file"], str) or not os.path.isfile(ens["file"]):
                errors.append(f"ensemble.file {ens['file']!r} is not a readable file")
        elif ens.get("sampler") in SAMPLER_KEYS:
            keys = SAMPLER_KEYS[ens["sampler"]]
            _check_unknown(ens, ("sampler",) + keys, "ensemble.", errors)
            for key in keys:
                val = ens.get(key, 1.0 if key == "R" else None)
                if key in ("N", "n"):
                    if not (_is_int(val) and val >= 1):
                        errors.append(f"ensemble.{key} must be an integer >= 1, got {val!r}")
                elif not (_is_num(val) and val > 0):
                    errors.append(f"ensemble.{key} must be > 0, got {val!r}")
        else:
            errors.append(f"ensemble needs 'file' or 'sampler' in {sorted(SAMPLER_KEYS)}")

    u0 = raw.get("u0")
    if u0 is None:
        if not from_file and ens is not None:
            errors.append("u0 is required unless velocities come from an ensemble file")
    elif not isinstance(u0, dict) or u0.get("family") not in U0_KEYS:
        errors.append(f"u0.family must be one of {sorted(U0_KEYS)}")
    else:
        keys = U0_KEYS[u0["family"]]
        _check_unknown(u0, ("family", "center") + keys, "u0.", errors)
        if "center" in u0 and not isinstance(u0["center"], bool):
            errors.append("u0.center must be true or false")
        if dim is not None:
            shapes = {"c": (dim,), "A": (dim, dim), "amplitude": (dim,),
                      "wavevectors": (dim, dim), "phase": (dim,), "b": (dim,)}
            for key in keys:
                if key not in u0:
                    errors.append(f"u0.{key} is required for the {u0['family']} family")
                    continue
                shape = shapes[key]
                ok = _matrix(u0[key], *shape) if len(shape) == 2 else _matrix([u0[key]], 1, shape[0])
                if ok is None:
                    errors.append(f"u0.{key} must have shape {shape}")

    dt = raw.get("dt", "auto")
    if dt != "auto" and not (_is_num(dt) and dt > 0):
        errors.append(f"dt must be > 0 or \"auto\", got {dt!r}")
    T = raw.get("T")
    if T is not None and not (_is_num(T) and T >= 0):
        errors.append(f"T must be >= 0, got {T!r}")
    stride = raw.get("sample_stride", 1)
    if not (_is_int(stride) and stride >= 1):
        errors.append(f"sample_stride must be an integer >= 1, got {stride!r}")
    h = raw.get("h")
    if h is not None and not (_is_num(h) and h > 0):
        errors.append(f"h must be > 0 or null, got {h!r}")
    qs = raw.get("q", [2])
    q_list = []
    if not isinstance(qs, list) or not qs:
        errors.append("q must be a non-empty list")
    else:
        for q in qs:
            if q == "inf":
                q_list.append(math.inf)
            elif _is_num(q) and q >= 1:
                q_list.append(float(q))
            else:
                errors.append(f"q entries must be >= 1 or \"inf\", got {q!r}")
    seed = raw.get("seed", 0)
    if not (_is_int(seed) and 0 <= seed <= MAX_SEED):
        errors.append(f"seed must be an integer in [0, 2^64), got {seed!r}")
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        errors.append("out must be a path string")
    dump = raw.get("dump_states", False)
    if not isinstance(dump, bool):
        errors.append("dump_states must be true or false")
    mf = raw.get("meanfield")
    if mf is not None:
        if not isinstance(mf, dict):
            errors.append("meanfield must be an object")
        else:
            _check_unknown(mf, MEANFIELD_KEYS, "meanfield.", errors)
            for key in MEANFIELD_KEYS:
                vals = mf.get(key)
                if not (isinstance(vals, list) and vals and all(_is_int(v) and v >= 0 for v in vals)):
                    errors.append(f"meanfield.{key} must be a non-empty list of integers")
            if isinstance(mf.get("n_grid"), list) and any(_is_int(v) and v < 1 for v in mf["n_grid"]):
                errors.append("meanfield.n_grid entries must be >= 1")
    if errors:
        raise ConfigError(errors)
    return SimConfig(
        dim=dim, kernel=kernel, p=float(p), kappa=float(kappa), ensemble=copy.deepcopy(ens),
        u0=copy.deepcopy(u0), dt=None if dt == "auto" else float(dt), T=float(T),
        sample_stride=stride, h=None if h is None else float(h), q=tuple(q_list), seed=seed,
        out=out, meanfield=copy.deepcopy(mf), preset=raw.get("preset"), dump_states=dump)


def parse_config(text):
    """Parse JSON text into a validated SimConfig (expanding any preset)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"])
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    return validate(expand_preset(raw))


def preset_config(name, **overrides):
    raw = {"preset": name}
    raw.update(overrides)
    return validate(expand_preset(raw))


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def sample_positions(spec, dim, seed):
    """Atom positions for a sampler spec, reproducible from (spec, seed)."""
    kind = spec["sampler"]
    R = float(spec.get("R", 1.0))
    if kind == "grid":
        axis = np.linspace(-R, R, spec["n"]) if spec["n"] > 1 else np.zeros(1)
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)
    rng = _rng(seed)
    n = spec["N"]
    if kind == "uniform-ball":
        dirs = rng.normal(size=(n, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return dirs * (R * rng.uniform(size=n) ** (1.0 / dim))[:, None]
    sigma = float(spec["sigma"])
    out = np.empty((0, dim))
    while len(out) < n:
        draw = rng.normal(scale=sigma, size=(2 * (n - len(out)) + 8, dim))
        out = np.vstack([out, draw[np.linalg.norm(draw, axis=1) <= R]])
    return out[:n]


def u0_field(spec, x):
    """(u0(x), grad u0(x)) per point for a closed-form velocity family."""
    x = np.asarray(x, dtype=float)
    n, dim = x.shape
    fam = spec["family"]
    if fam == "constant":
        return np.tile(np.asarray(spec["c"], dtype=float), (n, 1)), np.zeros((n, dim, dim))
    if fam in ("linear", "affine"):
        A = np.asarray(spec["A"], dtype=float)
        vel = x @ A.T
        if fam == "affine":
            vel = vel + np.asarray(spec["b"], dtype=float)
        return vel, np.broadcast_to(A, (n, dim, dim)).copy()
    amp = np.asarray(spec["amplitude"], dtype=float)
    K = np.asarray(spec["wavevectors"], dtype=float)
    arg = x @ K.T + np.asarray(spec["phase"], dtype=float)
    return amp * np.sin(arg), (amp * np.cos(arg))[:, :, None] * K[None, :, :]


def grad_u0_sup(spec, dim):
    """sup_x |grad u0(x)|_2: exact for constant/linear, an upper bound for sinusoids."""
    fam = spec["family"]
    if fam == "constant":
        return 0.0
    if fam in ("linear", "affine"):
        return float(np.linalg.norm(np.asarray(spec["A"], dtype=float), 2))
    amp = np.abs(np.asarray(spec["amplitude"], dtype=float))
    return float(np.linalg.norm(np.diag(amp) @ np.asarray(spec["wavevectors"], dtype=float), 2))


@dataclass(frozen=True, eq=False)
class Scenario:
    config: SimConfig
    ensemble: AtomEnsemble
    vel0: np.ndarray
    grad_u0: np.ndarray
    grad_u0_sup: float

    @property
    def kernel(self):
        return self.config.kernel

    @property
    def cp(self):
        return self.config.coupling


def build_scenario(cfg):
    """Sample the ensemble and evaluate u0; optionally shift to zero momentum."""
    dim = cfg.dim
    if "file" in cfg.ensemble:
        ens, vel = load_atoms(cfg.ensemble["file"], dim)
        if cfg.u0 is None:
            return Scenario(cfg, ens, vel, None, None)
        pos = np.array(ens.positions)
    else:
        pos = sample_positions(cfg.ensemble, dim, cfg.seed)
        ens = AtomEnsemble(pos)
    vel, grad = u0_field(cfg.u0, pos)
    if cfg.u0.get("center", False):
        vel = vel - ens.weights @ vel
    return Scenario(cfg, ens, vel, grad, grad_u0_sup(cfg.u0, dim))

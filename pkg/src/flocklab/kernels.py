"""Communication kernels, the p-alignment coupling and atomic reference measures."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

CONSTANT = "constant"
POWERLAW = "powerlaw"
BUMP = "bump"

# integer codes understood by the compiled kernels
FAMILY_CODES = {CONSTANT: 0, POWERLAW: 1, BUMP: 2}


@dataclass(frozen=True)
class Kernel:
    """Radial, non-increasing, Lipschitz influence function phi(r).

    ``constant``: phi = c.  ``powerlaw``: phi = (1 + r)^(-beta).
    ``bump``: phi = max(0, 1 - r/R).
    """

    family: str
    param: float

    def __post_init__(self):
        if self.family not in FAMILY_CODES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        par = float(self.param)
        if not math.isfinite(par):
            raise ValueError("kernel parameter must be finite")
        if self.family == CONSTANT and par < 0:
            raise ValueError("constant kernel value must be >= 0")
        if self.family == POWERLAW and par < 0:
            raise ValueError("power-law exponent beta must be >= 0")
        if self.family == BUMP and par <= 0:
            raise ValueError("bump radius R must be > 0")
        object.__setattr__(self, "param", par)

    @classmethod
    def constant(cls, c=1.0):
        return cls(CONSTANT, c)

    @classmethod
    def powerlaw(cls, beta):
        return cls(POWERLAW, beta)

    @classmethod
    def bump(cls, radius):
        return cls(BUMP, radius)

    @property
    def code(self):
        return FAMILY_CODES[self.family]

    def __call__(self, r):
        """Vectorized phi(r) for r >= 0."""
        r = np.asarray(r, dtype=float)
        if self.family == CONSTANT:
            out = np.full_like(r, self.param)
        elif self.family == POWERLAW:
            out = np.power(1.0 + r, -self.param)
        else:
            out = np.maximum(0.0, 1.0 - r / self.param)
        return out if out.ndim else float(out)

    def derivative(self, r):
        """phi'(r); one-sided (left) value at the bump kink."""
        r = np.asarray(r, dtype=float)
        if self.family == CONSTANT:
            out = np.zeros_like(r)
        elif self.family == POWERLAW:
            out = -self.param * np.power(1.0 + r, -self.param - 1.0)
        else:
            out = np.where(r < self.param, -1.0 / self.param, 0.0)
        return out if out.ndim else float(out)

    @property
    def sup(self):
        """phi(0) = sup phi."""
        return self.param if self.family == CONSTANT else 1.0

    @property
    def lipschitz_constant(self):
        if self.family == CONSTANT:
            return 0.0
        if self.family == POWERLAW:
            return self.param
        return 1.0 / self.param

    @property
    def heavy_tailed(self):
        if self.family == CONSTANT:
            return self.param > 0
        if self.family == POWERLAW:
            return self.param <= 1.0
        return False

    def antiderivative(self, r):
        """int_0^r phi(s) ds for r >= 0 (finite)."""
        if self.family == CONSTANT:
            return self.param * r
        if self.family == POWERLAW:
            beta = self.param
            if beta == 1.0:
                return math.log1p(r)
            # ((1+r)^(1-beta) - 1)/(1-beta) without cancellation for small r
            return math.expm1((1.0 - beta) * math.log1p(r)) / (1.0 - beta)
        rr = min(r, self.param)
        return rr - rr * rr / (2.0 * self.param)

    def tail_integral(self, a, b=math.inf):
        """int_a^b phi(r) dr; ``math.inf`` when divergent."""
        a = float(a)
        b = float(b)
        if math.isnan(a) or math.isnan(b) or a < 0:
            raise DomainError("tail integral needs 0 <= a")
        if a > b:
            raise ValueError(f"tail integral needs a <= b, got a={a}, b={b}")
        if a == b:
            return 0.0
        if math.isinf(b):
            if self.heavy_tailed:
                return math.inf
            if self.family == CONSTANT:
                return 0.0
            if self.family == POWERLAW:
                return (1.0 + a) ** (1.0 - self.param) / (self.param - 1.0)
            return max(0.0, self.antiderivative(self.param) - self.antiderivative(a))
        if self.family == POWERLAW and self.param != 1.0:
            # difference of antiderivatives, factored to keep relative accuracy
            beta = self.param
            return (1.0 + a) ** (1.0 - beta) * math.expm1(
                (1.0 - beta) * (math.log1p(b) - math.log1p(a))) / (1.0 - beta)
        if self.family == POWERLAW:
            return math.log1p(b) - math.log1p(a)
        return self.antiderivative(b) - self.antiderivative(a)

    def primitive(self, r):
        """Odd primitive Phi with Phi(0) = 0 and Phi' = phi(|.|)."""
        r = float(r)
        if r == 0.0:
            return 0.0
        return math.copysign(self.antiderivative(abs(r)), r)

    def to_dict(self):
        key = {CONSTANT: "c", POWERLAW: "beta", BUMP: "R"}[self.family]
        return {"family": self.family, key: self.param}


def eval_kernel(kernel, r):
    """phi(r) for a single radius; rejects negative or non-finite input."""
    r = float(r)
    if not math.isfinite(r):
        raise DomainError(f"kernel radius must be finite, got {r}")
    if r < 0:
        raise DomainError(f"kernel radius must be >= 0, got {r}")
    return float(kernel(r))


def kernel_tail_integral(kernel, a, b=math.inf):
    return kernel.tail_integral(a, b)


def is_heavy_tailed(kernel):
    return kernel.heavy_tailed


def primitive_phi(kernel, r):
    return kernel.primitive(r)


def _check_p(p):
    if not p >= 2:
        raise ValueError(f"p must be >= 2, got {p}")


def g_p(xi, p):
    """|xi|^(p-2) xi, zero at xi = 0."""
    _check_p(p)
    xi = np.asarray(xi, dtype=float)
    if p == 2:
        return xi.copy()
    s = np.linalg.norm(xi, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(s > 0, np.power(s, p - 2.0), 0.0)
    return fac * xi


def grad_g_p(xi, p):
    """Jacobian of ``g_p``: (p-2)|xi|^(p-4) xi xi^T + |xi|^(p-2) I.

    At xi = 0 the continuous limit is used: I for p = 2, zero for p > 2.
    """
    _check_p(p)
    xi = np.asarray(xi, dtype=float)
    d = xi.shape[-1]
    eye = np.eye(d)
    if p == 2:
        return np.broadcast_to(eye, xi.shape[:-1] + (d, d)).copy()
    s = np.linalg.norm(xi, axis=-1)[..., None, None]
    outer = xi[..., :, None] * xi[..., None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (p - 2.0) * np.power(s, p - 4.0) * outer + np.power(s, p - 2.0) * eye
    return np.where(s > 0, out, 0.0)


@dataclass(frozen=True)
class CouplingParams:
    p: float
    kappa: float

    def __post_init__(self):
        p = float(self.p)
        kappa = float(self.kappa)
        if not p >= 2 or not math.isfinite(p):
            raise ValueError(f"p must be >= 2, got {self.p}")
        if not kappa > 0 or not math.isfinite(kappa):
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "kappa", kappa)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AtomEnsemble:
    """Atomic probability measure sum_i w_i delta_{x_i} on R^d."""

    positions: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or len(x) < 1:
            raise ValueError("positions must be a non-empty (N, d) array")
        w = np.full(len(x), 1.0 / len(x)) if self.weights is None else np.array(self.weights, dtype=float)
        if w.shape != (len(x),):
            raise ValueError(f"expected {len(x)} weights, got shape {w.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("positions must be finite")
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
        object.__setattr__(self, "positions", _frozen(x))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def size(self):
        return self.positions.shape[0]

    def __len__(self):
        return self.size


def load_atoms(path, dim):
    """Read "w x_1 .. x_d v_1 .. v_d" lines; return (ensemble, velocities).

    Weights are renormalized when they sum to 1 only up to text rounding.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = line.split()
            if len(vals) != 1 + 2 * dim:
                raise ValueError(f"{path}:{lineno}: expected {1 + 2 * dim} columns, got {len(vals)}")
            rows.append([float(v) for v in vals])
    if not rows:
        raise ValueError(f"{path}: no atoms")
    arr = np.array(rows)
    w = arr[:, 0]
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{path}: weights sum to {w.sum()!r}, expected 1")
    w = w / w.sum()
    return AtomEnsemble(arr[:, 1:1 + dim], w), arr[:, 1 + dim:].copy()


def format_float(x):
    return format(float(x), ".17g")


def save_atoms(path, weights, positions, velocities):
    positions = np.asarray(positions, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w, x, v in zip(weights, positions, velocities):
            fh.write(" ".join(format_float(t) for t in (w, *x, *v)) + "\n")

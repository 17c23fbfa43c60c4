"""Named scenarios, stored as config dicts and expanded by ``config.expand_preset``."""

_PAIR_1D = {"sampler": "grid", "n": 2, "R": 1.0}
_SWIRL = {
    "family": "sinusoid",
    "amplitude": [1.0, 1.0],
    "wavevectors": [[0.0, 2.0], [2.0, 0.0]],
    "phase": [0.3, -0.5],
    "center": True,
}

PRESETS = {
    # two half-weight atoms, separation 1 and relative velocity -0.5
    "two-body-p2": {
        "dim": 1, "kernel": {"family": "constant", "c": 1.0}, "p": 2, "kappa": 1.0,
        "ensemble": {"sampler": "grid", "n": 2, "R": 0.5},
        "u0": {"family": "linear", "A": [[-0.5]]},
        "dt": 1e-3, "T": 10.0, "sample_stride": 10, "seed": 0,
    },
    "two-body-p3": {
        "dim": 1, "kernel": {"family": "constant", "c": 1.0}, "p": 3, "kappa": 1.0,
        "ensemble": {"sampler": "grid", "n": 2, "R": 0.5},
        "u0": {"family": "linear", "A": [[-1.0]]},
        "dt": 1e-3, "T": 10.0, "sample_stride": 10, "seed": 0,
    },
    "subcritical-1d": {
        "dim": 1, "kernel": {"family": "constant", "c": 1.0}, "p": 2, "kappa": 1.0,
        "ensemble": dict(_PAIR_1D), "u0": {"family": "linear", "A": [[-1.0]]},
        "dt": 1e-3, "T": 20.0, "sample_stride": 1, "seed": 0,
    },
    # the small drift moves the crossing point off the cell boundary at 0
    "supercritical-1d": {
        "dim": 1, "kernel": {"family": "constant", "c": 1.0}, "p": 2, "kappa": 1.0,
        "ensemble": dict(_PAIR_1D), "u0": {"family": "affine", "A": [[-2.0]], "b": [0.05]},
        "dt": 1e-3, "T": 50.0, "sample_stride": 1, "seed": 0,
    },
    "heavy-tail-flock": {
        "dim": 2, "kernel": {"family": "powerlaw", "beta": 0.5}, "p": 2, "kappa": 5.0,
        "ensemble": {"sampler": "uniform-ball", "R": 1.0, "N": 200}, "u0": dict(_SWIRL),
        "dt": 1e-3, "T": 20.0, "sample_stride": 100, "seed": 1,
    },
    "p25-algebraic": {
        "dim": 2, "kernel": {"family": "powerlaw", "beta": 0.5}, "p": 2.5, "kappa": 1.0,
        "ensemble": {"sampler": "uniform-ball", "R": 1.0, "N": 64}, "u0": dict(_SWIRL),
        "dt": 1e-2, "T": 100.0, "sample_stride": 10, "seed": 1,
    },
    "large-kappa-euler": {
        "dim": 2, "kernel": {"family": "constant", "c": 1.0}, "p": 2, "kappa": 2.0,
        "ensemble": {"sampler": "grid", "n": 8, "R": 1.0},
        "u0": {"family": "linear", "A": [[-1.0, 0.0], [0.0, -1.0]]},
        "dt": "auto", "T": 10.0, "sample_stride": 1, "seed": 0,
    },
    "meanfield-sweep": {
        "dim": 2, "kernel": {"family": "powerlaw", "beta": 0.5}, "p": 2, "kappa": 1.0,
        "ensemble": {"sampler": "uniform-ball", "R": 1.0, "N": 128}, "u0": dict(_SWIRL),
        "dt": "auto", "T": 50.0, "sample_stride": 5, "seed": 0, "q": [2],
        "meanfield": {"n_grid": [32, 64, 128, 256, 512, 1024], "seeds": [0, 1, 2]},
    },
}

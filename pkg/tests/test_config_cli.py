import json
import math

import numpy as np
import pytest

from flocklab import __version__
from flocklab.cli import EXIT_BLOWUP, EXIT_OK, EXIT_USAGE, main
from flocklab.config import build_scenario, parse_config, preset_config, sample_positions, u0_field, validate
from flocklab.errors import ConfigError
from flocklab.io import read_csv
from flocklab.presets import PRESETS


def _errors(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return "\n".join(info.value.errors)


def test_preset_only_config_expands():
    cfg = parse_config('{"preset": "two-body-p2"}')
    assert cfg.p == 2 and cfg.kappa == 1 and cfg.dim == 1 and cfg.T == 10
    again = parse_config(json.dumps(cfg.to_dict()))
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_validates(name):
    cfg = preset_config(name)
    sc = build_scenario(cfg)
    assert sc.ensemble.dim == cfg.dim
    assert sc.vel0.shape == sc.ensemble.positions.shape


def test_semantic_errors_are_aggregated():
    msg = _errors('{"preset": "two-body-p2", "p": 1.5, "kappa": -1}')
    assert "p must be ≥ 2" in msg and "kappa" in msg


def test_unknown_key_suggests_home():
    assert "kernel.beta" in _errors('{"preset": "heavy-tail-flock", "phi_exponent": 0.5}')


def test_syntax_error_reports_position():
    msg = _errors('{"preset": "two-body-p2",\n  "p": }')
    assert "line 2" in msg and "column" in msg


def test_unknown_preset():
    assert "unknown preset" in _errors('{"preset": "nope"}')


def test_grid_sampler_two_points():
    x = sample_positions({"sampler": "grid", "n": 2, "R": 1.0}, 1, 0)
    np.testing.assert_array_equal(x[:, 0], [-1.0, 1.0])
    cfg = validate({"dim": 1, "kernel": {"family": "constant", "c": 1.0}, "p": 2, "kappa": 1,
                    "ensemble": {"sampler": "grid", "n": 2, "R": 1.0},
                    "u0": {"family": "linear", "A": [[-1.0]]}, "T": 1.0})
    sc = build_scenario(cfg)
    np.testing.assert_array_equal(sc.ensemble.weights, [0.5, 0.5])


def test_samplers_are_reproducible_and_supported():
    for spec in ({"sampler": "uniform-ball", "R": 2.0, "N": 500},
                 {"sampler": "gaussian-truncated", "sigma": 1.0, "R": 1.5, "N": 500}):
        a = sample_positions(spec, 3, 42)
        b = sample_positions(spec, 3, 42)
        np.testing.assert_array_equal(a, b)
        assert np.linalg.norm(a, axis=1).max() <= spec["R"]
        assert not np.array_equal(a, sample_positions(spec, 3, 43))


def test_uniform_ball_mean_at_clt_scale():
    x = sample_positions({"sampler": "uniform-ball", "R": 1.0, "N": 10_000}, 2, 0)
    assert np.linalg.norm(x.mean(axis=0)) <= 0.05


def test_sinusoid_gradient_matches_finite_differences():
    spec = PRESETS["heavy-tail-flock"]["u0"]
    x = np.array([[0.2, -0.4], [0.7, 0.1]])
    _, grad = u0_field(spec, x)
    eps = 1e-6
    for j, e in enumerate(np.eye(2)):
        fd = (u0_field(spec, x + eps * e)[0] - u0_field(spec, x - eps * e)[0]) / (2 * eps)
        np.testing.assert_allclose(grad[:, :, j], fd, atol=1e-8)


def test_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--preset", "two-body-p2", "--out", str(out), "--dry-run"]) == EXIT_OK
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["preset"] == "two-body-p2" and echoed["p"] == 2
    assert not out.exists()


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text('{"preset": "two-body-p2", "p": 1.5}')
    assert main(["simulate", "--config", str(path)]) == EXIT_USAGE
    assert "p must be" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE


def test_simulate_two_body_oracle_and_manifest(tmp_path):
    out = tmp_path / "tb"
    assert main(["simulate", "--preset", "two-body-p2", "--out", str(out)]) == EXIT_OK
    header, *rows = read_csv(out / "oracle.csv")
    col = header.index("max_rel_error")
    assert max(float(r[col]) for r in rows) <= 1e-6
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["library_version"] == __version__
    assert manifest["seed"] == 0 and manifest["config"]["preset"] == "two-body-p2"
    first = (out / "timeseries.csv").read_bytes()
    assert main(["simulate", "--preset", "two-body-p2", "--out", str(out)]) == EXIT_OK
    assert (out / "timeseries.csv").read_bytes() == first


def test_threshold_reports_collision_time(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "supercritical-1d", "T": 2.0}))
    out = tmp_path / "th"
    assert main(["threshold", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    report = dict(line.split("=", 1) for line in (out / "threshold.txt").read_text().splitlines() if "=" in line)
    assert abs(float(report["first_collision_time"]) - math.log(2)) <= 1e-3


def test_blow_up_exit_code_and_marker(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "two-body-p2", "p": 6, "dt": 1.0, "T": 50.0,
                               "u0": {"family": "linear", "A": [[-200.0]]}}))
    out = tmp_path / "bu"
    with pytest.warns(RuntimeWarning):
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_BLOWUP
    assert (out / "FAILED").exists()
    assert (out / "partial_timeseries.csv").exists()
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"


def test_seed_override_changes_ensemble(capsys):
    assert main(["simulate", "--preset", "heavy-tail-flock", "--seed", "7", "--dry-run"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["seed"] == 7

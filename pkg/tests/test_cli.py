import json
import subprocess
import sys

import numpy as np
import pytest

from spdescore.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VERIFY, run
from spdescore.config import ConfigError, load, validate

BASE = {
    "n_modes": 2,
    "q": {"family": "power_law", "amplitude": 1.0, "decay": 2.0},
    "horizon": 1.0,
    "n_samples": 3,
    "seed": 7,
    "n_steps": 32,
}


def write_cfg(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def read(p):
    return p.read_bytes()


class TestConfig:
    def test_defaults(self):
        rc = validate(dict(BASE))
        assert rc["spectrum"]["family"] == "dirichlet"
        assert rc["u0"] == {"preset": "zero"}
        assert rc.spectrum().n_modes == 2

    def test_decay_rejected_by_name(self):
        cfg = dict(BASE, q={"family": "power_law", "amplitude": 1.0, "decay": 0.5})
        with pytest.raises(ConfigError, match=r"q\.decay"):
            validate(cfg)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            validate(dict(BASE, bogus=1))
        with pytest.raises(ConfigError):
            validate(dict(BASE, spectrum={"family": "dirichlet", "shape": 1}))

    @pytest.mark.parametrize(
        "patch, field",
        [
            ({"n_modes": 0}, "n_modes"),
            ({"horizon": -1}, "horizon"),
            ({"spectrum": {"family": "dirichlet", "nu": 0}}, "spectrum.nu"),
            ({"u0": {"coeffs": [1.0]}}, "u0.coeffs"),
            ({"q": {"family": "dense", "matrix": [[1.0]]}}, "q.matrix"),
            ({"q": {"family": "dense", "matrix": [[1.0, 2.0], [2.0, 1.0]]}}, "q"),
            ({"q": {"family": "power_law", "amplitude": 1.0}}, "q.decay"),
            ({"reverse": {"t_min": 2.0}}, "reverse.t_min"),
            ({"dt": 0.1}, "dt"),
        ],
    )
    def test_field_level_messages(self, patch, field):
        with pytest.raises(ConfigError, match=rf"^{field}"):
            validate(dict(BASE, **patch))

    def test_dt_sets_steps(self):
        cfg = {k: v for k, v in BASE.items() if k != "n_steps"}
        assert validate(dict(cfg, dt=0.125))["n_steps"] == 8

    def test_dense_from_path(self, tmp_path):
        (tmp_path / "q.csv").write_text("1.0,0.2\n0.2,0.5\n")
        p = write_cfg(tmp_path, dict(BASE, q={"family": "dense", "path": "q.csv"}))
        rc = load(p)
        np.testing.assert_array_equal(rc.q().q, [[1.0, 0.2], [0.2, 0.5]])
        assert "path" not in rc["q"]

    def test_presets(self):
        u = validate(dict(BASE, n_modes=3, u0={"preset": "inverse_square"})).u0()
        np.testing.assert_allclose(u, [1, 1 / 4, 1 / 9])


class TestCommands:
    def test_simulate_shape(self, tmp_path):
        p = write_cfg(tmp_path, BASE)
        assert run(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_OK
        lines = (tmp_path / "o" / "ensemble.csv").read_text().splitlines()
        assert len(lines) == 4
        assert lines[0] == "sample_id,mode_1,mode_2"
        meta = json.loads((tmp_path / "o" / "meta.json").read_text())
        assert meta["command"] == "simulate" and meta["config"]["seed"] == 7 and meta["version"]

    def test_rerun_identical(self, tmp_path):
        p = write_cfg(tmp_path, dict(BASE, n_samples=500))
        run(["simulate", "--config", str(p), "--out", str(tmp_path / "a")])
        run(["simulate", "--config", str(p), "--out", str(tmp_path / "b")])
        assert read(tmp_path / "a" / "ensemble.csv") == read(tmp_path / "b" / "ensemble.csv")

    def test_seed_override(self, tmp_path):
        p = write_cfg(tmp_path, BASE)
        run(["simulate", "--config", str(p), "--out", str(tmp_path / "a")])
        run(["simulate", "--config", str(p), "--out", str(tmp_path / "b"), "--seed", "8"])
        assert read(tmp_path / "a" / "ensemble.csv") != read(tmp_path / "b" / "ensemble.csv")
        assert json.loads((tmp_path / "b" / "meta.json").read_text())["config"]["seed"] == 8

    def test_seventeen_digits(self, tmp_path):
        p = write_cfg(tmp_path, BASE)
        run(["simulate", "--config", str(p), "--out", str(tmp_path / "o")])
        rows = (tmp_path / "o" / "ensemble.csv").read_text().splitlines()[1:]
        for row in rows:
            for tok in row.split(",")[1:]:
                x = float(tok)
                assert float("%.17g" % x) == x and tok == "%.17g" % x

    def test_decay_exit_code(self, tmp_path, capsys):
        p = write_cfg(tmp_path, dict(BASE, q={"family": "power_law", "amplitude": 1.0, "decay": 0.5}))
        assert run(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert "decay" in capsys.readouterr().err

    def test_bad_json(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{not json")
        assert run(["simulate", "--config", str(p)]) == EXIT_CONFIG

    def test_missing_config_is_io(self, tmp_path):
        assert run(["simulate", "--config", str(tmp_path / "absent.json")]) == EXIT_IO

    def test_unwritable_out(self, tmp_path):
        p = write_cfg(tmp_path, BASE)
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run(["simulate", "--config", str(p), "--out", str(blocker / "sub")]) == EXIT_IO

    def test_covariance_zero_horizon(self, tmp_path):
        p = write_cfg(tmp_path, dict(BASE, horizon=0.0))
        assert run(["covariance", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_OK
        g = np.loadtxt(tmp_path / "o" / "gamma.csv", delimiter=",", skiprows=1)
        assert g.shape == (2, 2) and not g.any()

    def test_covariance_outputs(self, tmp_path):
        p = write_cfg(tmp_path, BASE)
        run(["covariance", "--config", str(p), "--out", str(tmp_path / "o")])
        g = np.loadtxt(tmp_path / "o" / "gamma.csv", delimiter=",", skiprows=1)
        gp = np.loadtxt(tmp_path / "o" / "gamma_pinv.csv", delimiter=",", skiprows=1)
        np.testing.assert_allclose(g @ gp, np.eye(2), atol=1e-12)
        tc = json.loads((tmp_path / "o" / "trace_check.json").read_text())
        assert float(tc["relative_gap"]) <= 1e-12

    def test_score_zero_at_mean(self, tmp_path):
        p = write_cfg(tmp_path, dict(BASE, u0={"coeffs": [1.0, -1.0]}, score={"offsets": [-1, 0, 1], "direction": [1, 1]}))
        assert run(["score", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_OK
        rows = np.loadtxt(tmp_path / "o" / "score.csv", delimiter=",", skiprows=1)
        assert rows.shape == (3, 5)
        assert not rows[1, 3:].any()
        np.testing.assert_allclose(rows[0, 3:], -rows[2, 3:], rtol=1e-12)

    def test_reverse_outputs(self, tmp_path):
        p = write_cfg(tmp_path, dict(BASE, n_samples=50))
        assert run(["reverse", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_OK
        for name in ("start.csv", "end.csv", "target_mean.csv", "target_cov_tmin.csv", "targets.json"):
            assert (tmp_path / "o" / name).exists()
        assert len((tmp_path / "o" / "end.csv").read_text().splitlines()) == 51

    @pytest.mark.parametrize("cmd", ["simulate", "covariance", "score", "reverse"])
    def test_meta_roundtrip(self, tmp_path, cmd):
        p = write_cfg(tmp_path, dict(BASE, n_samples=40))
        run([cmd, "--config", str(p), "--out", str(tmp_path / "a")])
        run([cmd, "--config", str(tmp_path / "a" / "meta.json"), "--out", str(tmp_path / "b")])
        for f in sorted((tmp_path / "a").iterdir()):
            assert read(f) == read(tmp_path / "b" / f.name), f.name

    @pytest.mark.parametrize("cmd", ["simulate", "reverse"])
    def test_workers_do_not_change_bytes(self, tmp_path, cmd):
        p = write_cfg(tmp_path, dict(BASE, n_samples=9000, simulate={"mode": "em"}))
        run([cmd, "--config", str(p), "--out", str(tmp_path / "a"), "--workers", "1"])
        run([cmd, "--config", str(p), "--out", str(tmp_path / "b"), "--workers", "4"])
        for f in sorted((tmp_path / "a").iterdir()):
            assert read(f) == read(tmp_path / "b" / f.name), f.name


class TestVerifyCommand:
    def test_quick(self, tmp_path, capsys):
        assert run(["verify", "--profile", "quick", "--out", str(tmp_path), "--seed", "3"]) == EXIT_OK
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["passed"] and len(doc["checks"]) == 12
        assert "PASS" in capsys.readouterr().out

    def test_failure_exit_code(self, tmp_path, monkeypatch):
        from spdescore import cli, verify

        def broken(*a, **k):
            return verify.run_suite(*a, score_fn=lambda ctx, u: -verify.score_full(ctx, u), **k)

        monkeypatch.setattr(cli, "run_suite", broken)
        assert run(["verify", "--out", str(tmp_path)]) == EXIT_VERIFY


def test_module_entry_point(tmp_path):
    p = write_cfg(tmp_path, BASE)
    out = subprocess.run(
        [sys.executable, "-m", "spdescore", "simulate", "--config", str(p), "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "o" / "ensemble.csv").exists()

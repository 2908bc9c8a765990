import json

import numpy as np
import pytest

from fdot.cli import (
    EXIT_OK,
    EXIT_VALIDATION,
    ConfigError,
    build_problem,
    build_solver_config,
    load_config,
    main,
)


def tiny_config(**overrides):
    cfg = {
        "problem": {
            "grid": {"N": [24], "P": 5},
            "marginals": {"type": "gaussian", "centers": [0.25, 0.75],
                          "scale": 0.08},
            "diagram": {"family": "greenshields", "v0": 1.0, "rho_hat": 0.3},
        },
        "solver": {"name": "cp", "max_iters": 200, "log_every": 10,
                   "seed": 0},
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


class TestConfigLoading:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(p)

    def test_unknown_top_level_key(self, tmp_path):
        cfg = tiny_config()
        cfg["extra"] = 1
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(write_config(tmp_path, cfg))

    def test_unknown_solver_name(self):
        cfg = tiny_config()
        cfg["solver"]["name"] = "admm"
        with pytest.raises(ConfigError, match="unknown solver"):
            build_solver_config(cfg)

    def test_unknown_marginal_type(self):
        cfg = tiny_config()
        cfg["problem"]["marginals"]["type"] = "uniform"
        with pytest.raises(ConfigError):
            build_problem(cfg)

    def test_unknown_diagram_family(self):
        cfg = tiny_config()
        cfg["problem"]["diagram"]["family"] = "parabolic"
        with pytest.raises(ConfigError):
            build_problem(cfg)

    def test_cli_override_beats_config(self):
        name, sc = build_solver_config(tiny_config(),
                                       {"solver": "drs", "max_iters": 7})
        assert name == "drs" and sc.max_iters == 7

    def test_2d_problem_with_obstacles(self):
        cfg = tiny_config()
        cfg["problem"]["grid"] = {"N": [16, 16], "P": 4}
        cfg["problem"]["marginals"]["centers"] = [[0.5, 0.2], [0.5, 0.8]]
        cfg["problem"]["obstacles"] = {"num_blocks": 2, "gap_width": 2,
                                       "band_rows": [7, 9]}
        p = build_problem(cfg)
        assert p.mask is not None and p.grid.d == 2


class TestRunCommand:
    def run_tiny(self, tmp_path, out="out", extra=()):
        cfgp = write_config(tmp_path, tiny_config())
        return main(["run", cfgp, "--out", str(tmp_path / out), "--quiet",
                     *extra]), tmp_path / out

    def test_writes_expected_artifacts(self, tmp_path, capsys):
        code, out = self.run_tiny(tmp_path)
        assert code == EXIT_OK
        names = {p.name for p in out.iterdir()}
        P = 5
        assert {f"rho_t{k}.csv" for k in range(P + 1)} <= names
        assert {f"m0_t{k}.csv" for k in range(P)} <= names
        assert {f"fd_scatter_t{k}.csv" for k in range(P)} <= names
        assert {"convergence.csv", "mass.csv", "manifest.json"} <= names
        man = json.loads((out / "manifest.json").read_text())
        assert man["solver"] == "cp"
        assert man["grid"] == {"N": [24], "P": 5, "layout": "collocated"}
        assert np.isfinite(man["final_objective"])
        assert set(man["files"]) == names

    def test_mass_column_is_unit(self, tmp_path):
        code, out = self.run_tiny(tmp_path)
        rows = (out / "mass.csv").read_text().strip().splitlines()[1:]
        mass = [float(r.split(",")[1]) for r in rows]
        np.testing.assert_allclose(mass, 1.0, atol=1e-8)

    def test_convergence_csv_is_deterministic(self, tmp_path):
        _, out1 = self.run_tiny(tmp_path, "a")
        _, out2 = self.run_tiny(tmp_path, "b")
        assert (out1 / "convergence.csv").read_bytes() == \
            (out2 / "convergence.csv").read_bytes()

    def test_wall_timing_fills_elapsed(self, tmp_path):
        code, out = self.run_tiny(tmp_path, extra=("--timing", "wall"))
        lines = (out / "convergence.csv").read_text().strip().splitlines()
        last_elapsed = float(lines[-1].split(",")[5])
        assert last_elapsed > 0.0

    def test_bad_config_exits_with_validation_code(self, tmp_path, capsys):
        cfg = tiny_config()
        cfg["problem"]["marginals"]["scale"] = -1.0
        cfgp = write_config(tmp_path, cfg)
        assert main(["run", cfgp, "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


class TestOtherCommands:
    def test_validate_ok(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, tiny_config())
        assert main(["validate", cfgp]) == EXIT_OK
        assert "ok" in capsys.readouterr().out

    def test_validate_rejects_missing_sections(self, tmp_path, capsys):
        cfgp = write_config(tmp_path, {"problem": {"grid": {"N": [8], "P": 3}}})
        assert main(["validate", cfgp]) == EXIT_VALIDATION

    def test_norm_estimate_prints_number(self, capsys):
        assert main(["norm-estimate", "--N", "8", "--P", "3",
                     "--iters", "20"]) == EXIT_OK
        val = float(capsys.readouterr().out.strip())
        assert val > 0

    def test_version(self, capsys):
        import fdot
        assert main(["version"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == fdot.__version__

    def test_shipped_configs_load(self):
        from importlib import resources
        for name in ("bench_1d.json", "bench_1d_unconstrained.json",
                     "bench_2d_toll.json"):
            text = resources.files("fdot.configs").joinpath(name).read_text()
            cfg = json.loads(text)
            build_problem(cfg)
            build_solver_config(cfg)

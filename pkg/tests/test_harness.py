import json

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from vnlw.cli import main
from vnlw.harness import (
    EXPERIMENT_DEFAULTS,
    RANDOM_EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    fit_exponent,
    run,
)

SMALL_AVERAGING = {
    "experiment": "averaging",
    "grid": {"dim": 2, "N": 16, "L": float(np.pi)},
    "random": {"seed": 7},
    "params": {"T_grid": [0.25, 0.5, 1.0], "M": 50, "M_homogeneity": 50, "steps_per_min": 4},
}


def write_config(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


class TestFitExponent:
    @pytest.mark.parametrize("slope", [-2.0, -0.5, 0.0, 0.25, 3.0])
    def test_exact_power(self, slope):
        x = np.geomspace(0.1, 10.0, 9)
        s, c, r2 = fit_exponent(x, 2.5 * x**slope)
        assert s == pytest.approx(slope, abs=1e-12)
        assert np.exp(c) == pytest.approx(2.5, rel=1e-12)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_square_root_intercept(self):
        x = np.array([0.5, 1.0, 2.0, 4.0, 9.0])
        s, c, r2 = fit_exponent(x, 3.0 * np.sqrt(x))
        assert s == pytest.approx(0.5, abs=1e-12) and c == pytest.approx(np.log(3.0), abs=1e-12)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_noisy_linear(self, rng):
        x = np.linspace(1.0, 10.0, 50)
        s, _, _ = fit_exponent(x, x * (1 + 0.01 * rng.standard_normal(50)))
        assert 0.97 <= s <= 1.03

    def test_noisy_power(self, rng):
        x = np.geomspace(1.0, 100.0, 40)
        y = x**-1.5 * np.exp(0.01 * rng.standard_normal(40))
        s, _, r2 = fit_exponent(x, y)
        assert abs(s + 1.5) < 0.02
        assert r2 > 0.99

    @pytest.mark.parametrize("xs,ys", [([1, 2], [1, 2]), ([1, 2, 3], [1, 0, 2]), ([1, -2, 3], [1, 2, 3]),
                                       ([1, 2, 3], [1, 2])])
    def test_rejects(self, xs, ys):
        with pytest.raises(ValueError):
            fit_exponent(xs, ys)


class TestConfig:
    @pytest.mark.parametrize("name", sorted(EXPERIMENT_DEFAULTS))
    def test_yaml_round_trip(self, name):
        raw = {"experiment": name}
        if name in RANDOM_EXPERIMENTS:
            raw["random"] = {"seed": 3}
        cfg = ExperimentConfig.from_dict(raw)
        back = ExperimentConfig.from_yaml(cfg.to_yaml())
        assert back.to_dict() == cfg.to_dict()
        assert back.params == EXPERIMENT_DEFAULTS[name]

    def test_partial_params_merge(self):
        cfg = ExperimentConfig.from_dict({"experiment": "strichartz", "params": {"check_1d": {"N": 256}}})
        assert cfg.params["check_1d"]["N"] == 256
        assert cfg.params["check_1d"]["q"] == EXPERIMENT_DEFAULTS["strichartz"]["check_1d"]["q"]

    def test_defaults_not_mutated(self):
        before = json.dumps(EXPERIMENT_DEFAULTS, sort_keys=True)
        cfg = ExperimentConfig.from_dict({"experiment": "kernel"})
        cfg.params["grids"]["1"][0] = 8
        assert json.dumps(EXPERIMENT_DEFAULTS, sort_keys=True) == before

    @pytest.mark.parametrize("raw,match", [
        ({"experiment": "kernel", "colour": 1}, "top-level"),
        ({"experiment": "kernel", "grid": {"M": 3}}, "grid"),
        ({"experiment": "kernel", "solver": {"order": 3}}, "solver"),
        ({"experiment": "kernel", "params": {"radius": 1}}, "params.radius"),
        ({"experiment": "kernel", "params": {"smoothing": {"M": 1}}}, "params.smoothing.M"),
        ({"experiment": "kernel", "params": {"smoothing": 3}}, "mapping"),
        ({"experiment": "warp"}, "unknown experiment"),
        ({"experiment": "kernel", "params": {"dims": []}}, "empty range"),
        ({"experiment": "kernel", "threads": 0}, "threads"),
        ({"experiment": "kernel", "grid": {"dim": 4}}, "dim"),
        ({"experiment": "kernel", "grid": {"N": 48}}, "power of two"),
    ])
    def test_rejects_malformed(self, raw, match):
        with pytest.raises(ConfigError, match=match):
            ExperimentConfig.from_dict(raw)

    def test_rejects_non_mapping(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_yaml("- a\n- b\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_yaml("experiment: [unclosed\n")

    @pytest.mark.parametrize("name", sorted(RANDOM_EXPERIMENTS))
    def test_random_needs_seed(self, name):
        with pytest.raises(ConfigError, match="random.seed"):
            ExperimentConfig.from_dict({"experiment": name})

    @pytest.mark.parametrize("s", [0.5, 1.0, 2.0, 0.0, -0.1])
    def test_inflation_rejects_outside_supercritical_range(self, s):
        # n = 2, p = 5 gives s_cr = 1/2
        with pytest.raises(ConfigError, match="s_cr = n/2 - 2/\\(p-1\\) = 0.5"):
            ExperimentConfig.from_dict({"experiment": "inflation", "params": {"s": s}})

    @given(st.floats(0.01, 0.49))
    def test_inflation_accepts_supercritical(self, s):
        cfg = ExperimentConfig.from_dict({"experiment": "inflation", "params": {"s": s}})
        assert cfg.params["s"] == s

    def test_echo_drops_threads_and_output(self):
        cfg = ExperimentConfig.from_dict({"experiment": "oscillator", "threads": 4, "output": {"dir": "x"}})
        echo = cfg.echo()
        assert "threads" not in echo and "output" not in echo


class TestReports:
    @pytest.fixture(scope="class")
    @classmethod
    def averaging_reports(cls, tmp_path_factory):
        out = {}
        for k in (1, 3):
            raw = dict(SMALL_AVERAGING, threads=k)
            d = tmp_path_factory.mktemp(f"avg{k}")
            run(ExperimentConfig.from_dict(raw), d)
            out[k] = d
        return out

    def test_thread_count_invariant(self, averaging_reports):
        a, b = averaging_reports[1], averaging_reports[3]
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
        for csv_file in sorted(a.glob("*.csv")):
            assert csv_file.read_bytes() == (b / csv_file.name).read_bytes()

    def test_timing_kept_apart(self, averaging_reports):
        d = averaging_reports[3]
        timing = json.loads((d / "timing.json").read_text())
        assert timing["threads"] == 3 and timing["wall_clock_s"] > 0
        assert "wall_clock" not in (d / "report.json").read_text()

    def test_report_schema(self, averaging_reports):
        rep = json.loads((averaging_reports[1] / "report.json").read_text())
        for key in ("schema_version", "experiment", "config", "tables", "fits", "mc", "verdicts", "passed",
                    "resource_ceiling", "mode_count", "notes"):
            assert key in rep
        assert rep["config"]["random"]["seed"] == 7
        for v in rep["verdicts"].values():
            assert set(v) == {"value", "bound", "pass"}

    def test_csv_header(self, averaging_reports):
        for csv_file in averaging_reports[1].glob("*.csv"):
            first = csv_file.read_text().splitlines()[0]
            assert first == f"# vnlw-table {csv_file.stem} v1"

    def test_seed_changes_report(self, tmp_path):
        a = run(ExperimentConfig.from_dict(SMALL_AVERAGING)).to_json()
        b = run(ExperimentConfig.from_dict(dict(SMALL_AVERAGING, random={"seed": 8}))).to_json()
        assert a != b

    def test_rerun_identical(self):
        cfg = ExperimentConfig.from_dict(SMALL_AVERAGING)
        assert run(cfg).to_json() == run(cfg).to_json()


class TestCli:
    def test_pass_exit_zero(self, tmp_path, capsys):
        path = write_config(tmp_path, {"experiment": "oscillator"})
        code = main(["oscillator", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 0
        assert "PASS p3_period" in capsys.readouterr().out
        assert (tmp_path / "o" / "oscillator.csv").exists()

    def test_fail_exit_two(self, tmp_path):
        path = write_config(tmp_path, {"experiment": "oscillator", "params": {"p3_period": 7.0}})
        assert main(["oscillator", "--config", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_ceiling_exit_three(self, tmp_path):
        raw = {"experiment": "closeness", "grid": {"N": 16, "L": 4.0}, "solver": {"ceiling": 1e-3},
               "params": {"nus": [0.1, 0.05, 0.025], "T": 0.2}}
        path = write_config(tmp_path, raw)
        assert main(["closeness", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
        rep = json.loads((tmp_path / "o" / "report.json").read_text())
        assert rep["resource_ceiling"] is True

    @pytest.mark.parametrize("raw", [{"experiment": "oscillator", "bogus": 1},
                                     {"experiment": "averaging"},
                                     {"experiment": "inflation", "params": {"s": 0.75}}])
    def test_config_error_exit_one(self, tmp_path, raw, capsys):
        path = write_config(tmp_path, raw)
        assert main([raw["experiment"], "--config", str(path)]) == 1
        assert "configuration error" in capsys.readouterr().err

    def test_missing_file_exit_one(self, tmp_path):
        assert main(["oscillator", "--config", str(tmp_path / "none.yaml")]) == 1

    def test_experiment_mismatch_exit_one(self, tmp_path):
        path = write_config(tmp_path, {"experiment": "oscillator"})
        assert main(["kernel", "--config", str(path)]) == 1

    def test_seed_override(self, tmp_path):
        raw = {k: v for k, v in SMALL_AVERAGING.items() if k != "random"}
        path = write_config(tmp_path, raw)
        main(["averaging", "--config", str(path), "--seed", "7", "--threads", "2", "--out", str(tmp_path / "a")])
        ref = run(ExperimentConfig.from_dict(SMALL_AVERAGING)).to_json()
        assert (tmp_path / "a" / "report.json").read_text() == ref

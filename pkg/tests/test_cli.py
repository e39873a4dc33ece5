import json
from pathlib import Path

import numpy as np
import pytest

import renewalhawkes as rh
from renewalhawkes.cli import main


def write_cfg(path: Path, cfg: dict) -> str:
    path.write_text(json.dumps(cfg))
    return str(path)


SIM_CFG = {
    "model": {
        "immigration": {"family": "weibull", "kappa": 1.0, "beta": 10.0},
        "offspring": {"eta": 0.0, "kernel": {"family": "exponential", "tau0": 3.0}},
    },
    "r": 100.0,
    "seed": 7,
}


class TestSimulateCommand:
    def test_deterministic_output(self, tmp_path):
        cfg = write_cfg(tmp_path / "sim.json", SIM_CFG)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", cfg, "--out", str(out_a)]) == 0
        assert main(["simulate", "--config", cfg, "--out", str(out_b)]) == 0
        assert (out_a / "events.csv").read_bytes() == (out_b / "events.csv").read_bytes()
        sim = rh.read_simulation(out_a / "events.csv")
        assert 1 <= sim.events.n <= 40
        assert np.all(sim.generation == 0)

    def test_invalid_parameters_exit_2(self, tmp_path):
        bad = dict(SIM_CFG, model={
            "immigration": {"family": "weibull", "kappa": -1.0, "beta": 10.0},
            "offspring": SIM_CFG["model"]["offspring"],
        })
        cfg = write_cfg(tmp_path / "bad.json", bad)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_missing_config_exit_2(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2

    def test_explosion_exit_3(self, tmp_path):
        bad = dict(SIM_CFG)
        bad["model"] = {
            "immigration": {"family": "weibull", "kappa": 1.0, "beta": 0.01},
            "offspring": {"eta": 1.4, "kernel": {"family": "exponential", "tau0": 1.0}},
        }
        bad["r"] = 1e5
        cfg = write_cfg(tmp_path / "boom.json", bad)
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


@pytest.fixture(scope="module")
def sample_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    truth = rh.ModelSpec(rh.WeibullRenewal(1.0, 5.0), rh.OffspringModel(0.4, rh.ExponentialKernel(1.5)))
    sim = rh.simulate_to_size(truth, 150, rh.derive_rng(500, 0))
    path = out / "events.csv"
    rh.write_simulation(path, sim)
    return path


class TestFitCommand:
    def test_em_complete_round_trip(self, tmp_path, sample_data):
        cfg = write_cfg(
            tmp_path / "fit.json",
            {
                "algorithm": "em_complete",
                "data": str(sample_data),
                "seed": 1,
                "options": {"max_iterations": 40, "loglik_samples": 50},
            },
        )
        assert main(["fit", "--config", cfg, "--out", str(tmp_path / "fit_out")]) == 0
        report = json.loads((tmp_path / "fit_out" / "fit.json").read_text())
        assert report["algorithm"] == "em_complete"
        assert report["k"] == 4
        assert report["aic"] == pytest.approx(2 * 4 - 2 * report["loglik"])
        trace = (tmp_path / "fit_out" / "fit_trace.csv").read_text().splitlines()
        assert len(trace) == report["iterations"] + 1

    def test_baseline_reports_exact_loglik(self, tmp_path, sample_data):
        cfg = write_cfg(
            tmp_path / "fit.json",
            {"algorithm": "baseline", "data": str(sample_data), "kernel_family": "exponential"},
        )
        assert main(["fit", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        report = json.loads((tmp_path / "out" / "fit.json").read_text())
        assert report["loglik_label"] == "exact"
        assert report["aic"] is not None

    def test_rerun_identical(self, tmp_path, sample_data):
        cfg = write_cfg(
            tmp_path / "fit.json",
            {
                "algorithm": "em_semicomplete",
                "immigration_mode": "homogeneous",
                "data": str(sample_data),
                "seed": 2,
                "options": {"max_iterations": 60},
            },
        )
        assert main(["fit", "--config", cfg, "--out", str(tmp_path / "o1")]) == 0
        assert main(["fit", "--config", cfg, "--out", str(tmp_path / "o2")]) == 0
        assert (tmp_path / "o1" / "fit.json").read_bytes() == (tmp_path / "o2" / "fit.json").read_bytes()

    def test_unknown_algorithm_exit_2(self, tmp_path, sample_data):
        cfg = write_cfg(tmp_path / "fit.json", {"algorithm": "bogus", "data": str(sample_data)})
        assert main(["fit", "--config", cfg, "--out", str(tmp_path / "out")]) == 2


class TestGofCommand:
    def test_gof_from_fitted_report(self, tmp_path, sample_data):
        fit_cfg = write_cfg(
            tmp_path / "fit.json",
            {
                "algorithm": "em_complete",
                "data": str(sample_data),
                "seed": 1,
                "options": {"max_iterations": 30, "compute_loglik": False},
            },
        )
        assert main(["fit", "--config", fit_cfg, "--out", str(tmp_path / "fit_out")]) == 0
        gof_cfg = write_cfg(
            tmp_path / "gof.json",
            {
                "data": str(sample_data),
                "report": str(tmp_path / "fit_out" / "fit.json"),
                "mc_samples": 40,
                "seed": 3,
            },
        )
        assert main(["gof", "--config", gof_cfg, "--out", str(tmp_path / "gof_out")]) == 0
        summary = json.loads((tmp_path / "gof_out" / "gof.json").read_text())
        assert 0.0 <= summary["mc_pvalue"] <= 1.0
        samples = (tmp_path / "gof_out" / "gof_samples.csv").read_text().splitlines()
        assert len(samples) == 41


class TestExperimentCommand:
    def test_small_preset_runs_and_reaggregates(self, tmp_path):
        cfg = write_cfg(
            tmp_path / "exp.json",
            {"experiment": "table1", "replications": 1, "seed": 11, "size": 120},
        )
        out = tmp_path / "exp_out"
        code = main(["experiment", "--config", cfg, "--out", str(out)])
        assert code == 0
        results = (out / "results.csv").read_text()
        assert results.startswith("# experiment=table1")
        summary = (out / "summary.csv").read_text()
        assert "kappa_bias_mean" in summary

    def test_unknown_preset_exit_2(self, tmp_path):
        cfg = write_cfg(tmp_path / "exp.json", {"experiment": "tableX"})
        assert main(["experiment", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

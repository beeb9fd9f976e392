import json

import numpy as np
import pytest

from relkin import (
    ConfigError,
    ExperimentConfig,
    check_report,
    emit_outputs,
    rmse_matrix_aligned,
    rmse_vector,
    run_experiment,
)


def rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


class TestRmseVector:
    def test_exact_estimates_give_zero(self):
        z = np.array([1.0, -2.0, 3.0])
        assert rmse_vector(np.tile(z, (8, 1)), z) == 0.0

    def test_single_trial_norm(self):
        assert rmse_vector([[3.0, 4.0]], [0.0, 0.0]) == pytest.approx(5.0)

    def test_gaussian_scalar_statistics(self):
        rng = np.random.default_rng(0)
        est = rng.normal(0.0, 1.0, size=(10_000, 1))
        assert 0.97 <= rmse_vector(est, np.zeros(1)) <= 1.03


class TestRmseMatrixAligned:
    def test_rotated_estimates_align_to_zero(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(2, 6))
        ests = [rotation(a) @ z for a in rng.uniform(0, 2 * np.pi, 12)]
        assert rmse_matrix_aligned(ests, z) < 1e-12

    def test_column_offset_removed_by_centering(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(2, 5))
        ests = [z + np.array([[4.0], [-1.0]])]
        assert rmse_matrix_aligned(ests, z) < 1e-12

    def test_residual_bounded_by_perturbation(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(2, 5))
        pert = 1e-2 * rng.normal(size=(2, 5))
        assert rmse_matrix_aligned([z + pert], z) <= np.linalg.norm(pert) + 1e-12


class TestConfig:
    def test_empty_sweep_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(kind="k_sweep", sweep=[])

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(kind="nope", sweep=[1])

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "fixture": "cluster5",
            "sweep": {"K": [10, 20]},
            "sigma_m": 0.2,
            "trials": 7,
            "seed": 5,
        }))
        cfg = ExperimentConfig.from_json(path)
        assert cfg.kind == "k_sweep"
        assert cfg.sweep == [10, 20]
        assert cfg.trials == 7
        back = cfg.to_dict()
        assert back["sweep"] == {"K": [10, 20]}

    def test_json_sigma_sweep_and_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"sweep": {"sigma_db_m": [-10, -5, 0]}, "trials": 3}))
        cfg = ExperimentConfig.from_json(path, trials=9)
        assert cfg.kind == "sigma_sweep" and cfg.trials == 9

    def test_json_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"sweep": {"K": [10]}, "bogus": 1}))
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(path)


class TestRunExperiment:
    def test_noiseless_single_trial_sanity(self):
        # polynomial delay model: the whole pipeline is exact and every RMSE
        # collapses to numerical noise
        cfg = ExperimentConfig(kind="k_sweep", sweep=[10], sigma_m=0.0, trials=1,
                               seed=0, delay_model="taylor")
        report = run_experiment(cfg)
        for row in report.rows:
            assert row.rmse < 1e-6
            assert row.n_fail == 0

    def test_k_sweep_rmse_decreases_and_tracks_rcrb(self):
        cfg = ExperimentConfig(kind="k_sweep", sweep=[10, 60], trials=60, seed=2)
        report = run_experiment(cfg)
        for q in ("r", "rdot", "rddot"):
            rows = report.quantity_rows(q)
            assert rows[0].rmse > rows[1].rmse
            assert rows[1].rmse == pytest.approx(rows[1].rcrb, rel=0.12)

    def test_sigma_sweep_values_are_db_meters(self):
        cfg = ExperimentConfig(kind="sigma_sweep", sweep=[-10.0, 0.0], K=40,
                               trials=40, seed=3)
        report = run_experiment(cfg)
        r_rows = report.quantity_rows("r")
        # ten dB of noise is a factor 10 in sigma, hence in the bound
        assert r_rows[1].rcrb == pytest.approx(10 * r_rows[0].rcrb, rel=1e-9)
        assert r_rows[1].rmse > r_rows[0].rmse

    def test_time_grid_reports_both_estimators(self):
        cfg = ExperimentConfig(kind="time_grid", sweep=[-3.0, 0.0, 3.0], K=20,
                               trials=30, seed=4)
        report = run_experiment(cfg)
        assert len(report.quantity_rows("Xk_dynamic")) == 3
        assert len(report.quantity_rows("Xk_cmds")) == 3
        # sweep values snap to the marker grid
        for row in report.rows:
            assert np.min(np.abs(np.linspace(-3, 3, 20) - row.sweep_value)) < 1e-12

    def test_deterministic_given_seed(self):
        cfg = ExperimentConfig(kind="k_sweep", sweep=[15], trials=12, seed=9)
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        for ra, rb in zip(a.rows, b.rows):
            assert ra.rmse == rb.rmse


class TestFailureAccounting:
    def test_failed_trials_counted_not_dropped_silently(self, monkeypatch):
        import relkin.experiments as exp_mod

        real = exp_mod._estimate_once
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            # first call is the noiseless reference; fail two of the trials
            if calls["n"] in (3, 5):
                raise exp_mod.EmbeddingFailureError("synthetic failure")
            return real(*args, **kwargs)

        monkeypatch.setattr(exp_mod, "_estimate_once", flaky)
        cfg = ExperimentConfig(kind="k_sweep", sweep=[12], trials=6, seed=0)
        report = run_experiment(cfg)
        for row in report.rows:
            assert row.n_fail == 2
            assert np.isfinite(row.rmse)


class TestChecks:
    def test_k_sweep_check_passes_at_scale(self):
        cfg = ExperimentConfig(kind="k_sweep", sweep=[40], trials=400, seed=12)
        assert check_report(run_experiment(cfg)) == []

    def test_check_flags_violations(self):
        cfg = ExperimentConfig(kind="k_sweep", sweep=[20], trials=50, seed=1)
        report = run_experiment(cfg)
        failures = check_report(report, ratio_band=(0.999999, 1.000001))
        assert len(failures) >= 1


class TestEmit:
    def test_files_written_per_kind(self, tmp_path):
        reports = []
        for kind, sweep in (("k_sweep", [10]), ("sigma_sweep", [-10.0]), ("time_grid", [0.0])):
            cfg = ExperimentConfig(kind=kind, sweep=sweep, K=15, trials=4, seed=0)
            reports.append(run_experiment(cfg))
        written = emit_outputs(reports, tmp_path)
        names = {p.name for p in written}
        assert {"experiment_k_sweep.csv", "experiment_sigma_sweep.csv",
                "experiment_time_grid.csv", "manifest.json"} <= names
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert len(manifest["experiments"]) == 3
        header = (tmp_path / "experiment_k_sweep.csv").read_text().splitlines()[0]
        assert header == "sweep_value,quantity,rmse,rcrb,n_fail"

    def test_byte_identical_rerun(self, tmp_path):
        def produce(where):
            cfg = ExperimentConfig(kind="k_sweep", sweep=[12, 24], trials=10, seed=33)
            emit_outputs(run_experiment(cfg), where)
            return (where / "experiment_k_sweep.csv").read_bytes(), \
                   (where / "plot_k_sweep.csv").read_bytes()

        a = produce(tmp_path / "a")
        b = produce(tmp_path / "b")
        assert a == b

    def test_plot_file_layout(self, tmp_path):
        cfg = ExperimentConfig(kind="time_grid", sweep=[-3.0, 3.0], K=10, trials=4, seed=0)
        emit_outputs(run_experiment(cfg), tmp_path)
        header = (tmp_path / "plot_time_grid.csv").read_text().splitlines()[0]
        assert header == "sweep_value,rmse_Xk_dynamic,rmse_Xk_cmds"

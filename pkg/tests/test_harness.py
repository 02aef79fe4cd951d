import csv
import json
import math

import numpy as np
import pytest
from scipy import stats

from gpmle.covariance import Family, KernelSpec, ParamVector
from gpmle.harness import (
    EXPERIMENT_NAMES,
    RECORD_FIELDS,
    ExperimentConfig,
    coverage_rate,
    ks_distance,
    mean_and_var,
    run_experiment,
    run_eigen_trends,
    run_fixed_microergodic,
    run_increasing_normality,
    run_varln_decay,
    write_report,
)
from gpmle.mle import FitError


def small_increasing_config(**overrides):
    base = dict(
        experiment="increasing_normality",
        regime="increasing",
        kernel=KernelSpec(Family.EXPONENTIAL),
        theta0=ParamVector(1.0, 0.5),
        n_list=(20, 40),
        replicates=5,
        master_seed=101,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def small_fixed_config(**overrides):
    base = dict(
        experiment="fixed_microergodic",
        regime="fixed",
        kernel=KernelSpec(Family.MATERN, 0.5),
        theta0=ParamVector(1.0, 1.0),
        alpha1=2.0,
        n_list=(20, 40),
        replicates=5,
        master_seed=102,
        multistart=2,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# summary statistics


def test_ks_distance_matches_scipy():
    rng = np.random.default_rng(0)
    for size in (10, 100, 999):
        sample = rng.standard_normal(size) * 1.3 + 0.2
        ours = ks_distance(sample)
        ref = stats.kstest(sample, "norm").statistic
        assert ours == pytest.approx(ref, rel=1e-12)


def test_ks_distance_synthetic_normal():
    sample = np.random.default_rng(1).standard_normal(10_000)
    assert ks_distance(sample) <= 0.02


def test_mean_and_var_constant_records():
    mean, var = mean_and_var([2.5] * 8)
    assert mean == 2.5 and var == 0.0


def test_coverage_always_contains_truth():
    rate, se = coverage_rate([True] * 20)
    assert rate == 1.0 and se == 0.0
    rate, se = coverage_rate([True] * 3 + [False])
    assert rate == 0.75
    assert se == pytest.approx(math.sqrt(0.75 * 0.25 / 4), rel=1e-14)


def test_summary_primitives_reject_empty():
    for func in (ks_distance, mean_and_var, coverage_rate):
        with pytest.raises(ValueError):
            func([])


# ---------------------------------------------------------------------------
# experiments


def test_increasing_normality_records_shape():
    config = small_increasing_config()
    report = run_increasing_normality(config)
    assert len(report.records) == config.replicates * len(config.n_list)
    assert all(set(r) == set(RECORD_FIELDS) for r in report.records)
    assert all(r["status"] == "ok" for r in report.records)
    keys = [(r["n"], r["replicate"]) for r in report.records]
    assert keys == sorted(keys)
    for n in config.n_list:
        per_n = report.summaries["per_n"][str(n)]
        assert per_n["n_ok"] == config.replicates
        assert 0.0 <= per_n["coverage_sigma2"] <= 1.0
    assert set(report.series) == {
        "median_err_vs_n",
        "coverage_sigma2_vs_n",
        "coverage_alpha_vs_n",
        "ks_z1_vs_n",
        "ks_z2_vs_n",
    }


def test_increasing_normality_deterministic_across_workers():
    r1 = run_increasing_normality(small_increasing_config(workers=1))
    r2 = run_increasing_normality(small_increasing_config(workers=2))
    assert r1.records == r2.records
    assert r1.summaries == r2.summaries


def test_failure_isolation(monkeypatch):
    import gpmle.harness as harness

    real_fit = harness.fit_full
    calls = {"count": 0}

    def flaky(*args, **kwargs):
        calls["count"] += 1
        if calls["count"] == 3:
            raise FitError("synthetic failure")
        return real_fit(*args, **kwargs)

    monkeypatch.setattr(harness, "fit_full", flaky)
    config = small_increasing_config(n_list=(20,), replicates=5)
    report = run_increasing_normality(config)
    assert report.failures == 1
    statuses = [r["status"] for r in report.records]
    assert statuses.count("ok") == 4
    assert statuses.count("error:fit") == 1
    bad = next(r for r in report.records if r["status"] != "ok")
    assert bad["sigma2_hat"] is None
    assert report.summaries["per_n"]["20"]["n_ok"] == 4
    assert report.summaries["per_n"]["20"]["n_failed"] == 1


def test_fixed_microergodic_paths():
    config = small_fixed_config()
    report = run_fixed_microergodic(config)
    assert len(report.records) == config.replicates * len(config.n_list)
    m0 = report.summaries["microergodic_true"]
    assert m0 == pytest.approx(1.0)
    assert report.summaries["limit_variance"] == pytest.approx(2.0)
    # microergodic_hat column is the fixed-alpha1 profile path; the full
    # MLE path is recomputable from sigma2_hat * alpha_hat^(2 nu).
    for r in report.records:
        assert r["status"] == "ok"
        nu = r["nu"]
        est_full = r["sigma2_hat"] * r["alpha_hat"] ** (2 * nu)
        z2_back = math.sqrt(r["n"]) * (est_full - m0) / (m0 * math.sqrt(2.0))
        assert z2_back == pytest.approx(r["z2"], rel=1e-10)
    per_n = report.summaries["per_n"]["40"]
    assert per_n["rmse_profile"] > 0
    assert abs(per_n["mean_diff_paths"]) < 10 * per_n["pooled_se_paths"] + 1.0


def test_eigen_trends_dichotomy():
    config = ExperimentConfig(
        experiment="eigen_trends",
        regime="increasing",
        kernel=KernelSpec(Family.EXPONENTIAL),
        theta0=ParamVector(1.0, 0.5),
        n_list=(25, 50, 100),
        replicates=1,
        master_seed=103,
    )
    report = run_eigen_trends(config)
    assert report.records == []
    inc = report.summaries["increasing"]
    fix = report.summaries["fixed"]
    assert inc["lambda_min_nonincreasing"]
    assert fix["lambda_min_nonincreasing"]
    assert fix["lambda_max_nondecreasing"]
    assert fix["lambda_min"][-1] < fix["lambda_min"][0]
    for label in ("increasing", "fixed"):
        s = report.summaries[label]
        for lam, bound in zip(s["lambda_max"], s["gershgorin_upper"]):
            assert bound >= lam - 1e-12


def test_varln_decay_ratios():
    config = ExperimentConfig(
        experiment="varln_decay",
        regime="increasing",
        kernel=KernelSpec(Family.EXPONENTIAL),
        theta0=ParamVector(1.0, 0.5),
        theta_probe=ParamVector(1.5, 0.7),
        n_list=(50, 100, 200),
        replicates=1,
        master_seed=104,
    )
    report = run_varln_decay(config)
    assert report.summaries["monotone_decreasing"]
    for ratio in report.summaries["doubling_ratios"].values():
        assert 1.5 <= ratio <= 2.5
    for err in report.summaries["two_over_n_error"]:
        assert err <= 1e-12


def test_run_experiment_dispatch():
    report = run_experiment(small_increasing_config())
    assert report.config.experiment == "increasing_normality"
    with pytest.raises(ValueError):
        ExperimentConfig(
            experiment="nope",
            regime="increasing",
            kernel=KernelSpec(Family.EXPONENTIAL),
            theta0=ParamVector(1.0, 0.5),
            n_list=(10,),
            replicates=1,
            master_seed=1,
        )
    assert set(EXPERIMENT_NAMES) == {
        "increasing_normality",
        "fixed_microergodic",
        "eigen_trends",
        "varln_decay",
    }


def test_config_validation():
    with pytest.raises(ValueError):
        small_increasing_config(n_list=(40, 20))  # not increasing
    with pytest.raises(ValueError):
        small_increasing_config(replicates=0)
    with pytest.raises(ValueError):
        small_fixed_config(alpha1=None)
    with pytest.raises(ValueError):
        small_fixed_config(alpha1=99.0)  # outside alpha bounds
    with pytest.raises(ValueError):
        ExperimentConfig(
            experiment="varln_decay",
            regime="increasing",
            kernel=KernelSpec(Family.EXPONENTIAL),
            theta0=ParamVector(1.0, 0.5),
            n_list=(10,),
            replicates=1,
            master_seed=1,
        )  # theta_probe missing


# ---------------------------------------------------------------------------
# report files


def test_write_report_files(tmp_path):
    report = run_experiment(small_increasing_config())
    written = write_report(report, tmp_path)
    names = {p.name for p in written}
    assert "records.csv" in names and "summary.json" in names
    with open(tmp_path / "records.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(RECORD_FIELDS)
    assert len(rows) == 1 + len(report.records)
    # floats round-trip exactly
    assert float(rows[1][5]) == report.records[0]["sigma2_hat"]

    payload = json.loads((tmp_path / "summary.json").read_text())
    assert payload["config"]["perturb"] == 0.2  # defaults echoed
    assert payload["n_records"] == len(report.records)

    series = (tmp_path / "series_median_err_vs_n.csv").read_text().splitlines()
    assert series[0] == "x,y"

    with pytest.raises(FileExistsError):
        write_report(report, tmp_path)
    write_report(report, tmp_path, force=True)


def test_records_csv_byte_identical(tmp_path):
    report1 = run_experiment(small_increasing_config(workers=1))
    report2 = run_experiment(small_increasing_config(workers=2))
    write_report(report1, tmp_path / "a")
    write_report(report2, tmp_path / "b")
    assert (tmp_path / "a/records.csv").read_bytes() == (tmp_path / "b/records.csv").read_bytes()

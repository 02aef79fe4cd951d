"""Replicated Monte Carlo experiments over the two asymptotic regimes.

Four experiment kinds, dispatched by name through :func:`run_experiment`:

* ``increasing_normality`` - simulate/fit on minimum-separation designs,
  standardize errors with the Fisher matrix at the true parameter, and
  summarize coverage and normality of the estimator.
* ``fixed_microergodic`` - simulate on a fixed compact box and track the
  two estimators of the microergodic combination sigma2 * alpha^(2 nu):
  the variance profile at a fixed scale alpha1, and the full MLE.
* ``eigen_trends`` - extreme eigenvalues of the true covariance matrix on
  nested designs in both regimes (deterministic diagnostic).
* ``varln_decay`` - the exact variance of the likelihood criterion at a
  probe parameter across sample sizes (deterministic diagnostic).

Seeding: task g (the global replicate counter, n-major) draws its design
from stream (master_seed, 2g) and its observations from (master_seed,
2g + 1), so results are independent of worker count and scheduling.
Records are keyed by (n, replicate) and sorted before summarizing; a
replicate whose factorization or fit fails is recorded with an error
status and excluded from summaries, never aborting the batch.

Per-replicate record fields (the records CSV schema) are
``regime,kernel,nu,n,replicate,sigma2_hat,alpha_hat,microergodic_hat,z1,z2,jitter_used,status``.
Column semantics by experiment:

* increasing_normality: sigma2_hat/alpha_hat/microergodic_hat from the
  fit; (z1, z2) = sqrt(n) * sqrtm(Sigma_theta0) (theta_hat - theta0).
* fixed_microergodic: sigma2_hat/alpha_hat from the full fit;
  microergodic_hat is the fixed-alpha1 profile estimate (the full-MLE
  estimate is sigma2_hat * alpha_hat^(2 nu)); z1 and z2 are the profile
  and full-MLE estimates standardized by the limit law, i.e.
  sqrt(n) (estimate - m0) / (m0 sqrt(2)).

Coverage flags depend on the per-replicate Fisher matrix and are folded
into the summaries; they can be recomputed from the records plus the
echoed config by regenerating each replicate's design.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .covariance import KernelSpec, ParamBounds, ParamVector, microergodic
from .gausslin import NotPositiveDefiniteError, build_cov, chol, eig_extremes, gershgorin_upper
from .mle import FitError, fit_full, fisher_matrix, var_ln, _profile_state
from .simulate import FixedDesignMode, Regime, SeedSpec, gen_fixed, gen_increasing, sample_gp

RECORD_FIELDS = (
    "regime",
    "kernel",
    "nu",
    "n",
    "replicate",
    "sigma2_hat",
    "alpha_hat",
    "microergodic_hat",
    "z1",
    "z2",
    "jitter_used",
    "status",
)

EXPERIMENT_NAMES = ("increasing_normality", "fixed_microergodic", "eigen_trends", "varln_decay")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    regime: Regime
    kernel: KernelSpec
    theta0: ParamVector
    n_list: tuple[int, ...]
    replicates: int
    master_seed: int
    bounds: ParamBounds = field(default_factory=ParamBounds)
    d: int = 1
    delta: float = 1.0
    perturb: float = 0.2
    box: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    design_mode: FixedDesignMode = FixedDesignMode.UNIFORM
    alpha1: float | None = None
    multistart: int = 3
    theta_probe: ParamVector | None = None
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_NAMES:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENT_NAMES}")
        object.__setattr__(self, "regime", Regime(self.regime))
        object.__setattr__(self, "design_mode", FixedDesignMode(self.design_mode))
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "box", tuple((float(lo), float(hi)) for lo, hi in self.box))
        if not self.n_list or any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValueError(f"n_list must be non-empty and strictly increasing, got {self.n_list!r}")
        if any(n < 2 for n in self.n_list):
            raise ValueError("every n must be >= 2")
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates!r}")
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d!r}")
        if len(self.box) != self.d:
            raise ValueError(f"box must have one (lo, hi) pair per dimension, got {len(self.box)} for d={self.d}")
        if not 0.0 <= self.perturb <= 0.4:
            raise ValueError(f"perturb must lie in [0, 0.4], got {self.perturb!r}")
        if self.delta <= 0:
            raise ValueError(f"delta must be > 0, got {self.delta!r}")
        if self.multistart < 1:
            raise ValueError(f"multistart must be >= 1, got {self.multistart!r}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers!r}")
        if self.experiment == "fixed_microergodic":
            if self.kernel.smoothness is None:
                raise ValueError("fixed_microergodic requires a matern or exponential kernel")
            if self.alpha1 is None:
                raise ValueError("fixed_microergodic requires alpha1")
            if not self.bounds.alpha_inf <= self.alpha1 <= self.bounds.alpha_sup:
                raise ValueError(f"alpha1={self.alpha1!r} must lie in the alpha bounds")
        if self.experiment == "varln_decay" and self.theta_probe is None:
            raise ValueError("varln_decay requires theta_probe")

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "regime": self.regime.value,
            "kernel": {"family": self.kernel.family.value, "nu": self.kernel.nu},
            "theta0": {"sigma2": self.theta0.sigma2, "alpha": self.theta0.alpha},
            "n_list": list(self.n_list),
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "bounds": {
                "alpha_inf": self.bounds.alpha_inf,
                "alpha_sup": self.bounds.alpha_sup,
                "sigma2_lo": self.bounds.sigma2_lo,
                "sigma2_hi": self.bounds.sigma2_hi,
            },
            "d": self.d,
            "delta": self.delta,
            "perturb": self.perturb,
            "box": [list(pair) for pair in self.box],
            "design_mode": self.design_mode.value,
            "alpha1": self.alpha1,
            "multistart": self.multistart,
            "theta_probe": None
            if self.theta_probe is None
            else {"sigma2": self.theta_probe.sigma2, "alpha": self.theta_probe.alpha},
            "workers": self.workers,
        }


@dataclass
class McReport:
    config: ExperimentConfig
    records: list[dict]
    summaries: dict
    series: dict[str, tuple[list, list]]
    failures: int


# ---------------------------------------------------------------------------
# summary statistics


def ks_distance(sample) -> float:
    """Kolmogorov-Smirnov distance sup_t |F_hat(t) - Phi(t)| vs standard normal."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("ks_distance requires a nonempty sample")
    cdf = ndtr(x)
    steps = np.arange(n + 1) / n
    return float(max(np.max(steps[1:] - cdf), np.max(cdf - steps[:-1])))


def mean_and_var(values) -> tuple[float, float]:
    """Sample mean and unbiased sample variance."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
    return mean, var


def coverage_rate(flags) -> tuple[float, float]:
    """Coverage proportion and its exact binomial standard error."""
    f = np.asarray(flags, dtype=bool)
    if f.size == 0:
        raise ValueError("empty sample")
    p = float(np.mean(f))
    se = math.sqrt(p * (1.0 - p) / f.size)
    return p, se


# ---------------------------------------------------------------------------
# per-replicate tasks


def _blank_record(config: ExperimentConfig, n: int, rep: int, status: str) -> dict:
    nu = config.kernel.smoothness
    return {
        "regime": config.regime.value,
        "kernel": config.kernel.family.value,
        "nu": nu,
        "n": n,
        "replicate": rep,
        "sigma2_hat": None,
        "alpha_hat": None,
        "microergodic_hat": None,
        "z1": None,
        "z2": None,
        "jitter_used": None,
        "status": status,
    }


def _increasing_task(config: ExperimentConfig, n: int, rep: int, g: int) -> tuple[dict, dict]:
    design = gen_increasing(n, config.d, config.delta, config.perturb, SeedSpec(config.master_seed, 2 * g))
    factor0 = chol(build_cov(config.kernel, config.theta0, design))
    y = sample_gp(factor0, SeedSpec(config.master_seed, 2 * g + 1))
    try:
        fit = fit_full(config.kernel, design, y, config.bounds, config.multistart)
    except (NotPositiveDefiniteError, FitError):
        return _blank_record(config, n, rep, "error:fit"), {}

    info = fisher_matrix(config.kernel, config.theta0, design)
    err = fit.theta_hat.as_array() - config.theta0.as_array()
    z = math.sqrt(n) * (info.sym_sqrt() @ err)
    half_widths = 1.96 * np.sqrt(np.diag(info.inverse()) / n)
    covered = np.abs(err) <= half_widths

    record = _blank_record(config, n, rep, "ok")
    record.update(
        sigma2_hat=fit.theta_hat.sigma2,
        alpha_hat=fit.theta_hat.alpha,
        microergodic_hat=fit.microergodic_hat,
        z1=float(z[0]),
        z2=float(z[1]),
        jitter_used=max(factor0.jitter_used, fit.jitter_used),
    )
    extras = {
        "covered_sigma2": bool(covered[0]),
        "covered_alpha": bool(covered[1]),
        "err_norm": float(np.linalg.norm(err)),
        "at_bound": fit.at_bound_low or fit.at_bound_high,
    }
    return record, extras


def _fixed_task(config: ExperimentConfig, n: int, rep: int, g: int) -> tuple[dict, dict]:
    design = gen_fixed(n, config.d, config.box, config.design_mode, SeedSpec(config.master_seed, 2 * g))
    factor0 = chol(build_cov(config.kernel, config.theta0, design))
    y = sample_gp(factor0, SeedSpec(config.master_seed, 2 * g + 1))

    nu = config.kernel.smoothness
    m0 = microergodic(config.theta0, nu)
    scale = m0 * math.sqrt(2.0)
    try:
        sigma2_prof, _, jitter_prof = _profile_state(config.kernel, config.alpha1, design, y)
        fit = fit_full(config.kernel, design, y, config.bounds, config.multistart)
    except (NotPositiveDefiniteError, FitError):
        return _blank_record(config, n, rep, "error:fit"), {}

    est_profile = sigma2_prof * config.alpha1 ** (2.0 * nu)
    est_full = fit.microergodic_hat

    record = _blank_record(config, n, rep, "ok")
    record.update(
        sigma2_hat=fit.theta_hat.sigma2,
        alpha_hat=fit.theta_hat.alpha,
        microergodic_hat=est_profile,
        z1=math.sqrt(n) * (est_profile - m0) / scale,
        z2=math.sqrt(n) * (est_full - m0) / scale,
        jitter_used=max(factor0.jitter_used, jitter_prof, fit.jitter_used),
    )
    extras = {"est_profile": est_profile, "est_full": est_full, "at_bound": fit.at_bound_low or fit.at_bound_high}
    return record, extras


_TASK_FUNCS = {"increasing_normality": _increasing_task, "fixed_microergodic": _fixed_task}


def _run_task(args: tuple) -> tuple[int, int, dict, dict]:
    config, n, rep, g = args
    func = _TASK_FUNCS[config.experiment]
    try:
        record, extras = func(config, n, rep, g)
    except (NotPositiveDefiniteError, FitError, np.linalg.LinAlgError):
        record, extras = _blank_record(config, n, rep, "error:factorization"), {}
    return n, rep, record, extras


def _run_replicated(config: ExperimentConfig) -> tuple[list[dict], dict[tuple[int, int], dict]]:
    tasks = []
    g = 0
    for n in config.n_list:
        for rep in range(config.replicates):
            tasks.append((config, n, rep, g))
            g += 1

    results: dict[tuple[int, int], tuple[dict, dict]] = {}
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for n, rep, record, extras in pool.map(_run_task, tasks, chunksize=8):
                results[(n, rep)] = (record, extras)
    else:
        for task in tasks:
            n, rep, record, extras = _run_task(task)
            results[(n, rep)] = (record, extras)

    keys = sorted(results)
    records = [results[k][0] for k in keys]
    extras = {k: results[k][1] for k in keys}
    return records, extras


# ---------------------------------------------------------------------------
# experiments


def run_increasing_normality(config: ExperimentConfig) -> McReport:
    if config.regime is not Regime.INCREASING:
        raise ValueError("increasing_normality requires regime='increasing'")
    records, extras = _run_replicated(config)

    summaries: dict = {"per_n": {}}
    series_ns: list[int] = []
    series_median_err: list[float] = []
    series_cov = {"sigma2": [], "alpha": []}
    series_ks = {"z1": [], "z2": []}
    for n in config.n_list:
        ok = [(r, extras[(n, r["replicate"])]) for r in records if r["n"] == n and r["status"] == "ok"]
        n_fail = config.replicates - len(ok)
        if not ok:
            summaries["per_n"][str(n)] = {"n_ok": 0, "n_failed": n_fail}
            continue
        z1 = [r["z1"] for r, _ in ok]
        z2 = [r["z2"] for r, _ in ok]
        cov_s, se_s = coverage_rate([e["covered_sigma2"] for _, e in ok])
        cov_a, se_a = coverage_rate([e["covered_alpha"] for _, e in ok])
        med_err = float(np.median([e["err_norm"] for _, e in ok]))
        mean_s2, var_s2 = mean_and_var([r["sigma2_hat"] for r, _ in ok])
        mean_al, var_al = mean_and_var([r["alpha_hat"] for r, _ in ok])
        summaries["per_n"][str(n)] = {
            "n_ok": len(ok),
            "n_failed": n_fail,
            "coverage_sigma2": cov_s,
            "coverage_sigma2_se": se_s,
            "coverage_alpha": cov_a,
            "coverage_alpha_se": se_a,
            "ks_z1": ks_distance(z1),
            "ks_z2": ks_distance(z2),
            "median_err_norm": med_err,
            "mean_sigma2_hat": mean_s2,
            "var_sigma2_hat": var_s2,
            "mean_alpha_hat": mean_al,
            "var_alpha_hat": var_al,
            "n_at_bound": int(sum(e["at_bound"] for _, e in ok)),
        }
        series_ns.append(n)
        series_median_err.append(med_err)
        series_cov["sigma2"].append(cov_s)
        series_cov["alpha"].append(cov_a)
        series_ks["z1"].append(ks_distance(z1))
        series_ks["z2"].append(ks_distance(z2))

    series = {
        "median_err_vs_n": (series_ns, series_median_err),
        "coverage_sigma2_vs_n": (series_ns, series_cov["sigma2"]),
        "coverage_alpha_vs_n": (series_ns, series_cov["alpha"]),
        "ks_z1_vs_n": (series_ns, series_ks["z1"]),
        "ks_z2_vs_n": (series_ns, series_ks["z2"]),
    }
    failures = sum(1 for r in records if r["status"] != "ok")
    return McReport(config=config, records=records, summaries=summaries, series=series, failures=failures)


def run_fixed_microergodic(config: ExperimentConfig) -> McReport:
    if config.regime is not Regime.FIXED:
        raise ValueError("fixed_microergodic requires regime='fixed'")
    records, extras = _run_replicated(config)

    nu = config.kernel.smoothness
    m0 = microergodic(config.theta0, nu)
    limit_var = 2.0 * m0 * m0

    summaries: dict = {"microergodic_true": m0, "limit_variance": limit_var, "per_n": {}}
    series_ns: list[int] = []
    rmse_profile: list[float] = []
    rmse_full: list[float] = []
    var_sqrtn: list[float] = []
    for n in config.n_list:
        ok = [(r, extras[(n, r["replicate"])]) for r in records if r["n"] == n and r["status"] == "ok"]
        n_fail = config.replicates - len(ok)
        if not ok:
            summaries["per_n"][str(n)] = {"n_ok": 0, "n_failed": n_fail}
            continue
        est_a = np.array([e["est_profile"] for _, e in ok])
        est_b = np.array([e["est_full"] for _, e in ok])
        sqrt_n = math.sqrt(n)
        mean_a, var_a = mean_and_var(est_a)
        mean_b, var_b = mean_and_var(est_b)
        var_sq_a = mean_and_var(sqrt_n * (est_a - m0))[1]
        var_sq_b = mean_and_var(sqrt_n * (est_b - m0))[1]
        pooled_se = math.sqrt(var_a / est_a.size + var_b / est_b.size)
        summaries["per_n"][str(n)] = {
            "n_ok": len(ok),
            "n_failed": n_fail,
            "bias_profile": mean_a - m0,
            "rmse_profile": float(np.sqrt(np.mean((est_a - m0) ** 2))),
            "var_sqrtn_profile": var_sq_a,
            "bias_full_ml": mean_b - m0,
            "rmse_full_ml": float(np.sqrt(np.mean((est_b - m0) ** 2))),
            "var_sqrtn_full_ml": var_sq_b,
            "mean_diff_paths": float(np.mean(est_a) - np.mean(est_b)),
            "pooled_se_paths": pooled_se,
            "ks_z1": ks_distance([r["z1"] for r, _ in ok]),
            "n_at_bound": int(sum(e["at_bound"] for _, e in ok)),
        }
        series_ns.append(n)
        rmse_profile.append(summaries["per_n"][str(n)]["rmse_profile"])
        rmse_full.append(summaries["per_n"][str(n)]["rmse_full_ml"])
        var_sqrtn.append(var_sq_a)

    series = {
        "rmse_profile_vs_n": (series_ns, rmse_profile),
        "rmse_full_ml_vs_n": (series_ns, rmse_full),
        "var_sqrtn_profile_vs_n": (series_ns, var_sqrtn),
    }
    failures = sum(1 for r in records if r["status"] != "ok")
    return McReport(config=config, records=records, summaries=summaries, series=series, failures=failures)


def run_eigen_trends(config: ExperimentConfig) -> McReport:
    """Extreme eigenvalues of R_theta0 on nested designs, both regimes.

    Deterministic given the config; designs are prefixes of a single draw
    per regime so monotonicity in n reflects eigenvalue interlacing.
    """
    n_max = config.n_list[-1]
    design_inc = gen_increasing(n_max, config.d, config.delta, config.perturb, SeedSpec(config.master_seed, 0))
    design_fix = gen_fixed(n_max, config.d, config.box, config.design_mode, SeedSpec(config.master_seed, 1))

    summaries: dict = {}
    series: dict[str, tuple[list, list]] = {}
    for label, design in (("increasing", design_inc), ("fixed", design_fix)):
        lmins, lmaxs, bounds_upper = [], [], []
        for n in config.n_list:
            cov = build_cov(config.kernel, config.theta0, design.prefix(n))
            lo, hi = eig_extremes(cov)
            lmins.append(lo)
            lmaxs.append(hi)
            bounds_upper.append(gershgorin_upper(cov))
        summaries[label] = {
            "n_list": list(config.n_list),
            "lambda_min": lmins,
            "lambda_max": lmaxs,
            "gershgorin_upper": bounds_upper,
            "lambda_min_nonincreasing": bool(all(b <= a * (1 + 1e-12) for a, b in zip(lmins, lmins[1:]))),
            "lambda_max_nondecreasing": bool(all(b >= a * (1 - 1e-12) for a, b in zip(lmaxs, lmaxs[1:]))),
        }
        series[f"{label}_lambda_min"] = (list(config.n_list), lmins)
        series[f"{label}_lambda_max"] = (list(config.n_list), lmaxs)

    return McReport(config=config, records=[], summaries=summaries, series=series, failures=0)


def run_varln_decay(config: ExperimentConfig) -> McReport:
    """Exact var(L_n) at the probe parameter across n; deterministic."""
    if config.regime is not Regime.INCREASING:
        raise ValueError("varln_decay requires regime='increasing'")
    variances, var_at_true = [], []
    for idx, n in enumerate(config.n_list):
        design = gen_increasing(n, config.d, config.delta, config.perturb, SeedSpec(config.master_seed, idx))
        variances.append(var_ln(config.kernel, config.theta_probe, config.theta0, design))
        var_at_true.append(var_ln(config.kernel, config.theta0, config.theta0, design))

    ratios = {}
    for i, n in enumerate(config.n_list):
        if 2 * n in config.n_list:
            j = config.n_list.index(2 * n)
            ratios[f"{n}/{2 * n}"] = variances[i] / variances[j]

    summaries = {
        "n_list": list(config.n_list),
        "var_ln_probe": variances,
        "var_ln_at_theta0": var_at_true,
        "two_over_n_error": [abs(v - 2.0 / n) for v, n in zip(var_at_true, config.n_list)],
        "doubling_ratios": ratios,
        "monotone_decreasing": bool(all(b < a for a, b in zip(variances, variances[1:]))),
    }
    series = {
        "varln_vs_n": (list(config.n_list), variances),
        "varln_theta0_vs_n": (list(config.n_list), var_at_true),
    }
    return McReport(config=config, records=[], summaries=summaries, series=series, failures=0)


_EXPERIMENTS = {
    "increasing_normality": run_increasing_normality,
    "fixed_microergodic": run_fixed_microergodic,
    "eigen_trends": run_eigen_trends,
    "varln_decay": run_varln_decay,
}


def run_experiment(config: ExperimentConfig) -> McReport:
    return _EXPERIMENTS[config.experiment](config)


# ---------------------------------------------------------------------------
# report serialization


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _check_writable(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise FileExistsError(f"refusing to overwrite {path}; pass force=True (--force) to allow")
    return path


def write_report(report: McReport, out_dir, force: bool = False) -> list[Path]:
    """Write records CSV, summary JSON and per-series plot-data CSVs.

    Floats are serialized in round-trip-exact decimal form; rerunning the
    same config (any worker count) reproduces the records CSV byte for
    byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    records_path = _check_writable(out / "records.csv", force)
    with open(records_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for record in report.records:
            writer.writerow([_csv_cell(record[k]) for k in RECORD_FIELDS])
    written.append(records_path)

    summary_path = _check_writable(out / "summary.json", force)
    payload = {
        "config": report.config.to_dict(),
        "summaries": report.summaries,
        "failures": report.failures,
        "n_records": len(report.records),
    }
    with open(summary_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(summary_path)

    for name, (xs, ys) in sorted(report.series.items()):
        series_path = _check_writable(out / f"series_{name}.csv", force)
        with open(series_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y"])
            for x, y in zip(xs, ys):
                writer.writerow([_csv_cell(x), _csv_cell(y)])
        written.append(series_path)
    return written

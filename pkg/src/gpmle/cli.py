"""Command-line front end: config parsing, dispatch, report writing.

Subcommands:

* ``simulate``   - emit design and sample CSVs for each configured n.
* ``fit``        - read a design CSV and an observation CSV, emit a fit JSON.
* ``experiment`` - run the harness experiment named in the config.
* ``eigens``     - shortcut for the eigenvalue-trend diagnostic.
* ``selftest``   - run the exact-identity checks and exit 0 when they hold.

Configs are strict JSON: unknown keys are errors, defaults are filled in
and echoed into every report for provenance.  ``--set key=value`` (dotted
keys allowed, values parsed as JSON when possible) overrides file values.
Every run writes a ``manifest.json`` with the echoed config, a git-style
blob hash of the config file, and timings.  Exit codes: 0 success, 1
validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .covariance import Family, KernelSpec, ParamBounds, ParamVector
from .gausslin import NotPositiveDefiniteError, build_cov, chol
from .harness import EXPERIMENT_NAMES, ExperimentConfig, run_experiment, write_report
from .mle import FitError, fit_full
from .simulate import (
    Design,
    FixedDesignMode,
    Regime,
    SeedSpec,
    gen_fixed,
    gen_increasing,
    sample_gp,
    read_points_csv,
    write_design_csv,
)

WORKERS_ENV_VAR = "GPMLE_WORKERS"


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class CliInvocation:
    subcommand: str
    config_path: str | None
    out_dir: str | None
    workers: int | None
    overrides: tuple[str, ...] = ()
    force: bool = False
    figures: bool = True
    design_path: str | None = None
    y_path: str | None = None


# ---------------------------------------------------------------------------
# config parsing

_KERNEL_KEYS = {"family", "nu"}
_THETA_KEYS = {"sigma2", "alpha"}
_BOUNDS_KEYS = {"alpha_inf", "alpha_sup", "sigma2_lo", "sigma2_hi"}
_TOP_KEYS = {
    "experiment",
    "regime",
    "kernel",
    "theta0",
    "n_list",
    "replicates",
    "master_seed",
    "bounds",
    "d",
    "delta",
    "perturb",
    "box",
    "design_mode",
    "alpha1",
    "multistart",
    "theta_probe",
    "workers",
}

_FAMILY_ALIASES = {
    "exponential": Family.EXPONENTIAL,
    "gaussian": Family.GAUSSIAN,
    "squared_exponential": Family.GAUSSIAN,
    "matern": Family.MATERN,
}


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; allowed: {sorted(allowed)}")


def _parse_kernel(raw) -> KernelSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"'kernel' must be an object with keys {sorted(_KERNEL_KEYS)}")
    _reject_unknown(raw, _KERNEL_KEYS, "'kernel'")
    family = str(raw.get("family", "")).lower()
    if family not in _FAMILY_ALIASES:
        raise ConfigError(f"'kernel.family' must be one of {sorted(_FAMILY_ALIASES)}, got {raw.get('family')!r}")
    fam = _FAMILY_ALIASES[family]
    nu = raw.get("nu")
    return KernelSpec(fam, float(nu) if fam is Family.MATERN and nu is not None else None)


def _parse_theta(raw, key: str) -> ParamVector:
    if not isinstance(raw, dict):
        raise ConfigError(f"'{key}' must be an object with keys {sorted(_THETA_KEYS)}")
    _reject_unknown(raw, _THETA_KEYS, f"'{key}'")
    try:
        return ParamVector(float(raw["sigma2"]), float(raw["alpha"]))
    except KeyError as err:
        raise ConfigError(f"'{key}' is missing required key {err.args[0]!r}") from err
    except ValueError as err:
        raise ConfigError(f"'{key}': {err}") from err


def _parse_bounds(raw) -> ParamBounds:
    if not isinstance(raw, dict):
        raise ConfigError(f"'bounds' must be an object with keys from {sorted(_BOUNDS_KEYS)}")
    _reject_unknown(raw, _BOUNDS_KEYS, "'bounds'")
    defaults = ParamBounds()
    try:
        return ParamBounds(
            alpha_inf=float(raw.get("alpha_inf", defaults.alpha_inf)),
            alpha_sup=float(raw.get("alpha_sup", defaults.alpha_sup)),
            sigma2_lo=float(raw.get("sigma2_lo", defaults.sigma2_lo)),
            sigma2_hi=float(raw.get("sigma2_hi", defaults.sigma2_hi)),
        )
    except ValueError as err:
        raise ConfigError(f"'bounds': {err}") from err


def _apply_override(data: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must have the form key=value")
    key, _, raw_value = assignment.partition("=")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r}: {part!r} is not a nested object")
    node[parts[-1]] = value


def parse_config(path, overrides=(), default_experiment: str | None = None) -> ExperimentConfig:
    """Load, override and strictly validate an experiment config file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")

    for assignment in overrides:
        _apply_override(data, assignment)
    _reject_unknown(data, _TOP_KEYS, "config")

    required = {"regime", "kernel", "theta0", "n_list", "replicates", "master_seed"}
    missing = sorted(required - set(data))
    if missing:
        raise ConfigError(f"config is missing required key(s) {missing}")

    experiment = data.get("experiment", default_experiment)
    if experiment is None:
        raise ConfigError(f"config must name an 'experiment'; one of {EXPERIMENT_NAMES}")

    try:
        regime = Regime(str(data["regime"]).lower())
    except ValueError as err:
        raise ConfigError(f"'regime' must be 'increasing' or 'fixed', got {data['regime']!r}") from err

    kernel = _parse_kernel(data["kernel"])
    theta0 = _parse_theta(data["theta0"], "theta0")
    bounds = _parse_bounds(data.get("bounds", {}))
    theta_probe = None if data.get("theta_probe") is None else _parse_theta(data["theta_probe"], "theta_probe")

    if not isinstance(data["n_list"], (list, tuple)):
        raise ConfigError(f"'n_list' must be a list of integers, got {data['n_list']!r}")
    box_raw = data.get("box", [[0.0, 1.0]] * int(data.get("d", 1)))
    try:
        box = tuple((float(lo), float(hi)) for lo, hi in box_raw)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"'box' must be a list of [lo, hi] pairs, got {box_raw!r}") from err

    try:
        return ExperimentConfig(
            experiment=str(experiment),
            regime=regime,
            kernel=kernel,
            theta0=theta0,
            n_list=tuple(int(n) for n in data["n_list"]),
            replicates=int(data["replicates"]),
            master_seed=int(data["master_seed"]),
            bounds=bounds,
            d=int(data.get("d", 1)),
            delta=float(data.get("delta", 1.0)),
            perturb=float(data.get("perturb", 0.2)),
            box=box,
            design_mode=FixedDesignMode(str(data.get("design_mode", "uniform")).lower()),
            alpha1=None if data.get("alpha1") is None else float(data["alpha1"]),
            multistart=int(data.get("multistart", 3)),
            theta_probe=theta_probe,
            workers=int(data.get("workers", 1)),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err


# ---------------------------------------------------------------------------
# manifest

def _git_blob_sha1(path) -> str | None:
    p = Path(path)
    if not p.is_file():
        return None
    content = p.read_bytes()
    return hashlib.sha1(b"blob %d\x00" % len(content) + content).hexdigest()


def _write_manifest(out_dir: Path, invocation: CliInvocation, config_echo: dict | None,
                    outputs: list, started: float, status: str) -> None:
    manifest = {
        "subcommand": invocation.subcommand,
        "config_path": invocation.config_path,
        "config_hash_git_blob_sha1": _git_blob_sha1(invocation.config_path) if invocation.config_path else None,
        "config_echo": config_echo,
        "overrides": list(invocation.overrides),
        "outputs": [str(p) for p in outputs],
        "status": status,
        "started_unix": started,
        "elapsed_seconds": time.time() - started,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands

def _effective_workers(invocation: CliInvocation, config_workers: int) -> int:
    if invocation.workers is not None:
        return invocation.workers
    env = os.environ.get(WORKERS_ENV_VAR)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV_VAR} must be an integer, got {env!r}")
    return config_workers


def _cmd_simulate(invocation: CliInvocation) -> tuple[list[Path], dict]:
    config = parse_config(invocation.config_path, invocation.overrides, default_experiment="eigen_trends")
    out = Path(invocation.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for idx, n in enumerate(config.n_list):
        design_seed = SeedSpec(config.master_seed, 2 * idx)
        sample_seed = SeedSpec(config.master_seed, 2 * idx + 1)
        if config.regime is Regime.INCREASING:
            design = gen_increasing(n, config.d, config.delta, config.perturb, design_seed)
        else:
            design = gen_fixed(n, config.d, config.box, config.design_mode, design_seed)
        factor = chol(build_cov(config.kernel, config.theta0, design))
        y = sample_gp(factor, sample_seed)

        design_path = out / f"design_n{n}.csv"
        sample_path = out / f"sample_n{n}.csv"
        for p in (design_path, sample_path):
            if p.exists() and not invocation.force:
                raise FileExistsError(f"refusing to overwrite {p}; pass --force to allow")
        write_design_csv(design, design_path)
        with open(sample_path, "w") as fh:
            fh.write("y\n")
            fh.writelines(repr(float(v)) + "\n" for v in y)
        written.extend([design_path, sample_path])
    return written, config.to_dict()


def _read_y_csv(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines and lines[0].lower() in ("y", '"y"'):
        lines = lines[1:]
    try:
        return np.array([float(v) for v in lines])
    except ValueError as err:
        raise ConfigError(f"observation CSV {path} must hold one float per line: {err}") from err


def _cmd_fit(invocation: CliInvocation) -> tuple[list[Path], dict]:
    if not invocation.design_path or not invocation.y_path:
        raise ConfigError("fit requires --design and --y CSV paths")
    config = parse_config(invocation.config_path, invocation.overrides, default_experiment="eigen_trends")
    points = read_points_csv(invocation.design_path)
    y = _read_y_csv(invocation.y_path)
    if len(y) != len(points):
        raise ConfigError(f"design has {len(points)} points but observations have {len(y)} values")

    if config.regime is Regime.INCREASING:
        # The CSV carries no separation tag; take delta from the data itself.
        dmin = float(pdist(points).min())
        if dmin <= 0:
            raise ConfigError("design CSV contains duplicate points")
        design = Design(points=points, regime=Regime.INCREASING, delta=dmin * (1 - 1e-9))
    else:
        design = Design(points=points, regime=Regime.FIXED, box=np.asarray(config.box, dtype=float))

    fit = fit_full(config.kernel, design, y, config.bounds, config.multistart)
    out = Path(invocation.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fit_path = out / "fit.json"
    if fit_path.exists() and not invocation.force:
        raise FileExistsError(f"refusing to overwrite {fit_path}; pass --force to allow")
    with open(fit_path, "w") as fh:
        json.dump(fit.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [fit_path], config.to_dict()


def _cmd_experiment(invocation: CliInvocation, default_experiment: str | None = None) -> tuple[list[Path], dict]:
    config = parse_config(invocation.config_path, invocation.overrides, default_experiment=default_experiment)
    workers = _effective_workers(invocation, config.workers)
    if workers != config.workers:
        config = dataclasses.replace(config, workers=workers)
    report = run_experiment(config)
    written = write_report(report, invocation.out_dir, force=invocation.force)
    if invocation.figures:
        from .figures import render_figures

        written.extend(render_figures(report, invocation.out_dir, force=invocation.force))
    return [Path(p) for p in written], config.to_dict()


def _cmd_selftest() -> int:
    """Exact-identity checks over the stack; prints one line per check."""
    from .covariance import kernel_value
    from .mle import expected_score, fisher_matrix, grad_ln, score_cov, var_ln, profile_sigma2
    from .specfun import bessel_k

    checks: list[tuple[str, bool]] = []
    grid = np.geomspace(0.05, 50.0, 30)
    half = np.sqrt(np.pi / (2.0 * grid)) * np.exp(-grid)
    checks.append(("bessel K_1/2 closed form", bool(np.allclose(bessel_k(0.5, grid), half, rtol=1e-10))))
    checks.append(
        ("bessel K_3/2 closed form", bool(np.allclose(bessel_k(1.5, grid), half * (1 + 1 / grid), rtol=1e-10)))
    )

    exp_spec = KernelSpec(Family.EXPONENTIAL)
    mat_spec = KernelSpec(Family.MATERN, 0.5)
    theta = ParamVector(1.3, 0.8)
    r = np.linspace(0.0, 6.0, 25)
    checks.append(
        ("matern nu=1/2 equals exponential",
         bool(np.allclose(kernel_value(mat_spec, theta, r), kernel_value(exp_spec, theta, r), rtol=1e-12)))
    )

    design = gen_increasing(40, 1, 1.0, 0.2, SeedSpec(2024, 0))
    theta0 = ParamVector(1.0, 0.5)
    score = expected_score(exp_spec, theta0, design)
    checks.append(("expected score is zero", bool(np.max(np.abs(score)) <= 1e-9)))

    info = fisher_matrix(exp_spec, theta0, design)
    sc = score_cov(exp_spec, theta0, design)
    dev = float(np.max(np.abs(sc - (4.0 / design.n) * info.sigma)))
    checks.append(("score covariance = (4/n) Fisher", dev <= 1e-12))

    v0 = var_ln(exp_spec, theta0, theta0, design)
    checks.append(("var L_n at truth = 2/n", abs(v0 - 2.0 / design.n) <= 1e-12))

    y = sample_gp(chol(build_cov(exp_spec, theta0, design)), SeedSpec(2024, 1))
    s2 = profile_sigma2(exp_spec, 0.7, design, y)
    g = grad_ln(exp_spec, ParamVector(s2, 0.7), design, y)
    checks.append(("profile zeroes the variance score", abs(g[0]) <= 1e-10))

    ok = True
    for name, passed in checks:
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
        ok = ok and passed
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# argument parsing and dispatch

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="gpmle",
        description="Gaussian-process covariance MLE and asymptotics experiments.",
        epilog=f"The {WORKERS_ENV_VAR} environment variable supplies a default worker count.",
    )
    sub = parser.add_subparsers(dest="subcommand")

    def add_common(p, needs_out=True):
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory (created if absent)")
        p.add_argument("--workers", type=int, default=None, help="worker process count")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted keys allowed; repeatable)")
        p.add_argument("--force", action="store_true", help="overwrite existing report files")

    p_sim = sub.add_parser("simulate", help="emit design + sample CSVs for each configured n")
    add_common(p_sim)

    p_fit = sub.add_parser("fit", help="fit a design/observation pair, emit FitResult JSON")
    add_common(p_fit)
    p_fit.add_argument("--design", required=True, help="design CSV (header x1[,x2[,x3]])")
    p_fit.add_argument("--y", required=True, help="observation CSV (one float per line)")

    p_exp = sub.add_parser("experiment", help="run the harness experiment named in the config")
    add_common(p_exp)
    p_exp.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p_eig = sub.add_parser("eigens", help="run the eigenvalue-trend diagnostic")
    add_common(p_eig)
    p_eig.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    sub.add_parser("selftest", help="run the exact-identity checks")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return 1
    if args.subcommand == "selftest":
        return _cmd_selftest()

    invocation = CliInvocation(
        subcommand=args.subcommand,
        config_path=args.config,
        out_dir=getattr(args, "out", None),
        workers=args.workers,
        overrides=tuple(args.overrides),
        force=args.force,
        figures=not getattr(args, "no_figures", False),
        design_path=getattr(args, "design", None),
        y_path=getattr(args, "y", None),
    )

    started = time.time()
    out_dir = Path(invocation.out_dir)
    config_echo = None
    outputs: list = []
    try:
        if invocation.subcommand == "simulate":
            outputs, config_echo = _cmd_simulate(invocation)
        elif invocation.subcommand == "fit":
            outputs, config_echo = _cmd_fit(invocation)
        elif invocation.subcommand == "experiment":
            outputs, config_echo = _cmd_experiment(invocation)
        elif invocation.subcommand == "eigens":
            outputs, config_echo = _cmd_experiment(invocation, default_experiment="eigen_trends")
        else:
            print(f"error: unknown subcommand {invocation.subcommand!r}", file=sys.stderr)
            return 1
    except (ConfigError, FileExistsError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        _write_manifest(out_dir, invocation, config_echo, outputs, started, f"validation_error: {err}")
        return 1
    except (FitError, NotPositiveDefiniteError, ValueError) as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        _write_manifest(out_dir, invocation, config_echo, outputs, started, f"runtime_failure: {err}")
        return 2

    _write_manifest(out_dir, invocation, config_echo, outputs, started, "ok")
    for path in outputs:
        print(path)
    return 0


def console_main() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    console_main()

"""Command-line entry points, configuration, and plot-ready text output.

Commands::

    qtraj run      one ensemble -> trajectories CSV + histogram document + manifest
    qtraj compare  both guidance laws on the same seed -> side-by-side statistics
    qtraj verify   analytic self-checks (residuals, normalizations), exit 0/1

Configuration is a ``key = value`` text file (``#`` comments) whose keys
are listed in ``CONFIG_DEFAULTS``; command-line flags override file
values.  The run manifest echoes the configuration in the same format
(metadata lines are comments), so a manifest is itself a valid config that
reproduces the run.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from . import __version__
from .dynamics import IntegrationSchedule, default_schedule
from .ensemble import (
    EnsembleConfig,
    EnsembleResult,
    Histogram,
    HistogramSpec,
    KSResult,
    TimeSlice,
    build_histogram,
    central_dip_metric,
    default_histogram_specs,
    ks_test,
    momentum_cdf,
    position_cdf,
    run_ensemble,
    side_band_peak,
    slice_values,
)
from .sampling import THEORIES, InitialCondition, SeededStream, sample_momenta, sample_positions
from .units import electron_units
from .wavefield import (
    DoubleSlitParams,
    continuity_residual,
    continuity_truncation_bound,
    envelope_density,
    momentum_density,
    rho,
    schrodinger_residual,
    sigma_t,
    spread,
)

#: Documented config keys with their default values (as config-file text).
CONFIG_DEFAULTS = {
    "x_half_nm": "50",
    "sigma_nm": "10",
    "mass_me": "1",
    "n_traj": "40000",
    "theory": "revised",
    "seed": "1",
    "t0_ps": "0",
    "t_final_ps": "5",
    "dt_ps": "0.005",
    "slices_ps": "0, 3.5, 5",
    "bins": "200",
    "out_dir": "qtraj_out",
}

#: Recording interval target; the stride is dt-dependent so slice times on
#: multiples of this land exactly on recorded samples.
_RECORD_INTERVAL_PS = 0.125

#: Finite-difference steps and node-exclusion bands for the verify checks.
_VERIFY_H_X_FRACTION = 1e-3  # h_x = sigma / 1000
_VERIFY_H_T_PS = 2.5e-4
_SCHRODINGER_BAND = 1e-2  # require rho >= band * envelope
_CONTINUITY_BAND = 1e-3
_SCHRODINGER_TOL = 1e-4
_CONTINUITY_MARGIN = 10.0


class ConfigError(Exception):
    """Invalid, unknown, or inconsistent configuration key."""

    def __init__(self, key: str, reason: str):
        self.key = key
        self.reason = reason
        super().__init__(f"config key '{key}': {reason}")


@dataclass(frozen=True)
class RunSetup:
    """Fully validated run inputs: physics, ensemble config, output directory."""

    params: DoubleSlitParams
    config: EnsembleConfig
    out_dir: Path
    raw: dict[str, str]


def _read_config_file(path: Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError("config", f"{path}:{line_no}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(key, f"unknown key ({path}:{line_no})")
        entries[key] = value.strip()
    return entries


def _parse_float(raw: dict[str, str], key: str) -> float:
    try:
        value = float(raw[key])
    except ValueError as exc:
        raise ConfigError(key, f"not a number: {raw[key]!r}") from exc
    if not np.isfinite(value):
        raise ConfigError(key, f"must be finite, got {raw[key]!r}")
    return value


def _parse_int(raw: dict[str, str], key: str) -> int:
    try:
        return int(raw[key])
    except ValueError as exc:
        raise ConfigError(key, f"not an integer: {raw[key]!r}") from exc


def parse_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunSetup:
    """Merge defaults, optional config file, and flag overrides; validate all keys."""
    raw = dict(CONFIG_DEFAULTS)
    if path is not None:
        raw.update(_read_config_file(Path(path)))
    for key, value in (overrides or {}).items():
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(key, "unknown key")
        if value is not None:
            raw[key] = str(value)

    x_half = _parse_float(raw, "x_half_nm")
    if x_half < 0:
        raise ConfigError("x_half_nm", f"must be >= 0, got {x_half!r}")
    sigma = _parse_float(raw, "sigma_nm")
    if sigma <= 0:
        raise ConfigError("sigma_nm", f"must be > 0, got {sigma!r}")
    mass = _parse_float(raw, "mass_me")
    if mass <= 0:
        raise ConfigError("mass_me", f"must be > 0, got {mass!r}")
    params = DoubleSlitParams(x_half=x_half, sigma=sigma, units=electron_units(mass))

    n_traj = _parse_int(raw, "n_traj")
    if n_traj < 1:
        raise ConfigError("n_traj", f"must be >= 1, got {n_traj!r}")
    theory = raw["theory"]
    if theory not in THEORIES:
        raise ConfigError("theory", f"must be one of {THEORIES}, got {theory!r}")
    seed = _parse_int(raw, "seed")
    if seed < 0:
        raise ConfigError("seed", f"must be >= 0, got {seed!r}")
    bins = _parse_int(raw, "bins")
    if bins < 1:
        raise ConfigError("bins", f"must be >= 1, got {bins!r}")

    t0 = _parse_float(raw, "t0_ps")
    t_final = _parse_float(raw, "t_final_ps")
    if not t_final > t0:
        raise ConfigError("t_final_ps", f"must exceed t0_ps={t0!r}, got {t_final!r}")
    dt = _parse_float(raw, "dt_ps")
    if not 0 < dt <= t_final - t0:
        raise ConfigError("dt_ps", f"must lie in (0, t_final - t0], got {dt!r}")
    try:
        slice_times = tuple(float(part) for part in raw["slices_ps"].split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError("slices_ps", f"not a comma-separated list of numbers: {raw['slices_ps']!r}") from exc
    if not slice_times:
        raise ConfigError("slices_ps", "needs at least one slice time")

    stride = max(1, round(_RECORD_INTERVAL_PS / dt))
    schedule = default_schedule(params, t0=t0, t_final=t_final, dt_base=dt, record_stride=stride)
    pos_spec, mom_spec = default_histogram_specs(params, t_final, bins)
    try:
        config = EnsembleConfig(
            n_traj=n_traj,
            theory=theory,
            master_seed=seed,
            schedule=schedule,
            slice_times=slice_times,
            position_hist=pos_spec,
            momentum_hist=mom_spec,
        )
    except ValueError as exc:
        raise ConfigError("slices_ps", str(exc)) from exc
    return RunSetup(params=params, config=config, out_dir=Path(raw["out_dir"]), raw=raw)


def write_trajectories(result: EnsembleResult, path: str | Path) -> Path:
    """Delimited text of every recorded sample with 17-significant-digit values."""
    path = Path(path)
    try:
        with path.open("w", encoding="ascii", newline="\n") as handle:
            for row in result.rows():
                handle.write(row)
                handle.write("\n")
    except OSError as exc:
        raise OSError(f"writing trajectories to {path}: {exc}") from exc
    return path


@dataclass(frozen=True)
class SliceReport:
    """One slice/observable block of the histogram document."""

    time: float
    observable: str
    theory: str
    slice: TimeSlice
    histogram: Histogram
    oracle_density: np.ndarray
    ks: KSResult
    central_dip: float | None
    side_peak: float | None


def build_slice_report(result: EnsembleResult, t: float, observable: str) -> SliceReport:
    params = result.params
    config = result.config
    values = slice_values(result, t, observable)
    if observable == "position":
        spec = config.position_hist
        oracle_cdf = position_cdf(params, t)
        hist = build_histogram(values.values, spec)
        oracle = np.asarray(rho(hist.centers, t, params), dtype=float)
        dip = peak = None
    else:
        spec = config.momentum_hist
        oracle_cdf = momentum_cdf(params)
        hist = build_histogram(values.values, spec)
        oracle = np.asarray(momentum_density(hist.centers, params), dtype=float)
        try:
            dip = central_dip_metric(hist, params)
            peak = side_band_peak(hist, params)
        except ValueError:  # bins too coarse to resolve the dip bands
            dip = peak = float("nan")
    ks = ks_test(values.values, oracle_cdf, alpha=0.01)
    return SliceReport(
        time=t,
        observable=observable,
        theory=config.theory,
        slice=values,
        histogram=hist,
        oracle_density=oracle,
        ks=ks,
        central_dip=dip,
        side_peak=peak,
    )


def _report_lines(report: SliceReport) -> list[str]:
    lines = [
        f"[slice] time_ps = {report.time:.10g} | observable = {report.observable} | theory = {report.theory}",
        f"n_contributing = {report.slice.n_contributing}",
        f"n_excluded = {report.slice.n_excluded}",
        f"n_below_range = {report.histogram.n_below}",
        f"n_above_range = {report.histogram.n_above}",
        f"ks_statistic = {report.ks.statistic:.10g}",
        f"ks_critical = {report.ks.critical_at_alpha:.10g}",
        f"ks_alpha = {report.ks.alpha:.10g}",
        f"ks_passed = {str(report.ks.passed).lower()}",
    ]
    if report.central_dip is not None:
        lines.append(f"central_dip_ratio = {report.central_dip:.10g}")
        lines.append(f"side_band_peak = {report.side_peak:.10g}")
    lines.append("columns = bin_lo bin_hi count density oracle_density")
    edges = report.histogram.edges
    for i in range(report.histogram.counts.size):
        lines.append(
            f"{edges[i]:.10g} {edges[i + 1]:.10g} {report.histogram.counts[i]:d} "
            f"{report.histogram.density[i]:.10g} {report.oracle_density[i]:.10g}"
        )
    lines.append("")
    return lines


def write_histograms(reports: list[SliceReport], path: str | Path) -> Path:
    """Histogram document: per slice, edges/counts/density plus oracle and stats."""
    path = Path(path)
    lines: list[str] = []
    for report in reports:
        lines.extend(_report_lines(report))
    try:
        path.write_text("\n".join(lines), encoding="ascii")
    except OSError as exc:
        raise OSError(f"writing histograms to {path}: {exc}") from exc
    return path


def _sha256_of(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to reproduce a run and recognize its outputs."""

    config_echo: dict[str, str]
    started_utc: str
    finished_utc: str
    status_counts: dict[str, int]
    files: list[tuple[str, str]]  # (name, sha256)
    version: str = __version__


def write_manifest(manifest: RunManifest, path: str | Path) -> Path:
    """Manifest in config syntax: metadata as comments, so it re-parses as config."""
    path = Path(path)
    lines = [
        "# run manifest; reusable as a config file: qtraj run --config <this file>",
        f"# version = {manifest.version}",
        f"# started_utc = {manifest.started_utc}",
        f"# finished_utc = {manifest.finished_utc}",
    ]
    for status, count in sorted(manifest.status_counts.items()):
        lines.append(f"# status {status} = {count}")
    for name, digest in manifest.files:
        lines.append(f"# file {name} sha256 = {digest}")
    for key in CONFIG_DEFAULTS:
        lines.append(f"{key} = {manifest.config_echo[key]}")
    lines.append("")
    try:
        path.write_text("\n".join(lines), encoding="ascii")
    except OSError as exc:
        raise OSError(f"writing manifest to {path}: {exc}") from exc
    return path


def _utc_stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _run_one(
    setup: RunSetup, theory: str, workers: int | None, suffix: str = ""
) -> tuple[EnsembleResult, list[Path], list[SliceReport]]:
    """Execute one ensemble and write its three output files."""
    config = setup.config
    if theory != config.theory:
        config = EnsembleConfig(
            n_traj=config.n_traj,
            theory=theory,
            master_seed=config.master_seed,
            schedule=config.schedule,
            slice_times=config.slice_times,
            position_hist=config.position_hist,
            momentum_hist=config.momentum_hist,
        )
    started = _utc_stamp()
    result = run_ensemble(config, setup.params, workers=workers)
    setup.out_dir.mkdir(parents=True, exist_ok=True)
    traj_path = write_trajectories(result, setup.out_dir / f"trajectories{suffix}.csv")
    reports = [
        build_slice_report(result, t, obs)
        for t in config.slice_times
        for obs in ("position", "momentum")
    ]
    hist_path = write_histograms(reports, setup.out_dir / f"histograms{suffix}.txt")
    echo = dict(setup.raw)
    echo["theory"] = theory
    manifest = RunManifest(
        config_echo=echo,
        started_utc=started,
        finished_utc=_utc_stamp(),
        status_counts=result.status_counts,
        files=[(p.name, _sha256_of(p)) for p in (traj_path, hist_path)],
    )
    manifest_path = write_manifest(manifest, setup.out_dir / f"manifest{suffix}.txt")
    return result, [traj_path, hist_path, manifest_path], reports


def _print_status(result: EnsembleResult) -> None:
    counts = result.status_counts
    total = len(result.trajectories)
    summary = ", ".join(f"{status}={count}" for status, count in sorted(counts.items()))
    print(f"theory={result.config.theory} n_traj={total}: {summary}")


def cmd_run(setup: RunSetup, workers: int | None) -> int:
    result, paths, _ = _run_one(setup, setup.config.theory, workers)
    _print_status(result)
    for path in paths:
        print(f"wrote {path}")
    return 0


def cmd_compare(setup: RunSetup, workers: int | None) -> int:
    """Both theories on one seed (identical initial positions), side by side."""
    reports: dict[str, dict[tuple[float, str], SliceReport]] = {}
    for theory in THEORIES:
        result, paths, theory_reports = _run_one(setup, theory, workers, suffix=f"-{theory}")
        reports[theory] = {(rep.time, rep.observable): rep for rep in theory_reports}
        _print_status(result)
        for path in paths:
            print(f"wrote {path}")

    lines = [
        "time_ps observable dbb_ks dbb_passed revised_ks revised_passed",
    ]
    for t in setup.config.slice_times:
        for obs in ("position", "momentum"):
            dbb = reports["dbb"][(t, obs)]
            rev = reports["revised"][(t, obs)]
            lines.append(
                f"{t:.10g} {obs} {dbb.ks.statistic:.10g} {str(dbb.ks.passed).lower()} "
                f"{rev.ks.statistic:.10g} {str(rev.ks.passed).lower()}"
            )
    lines.append("")
    lines.append("time_ps dbb_central_dip revised_central_dip dbb_side_peak revised_side_peak")
    for t in setup.config.slice_times:
        dbb = reports["dbb"][(t, "momentum")]
        rev = reports["revised"][(t, "momentum")]
        lines.append(
            f"{t:.10g} {dbb.central_dip:.10g} {rev.central_dip:.10g} "
            f"{dbb.side_peak:.10g} {rev.side_peak:.10g}"
        )
    table = "\n".join(lines)
    print(table)
    compare_path = setup.out_dir / "compare.txt"
    compare_path.write_text(table + "\n", encoding="ascii")
    print(f"wrote {compare_path}")
    return 0


def _interior_points(
    params: DoubleSlitParams,
    n: int,
    t_final: float,
    band: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Random (x, t) with rho above ``band`` times the fringe-free envelope."""
    xs = np.empty(0)
    ts = np.empty(0)
    while xs.size < n:
        t = rng.uniform(0.0, t_final, size=2 * n)
        hw = params.x_half + 3.0 * np.asarray(sigma_t(params, t))
        x = rng.uniform(-1.0, 1.0, size=2 * n) * hw
        keep = np.asarray(rho(x, t, params)) >= band * np.asarray(envelope_density(x, t, params))
        xs = np.concatenate([xs, x[keep]])
        ts = np.concatenate([ts, t[keep]])
    return xs[:n], ts[:n]


def verify_checks(params: DoubleSlitParams, t_final: float = 5.0, seed: int = 1) -> list[tuple[str, bool, str]]:
    """Analytic self-checks behind `qtraj verify`; returns (name, passed, detail)."""
    checks: list[tuple[str, bool, str]] = []
    rng = np.random.default_rng(seed)

    worst = 0.0
    for t in (0.0, 1.0, 3.5, t_final):
        hw = params.x_half + 12.0 * params.sigma + 4.0 * float(spread(params, t))
        total, _ = quad(lambda x: float(rho(x, t, params)), -hw, hw, limit=300)
        worst = max(worst, abs(total - 1.0))
    checks.append(("position_norm", worst < 1e-6, f"max |integral - 1| = {worst:.3e} over t in {{0, 1, 3.5, {t_final:g}}}"))

    p_hw = 10.0 * params.sigma_p
    total, _ = quad(lambda p: float(momentum_density(p, params)), -p_hw, p_hw, limit=300)
    err = abs(total - 1.0)
    checks.append(("momentum_norm", err < 1e-6, f"|integral - 1| = {err:.3e}"))

    h_x = _VERIFY_H_X_FRACTION * params.sigma
    x, t = _interior_points(params, 10_000, t_final, _SCHRODINGER_BAND, rng)
    residual = np.abs(schrodinger_residual(x, t, params, h_x, _VERIFY_H_T_PS))
    peak = float(residual.max())
    checks.append(
        ("schrodinger_residual", peak < _SCHRODINGER_TOL, f"max normalized residual = {peak:.3e} at 10^4 points")
    )

    x, t = _interior_points(params, 10_000, t_final, _CONTINUITY_BAND, rng)
    bound = _CONTINUITY_MARGIN * np.asarray(continuity_truncation_bound(x, t, params, h_x, _VERIFY_H_T_PS))
    resid = np.abs(continuity_residual(x, t, params, h_x, _VERIFY_H_T_PS, theory="dbb"))
    ratio = float((resid / bound).max())
    checks.append(("continuity_dbb", ratio < 1.0, f"max residual/(10 x budget) = {ratio:.3e}"))

    x, t = _interior_points(params, 500, t_final, _CONTINUITY_BAND, rng)
    bound = _CONTINUITY_MARGIN * np.asarray(continuity_truncation_bound(x, t, params, h_x, _VERIFY_H_T_PS))
    x0s = sample_positions(20, SeededStream(seed, 0), params, 0.0)
    p0s = sample_momenta(20, SeededStream(seed, 1), params)
    worst_ratio = 0.0
    for x0, p0 in zip(x0s, p0s):
        ic = InitialCondition(x0=float(x0), p0=float(p0), t0=0.0, theory="revised")
        resid = np.abs(continuity_residual(x, t, params, h_x, _VERIFY_H_T_PS, theory="revised", ic=ic))
        worst_ratio = max(worst_ratio, float((resid / bound).max()))
    checks.append(("continuity_revised", worst_ratio < 1.0, f"max residual/(10 x budget) = {worst_ratio:.3e} over 20 ic"))

    return checks


def cmd_verify(setup: RunSetup) -> int:
    checks = verify_checks(setup.params, t_final=setup.config.schedule.t_final, seed=setup.config.master_seed)
    failed = 0
    for name, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        failed += 0 if passed else 1
    return 0 if failed == 0 else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qtraj",
        description="Quantum trajectory ensembles for the analytic double slit under two guidance laws.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "run one ensemble and write trajectories, histograms, and a manifest"),
        ("compare", "run both guidance laws on the same seed and emit side-by-side statistics"),
        ("verify", "run analytic self-checks; exit nonzero on failure"),
    ):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", metavar="FILE", default=None, help="config file (key = value lines)")
        cmd.add_argument("--theory", choices=THEORIES, default=None, help="guidance law override")
        cmd.add_argument("--seed", type=int, default=None, metavar="N", help="master seed override")
        cmd.add_argument("--n", type=int, default=None, metavar="N", help="trajectory count override")
        cmd.add_argument("--out", default=None, metavar="DIR", help="output directory override")
        cmd.add_argument("--workers", type=int, default=None, metavar="N", help="integration worker threads")
    args = parser.parse_args(argv)

    overrides = {
        "theory": args.theory,
        "seed": args.seed,
        "n_traj": args.n,
        "out_dir": args.out,
    }
    try:
        setup = parse_config(args.config, overrides)
        if args.command == "run":
            return cmd_run(setup, args.workers)
        if args.command == "compare":
            return cmd_compare(setup, args.workers)
        return cmd_verify(setup)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

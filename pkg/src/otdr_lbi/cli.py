"""Command-line front end: ``otdr-lbi analyze | simulate | benchmark``."""

from __future__ import annotations

import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import formats
from .dictionary import DEFAULT_SIGMA
from .evaluation import DerivativeDetector, LBIDetector, run_benchmark
from .lbi_core import DEFAULT_EPSILON_MIN, SolverConfig, event_list_from_beta, fitted_profile, lbotdr
from .model_selection import DEFAULT_GRID_SIZE, LambdaSchedule, select_model
from .simulator import (
    DESK_LENGTHS,
    FiberSpec,
    NoiseSpec,
    SimulatedProfile,
    random_fiber,
    random_testbench,
    reference_fiber,
    simulate_profile,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNREADABLE = 3
EXIT_SCHEMA = 4
EXIT_NON_FINITE = 5
EXIT_CONFIG = 6
EXIT_RUNTIME = 7

log = logging.getLogger("otdr_lbi")


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _int_list(ctx, param, value):
    if value is None:
        return None
    try:
        out = tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise click.BadParameter("expected comma-separated integers") from None
    if not out:
        raise click.BadParameter("at least one value is required")
    return out


def _event_list(ctx, param, value):
    if not value:
        return None
    events = []
    for item in value.split(","):
        pos, sep, loss = item.partition(":")
        try:
            events.append((int(pos), float(loss)))
        except ValueError:
            raise click.BadParameter(f"expected POSITION:LOSS, got {item!r}") from None
        if not sep:
            raise click.BadParameter(f"expected POSITION:LOSS, got {item!r}")
    return tuple(events)


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
@click.version_option(package_name="otdr-lbi")
def main(verbose: int):
    """Trend-break (fault) detection in OTDR profiles."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# analyze


@main.command()
@click.argument("profile", type=click.Path(dir_okay=False, path_type=Path))
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path),
              help="Event list JSON (default: PROFILE with .events.json).")
@click.option("--reconstruction", type=click.Path(dir_okay=False, path_type=Path),
              help="Fitted clean profile (default: PROFILE with .fit.txt).")
@click.option("--epsilon-min", type=float, default=DEFAULT_EPSILON_MIN, show_default=True,
              help="Minimum detectable loss in dB; drives stopping and pruning.")
@click.option("--sigma", type=float, default=DEFAULT_SIGMA, show_default=True,
              help="Slope-column scale, a power of two.")
@click.option("--lambda-grid/--no-lambda-grid", default=True, show_default=True,
              help="Search lambda with BIC, or stop after the lambda=0.5 run.")
@click.option("--grid-size", type=int, default=DEFAULT_GRID_SIZE, show_default=True)
@click.option("--n-max", type=int, default=None, help="Iteration budget in row updates (default 1000 sweeps).")
@click.option("--peak-threshold", type=float, default=None, help="Peak threshold in dB (default: epsilon-min).")
def analyze(profile, output, reconstruction, epsilon_min, sigma, lambda_grid, grid_size, n_max, peak_threshold):
    """Detect events in PROFILE and write an event list plus the fitted profile."""
    try:
        data = formats.read_profile(profile)
    except OSError as exc:
        _fail(EXIT_UNREADABLE, f"cannot read {profile}: {exc}")
    except formats.NonFiniteProfileError as exc:
        _fail(EXIT_NON_FINITE, str(exc))
    except (formats.FormatError, UnicodeDecodeError) as exc:
        _fail(EXIT_SCHEMA, str(exc))

    try:
        config = SolverConfig(sigma=sigma, epsilon_min=epsilon_min, n_max=n_max, t_p=peak_threshold)
        config.budget(data.n_samples)
        if grid_size < 1:
            raise ValueError("grid size must be >= 1")
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))

    try:
        start = time.perf_counter()
        if lambda_grid:
            sel = select_model(data.samples, config, LambdaSchedule.for_profile(data.samples, sigma, grid_size))
            beta_hat, lam, n_c = sel.beta_best, sel.lambda_best, sel.n_c
            converged = sel.first.converged
            trace = [asdict(c) for c in sel.bic_trace]
            total = sel.total_iterations
        else:
            res = lbotdr(data.samples, config)
            beta_hat, lam, n_c, converged, trace, total = res.beta_hat, res.lam, res.iterations, res.converged, [], res.iterations
        elapsed = time.perf_counter() - start
    except Exception as exc:  # noqa: BLE001
        _fail(EXIT_RUNTIME, f"analysis failed: {exc}")

    events = event_list_from_beta(beta_hat, sigma, data.sample_spacing_m)
    solver = {
        "name": "lbi" if lambda_grid else "lbi-first",
        "lambda_best": lam,
        "n_c": n_c,
        "iterations_total": total,
        "converged": converged,
        "elapsed_seconds": elapsed,
        "epsilon_min": epsilon_min,
        "sigma": sigma,
        "bic_trace": trace,
    }
    output = output or profile.with_suffix(".events.json")
    reconstruction = reconstruction or profile.with_suffix(".fit.txt")
    try:
        formats.write_eventlist(output, events, solver, data.n_samples)
        formats.write_profile(
            reconstruction, formats.ProfileFile(fitted_profile(beta_hat, sigma), data.sample_spacing_m)
        )
    except OSError as exc:
        _fail(EXIT_UNREADABLE, f"cannot write output: {exc}")
    if not converged:
        click.echo("warning: iteration budget exhausted before the stopping criterion was met", err=True)
    click.echo(f"{len(events)} event(s), lambda={lam:g}, N_c={n_c}, {elapsed:.2f} s -> {output}")


# ---------------------------------------------------------------------------
# simulate / benchmark shared options


def _testbench_options(f):
    opts = [
        click.option("--lengths", callback=_int_list, default=",".join(map(str, DESK_LENGTHS)), show_default=True,
                     help="Comma-separated profile lengths in samples."),
        click.option("--profiles", type=int, default=50, show_default=True, help="Profiles per length."),
        click.option("--faults", type=int, default=5, show_default=True, help="Faults per profile."),
        click.option("--mag-range", type=(float, float), default=(0.5, 5.0), show_default=True,
                     help="Uniform fault magnitude range in dB."),
        click.option("--min-separation", type=int, default=2, show_default=True),
        click.option("--attenuation", type=float, default=0.2, show_default=True, help="dB/km."),
        click.option("--spacing", type=float, default=1.0, show_default=True, help="Meters per sample."),
        click.option("--seed", type=int, default=0, show_default=True, envvar="OTDR_LBI_SEED"),
        click.option("--c0", type=float, default=1e5, show_default=True, help="Photon counts at the fiber start."),
        click.option("--delta-nu-hz", type=float, default=1e5, show_default=True, help="Source linewidth."),
        click.option("--delta-z-m", type=float, default=None, help="CRN length scale (default: fiber length)."),
        click.option("--crn-domain", type=click.Choice(["linear", "db"]), default="linear", show_default=True),
        click.option("--noiseless", is_flag=True, help="Skip counting noise and CRN."),
        click.option("--sigma", type=float, default=DEFAULT_SIGMA, show_default=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _noise(c0, delta_nu_hz, delta_z_m, crn_domain, noiseless) -> NoiseSpec:
    return NoiseSpec(
        c0=c0, delta_nu_hz=delta_nu_hz, delta_z_m=delta_z_m, crn_domain=crn_domain,
        counting=not noiseless, crn=not noiseless,
    )


def _explicit_profiles(spec: FiberSpec, profiles: int, seed: int, noise: NoiseSpec, sigma: float):
    for rep in range(profiles):
        rng = np.random.default_rng(np.random.SeedSequence([seed, spec.n_samples, rep]))
        prof = simulate_profile(spec, noise, rng, sigma)
        prof.replicate = rep
        yield prof


@main.command()
@_testbench_options
@click.option("--events", callback=_event_list, default=None,
              help="Fixed events POSITION:LOSS,... instead of random faults (one length only).")
@click.option("--reference", is_flag=True, help="Use the built-in eight-event fiber at each length.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def simulate(lengths, profiles, faults, mag_range, min_separation, attenuation, spacing, seed, c0, delta_nu_hz,
             delta_z_m, crn_domain, noiseless, sigma, events, reference, out_dir):
    """Write simulated profiles and their ground truth to OUT."""
    try:
        noise = _noise(c0, delta_nu_hz, delta_z_m, crn_domain, noiseless)
        SolverConfig(sigma=sigma)
        stream = _profile_stream(lengths, profiles, faults, mag_range, min_separation, attenuation, spacing,
                                 seed, noise, sigma, events, reference)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = 0
        for prof in stream:
            _write_simulated(out_dir, prof, seed, noise)
            written += 1
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        _fail(EXIT_UNREADABLE, f"cannot write to {out_dir}: {exc}")
    click.echo(f"wrote {written} profile(s) to {out_dir}")


def _profile_stream(lengths, profiles, faults, mag_range, min_separation, attenuation, spacing, seed, noise,
                    sigma, events=None, reference=False):
    if profiles < 0 or faults < 0:
        raise ValueError("--profiles and --faults must be non-negative")
    if events is not None or reference:
        def streams():
            for length in lengths:
                if reference:
                    spec = reference_fiber(length)
                    spec = FiberSpec(length, spacing, attenuation, spec.events)
                else:
                    spec = FiberSpec(length, spacing, attenuation, events)
                yield from _explicit_profiles(spec, profiles, seed, noise, sigma)
        return streams()
    # validate eagerly so bad ranges fail before any file is written
    random_fiber(min(lengths), faults, tuple(mag_range), np.random.default_rng(0), spacing, attenuation,
                 min_separation)
    return random_testbench(lengths, profiles, faults, tuple(mag_range), seed, noise, spacing, attenuation,
                            min_separation, sigma)


def _write_simulated(out_dir: Path, prof: SimulatedProfile, seed: int, noise: NoiseSpec) -> Path:
    stem = f"fiber_{prof.length}_{prof.replicate:04d}"
    truth_name = f"{stem}.truth.json"
    formats.write_truth(
        out_dir / truth_name, prof.spec, prof.sigma,
        seed=seed, replicate=prof.replicate, noise=asdict(noise),
        counts_clamped=prof.counts_clamped, crn_floored=prof.crn_floored,
    )
    path = out_dir / f"{stem}.txt"
    formats.write_profile(path, formats.ProfileFile(prof.y, prof.spec.sample_spacing_m, ground_truth=truth_name))
    return path


def _load_dir(directory: Path):
    paths = sorted(directory.glob("*.txt"))
    loaded = []
    for k, path in enumerate(paths):
        data = formats.read_profile(path)
        if not data.ground_truth:
            continue
        spec, sigma, raw = formats.read_truth(path.parent / data.ground_truth)
        if spec.n_samples != data.n_samples:
            raise formats.FormatError(f"{path}: ground truth length does not match")
        prof = SimulatedProfile(spec, data.samples, np.zeros(0), spec.beta(sigma), sigma)
        prof.replicate = int(raw.get("replicate", k))
        loaded.append(prof)
    if not loaded:
        raise formats.FormatError(f"{directory}: no profiles with ground truth found")
    return loaded


DETECTOR_NAMES = ("lbi", "lbi-first", "derivative")


@main.command()
@_testbench_options
@click.option("--from-dir", type=click.Path(file_okay=False, exists=True, path_type=Path),
              help="Use profiles written by 'simulate' instead of generating a testbench.")
@click.option("--detectors", default="lbi,derivative", show_default=True,
              help=f"Comma-separated subset of {', '.join(DETECTOR_NAMES)}.")
@click.option("--workers", type=int, default=1, show_default=True, envvar="OTDR_LBI_WORKERS")
@click.option("--epsilon-min", type=float, default=DEFAULT_EPSILON_MIN, show_default=True)
@click.option("--n-max-sweeps", type=int, default=None, help="Iteration budget in sweeps (default 1000).")
@click.option("--derivative-threshold", type=float, default=0.5, show_default=True, help="dB.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def benchmark(lengths, profiles, faults, mag_range, min_separation, attenuation, spacing, seed, c0, delta_nu_hz,
              delta_z_m, crn_domain, noiseless, sigma, from_dir, detectors, workers, epsilon_min, n_max_sweeps,
              derivative_threshold, out_dir):
    """Score detectors on a testbench; writes report.json and plot-data CSVs to OUT."""
    names = [d.strip() for d in detectors.split(",") if d.strip()]
    if not names:
        raise click.UsageError("at least one detector is required")
    unknown = sorted(set(names) - set(DETECTOR_NAMES))
    if unknown:
        raise click.UsageError(f"unknown detector(s): {', '.join(unknown)}")
    if workers < 1:
        raise click.UsageError("--workers must be >= 1")

    try:
        if from_dir is not None:
            cases = _load_dir(from_dir)
        else:
            noise = _noise(c0, delta_nu_hz, delta_z_m, crn_domain, noiseless)
            cases = list(_profile_stream(lengths, profiles, faults, mag_range, min_separation, attenuation,
                                         spacing, seed, noise, sigma))
        dets = [_make_detector(n, sigma, epsilon_min, n_max_sweeps, derivative_threshold) for n in names]
    except OSError as exc:
        _fail(EXIT_UNREADABLE, str(exc))
    except formats.NonFiniteProfileError as exc:
        _fail(EXIT_NON_FINITE, str(exc))
    except formats.FormatError as exc:
        _fail(EXIT_SCHEMA, str(exc))
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))

    report = run_benchmark(cases, dets, workers=workers)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        formats.write_report(out_dir / "report.json", report.to_dict(include_timing=False))
        formats.write_plot_data(out_dir, report.summaries())
    except OSError as exc:
        _fail(EXIT_UNREADABLE, f"cannot write to {out_dir}: {exc}")

    failed = sum(r.error is not None for r in report.records)
    for name in report.detectors():
        s = report.overall(name)
        m = s.to_dict()["metrics"]
        click.echo(
            f"{name}: sensitivity={_pct(m['sensitivity'])} specificity={_pct(m['specificity'])} "
            f"precision={_pct(m['precision'])} mean_sq_err={s.mean_squared_error} failures={s.failures}"
        )
    if report.records and failed == len(report.records):
        _fail(EXIT_RUNTIME, "every detector failed on every profile")
    if failed:
        click.echo(f"warning: {failed} detector run(s) failed; see report.json", err=True)


def _pct(x):
    return "n/a" if x is None else f"{100 * x:.2f}%"


def _make_detector(name, sigma, epsilon_min, n_max_sweeps, threshold):
    if name == "derivative":
        return DerivativeDetector(threshold)
    if n_max_sweeps is not None and n_max_sweeps < 1:
        raise ValueError("--n-max-sweeps must be positive")
    config = SolverConfig(sigma=sigma, epsilon_min=epsilon_min)
    return LBIDetector(config, lambda_grid=(name == "lbi"), max_sweeps=n_max_sweeps)


if __name__ == "__main__":
    main()

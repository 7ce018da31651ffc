"""End-to-end runs: source synthesis, HBT measurement and photon-number statistics."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from . import formats
from .config import (
    CoincidenceConfig,
    ConfigError,
    ExperimentConfig,
    SpeckleConfig,
    dump_config,
    validate,
)
from .detection import PhotonStream, beam_split, detect, sample_arrivals, seed_sequence, thin
from .fitting import FitError, FitResult, fit_two_timescale
from .light import (
    IntensityTrace,
    MixParams,
    ModulationParams,
    SpeckleParams,
    gen_modulation_intensity,
    gen_speckle_intensity,
    mix_coherent_background,
    mixed_g2,
    modulation_g2,
    multiply_traces,
    solve_coherent_fraction,
)
from .statistics import (
    CorrelationFunction,
    CountHistogram,
    TailMetrics,
    coincidence_histogram,
    count_windows,
    g2_from_histogram,
    geometric_pmf,
    tail_metrics,
)

log = logging.getLogger(__name__)

TARGET_G2 = (1.89, 2.38, 2.80, 3.12)


class CalibrationError(RuntimeError):
    pass


@dataclass
class WindowResult:
    target: float
    mean: float
    g2_c: float
    g2_c_stderr: float
    histogram: CountHistogram
    tail: TailMetrics

    def to_dict(self) -> dict:
        return {
            "target_mean": self.target,
            "mean": self.mean,
            "g2_c": self.g2_c,
            "g2_c_stderr": self.g2_c_stderr,
            "n_windows": self.histogram.n_windows,
            "tail": self.tail.to_dict(),
        }


@dataclass
class RunReport:
    config: ExperimentConfig
    trace_g2: float
    g2_m: float
    g2_m_stderr: float
    correlation: CorrelationFunction
    fit_correlation: CorrelationFunction
    fit: Optional[FitResult]
    fit_error: Optional[str]
    windows: list = field(default_factory=list)
    rates: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "name": self.config.name,
            "seed": self.config.seed,
            "trace_g2": self.trace_g2,
            "g2_m": self.g2_m,
            "g2_m_stderr": self.g2_m_stderr,
            "g2_fit": None if self.fit is None else self.fit.g2_zero,
            "fit_error": self.fit_error,
            "rates": self.rates,
            "windows": [w.to_dict() for w in self.windows],
        }


# ---------------------------------------------------------------------------
# pipeline pieces


def build_trace(config: ExperimentConfig, seed) -> IntensityTrace:
    """Speckle (mixed with the coherent component) times modulator transmission.

    The returned trace is scaled so its mean equals the photon rate reaching
    the detectors, ``mean_rate_target / efficiency``.
    """
    k_speckle, k_mix, k_mod = seed_sequence(seed).spawn(3)
    sp = SpeckleParams(config.speckle.coherence_time, 1.0, config.speckle.shape)
    trace = gen_speckle_intensity(sp, config.duration, config.dt, k_speckle)
    trace = mix_coherent_background(trace, config.mix, k_mix)
    if config.modulation is not None:
        mod = gen_modulation_intensity(config.modulation, config.duration, config.dt, k_mod)
        trace = multiply_traces(trace, mod)
    source_rate = config.mean_rate_target / config.detector.efficiency
    if trace.mean == 0:
        raise ConfigError("modulation: transmission is identically zero")
    return trace.scaled(source_rate / trace.mean)


def hbt_measurement(config: ExperimentConfig, trace: IntensityTrace, seed, workers: int = 1):
    k_arr, k_split, k_d1, k_d2 = seed_sequence(seed).spawn(4)
    stream = sample_arrivals(trace, config.detector.efficiency, k_arr, workers=workers)
    s1, s2 = beam_split(stream, 0.5, k_split)
    d1 = detect(s1, config.detector, k_d1)
    d2 = detect(s2, config.detector, k_d2)
    c = config.coincidence
    cf = coincidence_histogram(d1, d2, c.bin, c.max_lag, normalization=c.normalization, workers=workers)
    return cf, d1, d2


def _fit_factor(config: ExperimentConfig, cf: CorrelationFunction) -> int:
    c = config.coincidence
    fit_bin = c.max_lag / 100 if c.fit_bin is None else c.fit_bin
    f = max(int(round(fit_bin / c.bin)), 1)
    if f % 2 == 0:
        f += 1
    while f > 1 and 2 * ((cf.half_bins - (f - 1) // 2) // f) + 1 < 21:
        f -= 2
    return f


def window_statistics(config: ExperimentConfig, trace: IntensityTrace, seed, workers: int = 1):
    """Single-detector photon-number histograms at each target mean count.

    In ``single_trace`` mode one arrival stream is drawn at the highest target
    rate and thinned to the lower ones, so all levels see the same light.
    """
    w = config.window
    targets = list(w.mean_counts)
    k_base, k_levels = seed_sequence(seed).spawn(2)
    level_seeds = k_levels.spawn(len(targets))
    out = []
    top = max(targets)
    base = None
    for target, ks in zip(targets, level_seeds):
        k_thin, k_det, k_trace = ks.spawn(3)
        if w.rescale == "single_trace":
            if base is None:
                eff = top / (trace.mean * w.width)
                base = sample_arrivals(trace, eff, k_base, workers=workers)
            stream = thin(base, target / top, k_thin)
        else:
            lvl_trace = build_trace(config, k_trace)
            eff = target / (lvl_trace.mean * w.width)
            stream = sample_arrivals(lvl_trace, eff, k_thin, workers=workers)
        stream = detect(stream, config.detector, k_det)
        hist = count_windows(stream, w.width, w.n_windows, start=trace.origin, stride=w.stride)
        g2c, err = g2_from_histogram(hist)
        out.append(WindowResult(target, hist.mean, g2c, err, hist, tail_metrics(hist, geometric_pmf)))
    return out


def run_experiment(config: ExperimentConfig, *, workers: int = 1, write: bool = True) -> RunReport:
    validate(config)
    k_trace, k_hbt, k_win = np.random.SeedSequence(config.seed).spawn(3)
    trace = build_trace(config, k_trace)
    cf, d1, d2 = hbt_measurement(config, trace, k_hbt, workers)
    g2_m, g2_m_err = cf.zero_lag(config.zero_window)
    fit_cf = cf.rebin(_fit_factor(config, cf))
    fit, fit_error = None, None
    if config.coincidence.fit:
        init = FitResult(
            a=0.3 if config.modulation is not None else 0.0,
            b=max(g2_m - 1.0, 0.1),
            tau_m=config.modulation.correlation_time if config.modulation is not None else config.speckle.coherence_time / 4,
            tau_g=config.speckle.coherence_time,
        )
        try:
            fit = fit_two_timescale(fit_cf, init, shape=config.speckle.shape)
        except FitError as exc:
            fit_error = str(exc)
    windows = window_statistics(config, trace, k_win, workers)
    report = RunReport(
        config=config,
        trace_g2=trace.g2(),
        g2_m=g2_m,
        g2_m_stderr=g2_m_err,
        correlation=cf,
        fit_correlation=fit_cf,
        fit=fit,
        fit_error=fit_error,
        windows=windows,
        rates={"detector_1": d1.rate, "detector_2": d2.rate, "source": trace.mean},
    )
    if write and config.output_dir is not None:
        write_report(report, Path(config.output_dir) / config.name)
    return report


def write_report(report: RunReport, directory: Path) -> None:
    directory = Path(directory)
    for w in report.windows:
        formats.atomic_write(directory / f"pn_{w.target:g}.csv", formats.histogram_to_csv(w.histogram))
    formats.atomic_write(directory / "g2_tau.csv", formats.correlation_to_csv(report.fit_correlation))
    fit_doc = {"fit": None if report.fit is None else report.fit.to_dict(), "error": report.fit_error}
    formats.write_json(directory / "fit.json", fit_doc)
    formats.write_json(directory / "summary.json", report.summary())
    formats.atomic_write(directory / "config.yaml", dump_config(report.config))


def _run_one(args):
    config, workers = args
    return run_experiment(config, workers=workers)


def run_many(configs: Sequence[ExperimentConfig], workers: int = 1) -> list:
    """Independent experiments; process-level parallelism does not change results."""
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(min(workers, len(configs))) as pool:
            return list(pool.map(_run_one, [(c, 1) for c in configs]))
    return [run_experiment(c) for c in configs]


# ---------------------------------------------------------------------------
# table of measured vs calculated g2


def run_table1(configs: Sequence[ExperimentConfig], workers: int = 1) -> dict:
    if not configs:
        raise ConfigError("table1: need at least one configuration")
    levels = tuple(configs[0].window.mean_counts)
    for c in configs:
        if tuple(c.window.mean_counts) != levels:
            raise ConfigError("table1: every configuration must use the same window.mean_counts")
    reports = run_many(list(configs), workers)
    rows = []
    for cfg, rep in zip(configs, reports):
        rows.append({
            "name": cfg.name,
            "seed": cfg.seed,
            "v_pp": None if cfg.modulation is None else cfg.modulation.v_pp,
            "g2_m": rep.g2_m,
            "g2_m_stderr": rep.g2_m_stderr,
            "trace_g2": rep.trace_g2,
            "g2_c": [w.g2_c for w in rep.windows],
            "g2_c_stderr": [w.g2_c_stderr for w in rep.windows],
            "mean": [w.mean for w in rep.windows],
        })
    table = {"levels": list(levels), "rows": rows}
    table["text"] = format_table(table)
    return table


def format_table(table: dict) -> str:
    levels = table["levels"]
    head = ["config", "g2_m (HBT)"] + [f"g2_c ({m:g})" for m in levels]
    lines = [head]
    for r in table["rows"]:
        lines.append(
            [r["name"], f"{r['g2_m']:.2f}±{r['g2_m_stderr']:.2f}"]
            + [f"{g:.2f}±{e:.2f}" for g, e in zip(r["g2_c"], r["g2_c_stderr"])]
        )
    widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
    return "\n".join("  ".join(cell.rjust(wd) for cell, wd in zip(row, widths)) for row in lines) + "\n"


# ---------------------------------------------------------------------------
# calibration


def verify_mixing_law(coherent_fraction: float, model: str = "field", n: int = 2_000_000, seed=0):
    """Monte Carlo ``<I^2>/<I>^2`` of a constant amplitude plus circular Gaussian field samples.

    Returns ``(monte_carlo, stderr, closed_form)``.
    """
    rng = np.random.default_rng(seed)
    eps = coherent_fraction
    E = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
    if model == "field":
        I = np.abs(np.sqrt(eps) + np.sqrt(1 - eps) * E) ** 2
    else:
        I = eps + (1 - eps) * np.abs(E) ** 2
    m1, m2 = I.mean(), np.mean(I**2)
    g2 = m2 / m1**2
    # delta method on (m1, m2) for iid samples
    cov = np.cov(np.vstack([I, I**2])) / n
    grad = np.array([-2 * m2 / m1**3, 1 / m1**2])
    return float(g2), float(np.sqrt(grad @ cov @ grad)), mixed_g2(eps, model)


def _peak_vpp(base: ModulationParams) -> float:
    """Drive amplitude where the modulator g2 peaks (first local maximum)."""
    grid = np.linspace(0, 12 * base.v_pi, 4001)
    g = np.array([modulation_g2(_with_vpp(base, v)) for v in grid])
    i = int(np.argmax(np.diff(g) < 0)) if np.any(np.diff(g) < 0) else grid.size - 1
    return float(grid[i])


def _with_vpp(base: ModulationParams, v_pp: float) -> ModulationParams:
    return ModulationParams(base.correlation_time, float(v_pp), base.v_pi, base.bias_phase, base.shape)


def solve_vpp(base: ModulationParams, target_g2: float) -> float:
    """Smallest drive amplitude whose modulator g2 equals ``target_g2``."""
    g0 = modulation_g2(_with_vpp(base, 0.0))
    if target_g2 <= g0 + 1e-12:
        return 0.0
    v_peak = _peak_vpp(base)
    g_peak = modulation_g2(_with_vpp(base, v_peak))
    if target_g2 > g_peak:
        raise CalibrationError(
            f"modulator reaches at most g2={g_peak:.3f} at bias {base.bias_phase:.3f} rad; "
            f"cannot reach {target_g2:.3f}"
        )
    f = lambda v: modulation_g2(_with_vpp(base, v)) - target_g2
    return float(optimize.brentq(f, 0.0, v_peak, xtol=1e-12))


def calibrate(
    base: ExperimentConfig,
    targets: Sequence[float] = TARGET_G2,
    *,
    modulation: Optional[ModulationParams] = None,
    mix_model: str = "field",
    mc_samples: int = 2_000_000,
) -> list:
    """Configurations whose zero-lag g2 matches ``targets``.

    The first (smallest) target fixes the coherent fraction with the modulator
    idle; the remaining targets are reached by raising the drive amplitude.
    The mixing law is checked by Monte Carlo before it is inverted.
    """
    targets = sorted(float(t) for t in targets)
    if not targets:
        raise ConfigError("calibrate: need at least one target")
    if modulation is None:
        modulation = base.modulation or ModulationParams(correlation_time=1.28e-6, v_pp=0.0)
    eps = solve_coherent_fraction(min(targets[0], 2.0), mix_model) if targets[0] <= 2 else 0.0
    mc, mc_err, closed = verify_mixing_law(eps, mix_model, mc_samples, seed=base.seed)
    if abs(mc - closed) > 5 * mc_err + 1e-12:
        raise CalibrationError(f"mixing law check failed: Monte Carlo {mc:.4f}±{mc_err:.4f} vs {closed:.4f}")
    g_mix = mixed_g2(eps, mix_model)
    configs = []
    for t in targets:
        v_pp = solve_vpp(modulation, t / g_mix)
        cfg = base.replace(
            name=f"g2_{t:.2f}",
            mix=MixParams(eps, mix_model),
            modulation=_with_vpp(modulation, v_pp),
        )
        validate(cfg)
        configs.append(cfg)
        log.info("target %.2f: coherent_fraction=%.4f v_pp=%.4f V", t, eps, v_pp)
    return configs


# ---------------------------------------------------------------------------
# presets


def bench_config(**changes) -> ExperimentConfig:
    """Timescales, window and detector as reported for the bench (5 us windows)."""
    base = ExperimentConfig(
        name="bench",
        duration=0.5,
        dt=1.28e-7,
        speckle=SpeckleConfig(coherence_time=4.63e-6),
        modulation=ModulationParams(correlation_time=1.28e-6, v_pp=0.0),
    )
    return base.replace(**changes)


def table1_config(**changes) -> ExperimentConfig:
    """Table-1 preset with both coherence times ten times longer than the bench values.

    Keeps the 5 us window and 35 ns dead time but puts the window well inside
    both coherence times, the regime where the histogram and HBT estimates of
    g2(0) are expected to coincide.
    """
    base = ExperimentConfig(
        name="table1",
        duration=0.5,
        dt=1.28e-6,
        mean_rate_target=2e5,
        speckle=SpeckleConfig(coherence_time=46.3e-6),
        modulation=ModulationParams(correlation_time=12.8e-6, v_pp=0.0),
        coincidence=CoincidenceConfig(bin=1e-9, max_lag=200e-6),
    )
    return base.replace(**changes)


__all__ = [
    "RunReport",
    "WindowResult",
    "build_trace",
    "calibrate",
    "hbt_measurement",
    "bench_config",
    "run_experiment",
    "run_many",
    "run_table1",
    "solve_vpp",
    "table1_config",
    "verify_mixing_law",
    "window_statistics",
]

"""Acceptance criteria, each reported as one PASS/FAIL line in the terminal summary.

Seeds below were fixed before the first run and are not tuned.
"""
import os
import time

import numpy as np
import pytest

from superbunch.config import CoincidenceConfig, WindowConfig
from superbunch.detection import sample_arrivals
from superbunch.experiment import (
    TARGET_G2,
    build_trace,
    calibrate,
    hbt_measurement,
    bench_config,
    run_experiment,
    run_table1,
    solve_vpp,
    table1_config,
    verify_mixing_law,
    window_statistics,
)
from superbunch.light import (
    MixParams,
    ModulationParams,
    SpeckleParams,
    gen_modulation_intensity,
    gen_speckle_intensity,
    intensity_g2,
    multiply_traces,
    solve_coherent_fraction,
)
from superbunch.statistics import (
    CountHistogram,
    chisquare_gof,
    coincidence_counts,
    count_windows,
    g2_from_histogram,
    geometric_pmf,
    poisson_pmf,
    truncated_pmf,
)

SEED = 12345
TAU_G = 4.63e-6
TAU_M = 1.28e-6


@pytest.fixture(scope="module")
def table1():
    t0 = time.perf_counter()
    configs = calibrate(table1_config(seed=SEED), TARGET_G2)
    table = run_table1(configs)
    return table, time.perf_counter() - t0


def test_c1_pseudothermal_baseline(record):
    t0 = time.perf_counter()
    T = TAU_G / 50
    n_windows = 100_000
    # windows 10 us apart so neighbouring windows see independent speckle
    stride = 10e-6
    duration = n_windows * stride
    tr = gen_speckle_intensity(SpeckleParams(TAU_G, 1.0), duration, TAU_G / 10, seed=SEED)
    stream = sample_arrivals(tr.scaled(0.1 / T / tr.mean), 1.0, SEED + 1)
    hist = count_windows(stream, T, n_windows, stride=stride)
    g2c, err = g2_from_histogram(hist)
    stat, dof, p = chisquare_gof(hist, geometric_pmf)
    elapsed = time.perf_counter() - t0
    ok = abs(g2c - 2.0) <= 0.10 and p >= 0.01 and elapsed <= 60
    record("1 pseudothermal baseline", ok,
           f"g2_c={g2c:.3f}±{err:.3f} (2.00±0.10), <n>={hist.mean:.4f}, "
           f"chi2={stat:.2f}/{dof} p={p:.3f} (>=0.01), {elapsed:.1f}s (<=60s)")
    assert ok


def test_c2_coherent_background(record):
    eps = solve_coherent_fraction(1.89)
    mc, mc_err, closed = verify_mixing_law(eps, n=4_000_000, seed=SEED)
    # at the default 2e5/s the 35 ns dead time costs well under 0.01 of zero-lag g2
    cfg = bench_config(seed=SEED, duration=2.0, mean_rate_target=2e5, modulation=None,
                       mix=MixParams(eps), coincidence=CoincidenceConfig(fit=False))
    k_trace, k_hbt = np.random.SeedSequence(SEED).spawn(2)
    cf, _, _ = hbt_measurement(cfg, build_trace(cfg, k_trace), k_hbt)
    g2m, err = cf.zero_lag(cfg.zero_window)
    ok = abs(mc - closed) <= 5 * mc_err and abs(g2m - 1.89) <= 0.05
    record("2 coherent background", ok,
           f"eps={eps:.4f}, mixing law MC {mc:.4f}±{mc_err:.4f} vs {closed:.4f}; "
           f"g2_m={g2m:.3f}±{err:.3f} (1.89±0.05)")
    assert ok


def test_c3_table1(record, table1):
    table, elapsed = table1
    worst = []
    ok = elapsed <= 300
    for row, target in zip(table["rows"], TARGET_G2):
        for g, e in zip(row["g2_c"], row["g2_c_stderr"]):
            tol = max(0.15, 3 * np.hypot(e, row["g2_m_stderr"]))
            gap = abs(g - row["g2_m"])
            worst.append(gap / tol)
            ok &= gap <= tol
    g2m = [r["g2_m"] for r in table["rows"]]
    ok &= bool(np.all(np.diff(g2m) > 0))
    print(table["text"])
    record("3 Table 1 consistency", ok,
           f"g2_m={', '.join(f'{g:.2f}' for g in g2m)}; worst |g2_c-g2_m|/tol={max(worst):.2f}; "
           f"{elapsed:.0f}s (<=300s)")
    assert ok


def test_c4_two_timescales(record):
    mod = ModulationParams(TAU_M, 0.0, 8.0, np.pi / 4)
    mod = ModulationParams(TAU_M, solve_vpp(mod, 1.27), 8.0, np.pi / 4)
    cfg = bench_config(seed=SEED, duration=1.0, mean_rate_target=4e5, modulation=mod,
                       window=WindowConfig(n_windows=1000))
    rep = run_experiment(cfg, write=False)
    fit = rep.fit
    assert fit is not None, rep.fit_error
    dm = fit.tau_m / TAU_M - 1
    dg = fit.tau_g / TAU_G - 1
    dz = fit.g2_zero / rep.g2_m - 1
    ok = abs(dm) <= 0.10 and abs(dg) <= 0.10 and abs(dz) <= 0.05
    record("4 two-timescale fit", ok,
           f"tau_m={fit.tau_m * 1e6:.3f}us ({dm:+.1%}), tau_g={fit.tau_g * 1e6:.3f}us ({dg:+.1%}), "
           f"(1+a)(1+b)={fit.g2_zero:.3f} vs zero-lag {rep.g2_m:.3f} ({dz:+.1%})")
    assert ok


def test_c5_non_rayleigh_tail(record, table1):
    table, _ = table1
    row = table["rows"][-1]
    cfg = calibrate(table1_config(seed=SEED), TARGET_G2)[-1]
    w100k = run_experiment(cfg, write=False).windows[0]
    assert w100k.g2_c == row["g2_c"][0]
    # at <n>=0.1, 1e5 windows expect only ~4.5 windows with n>=5 (z~1.8 on average);
    # the same source over 1e6 windows carries the significance test
    big = cfg.replace(duration=5.0, window=WindowConfig(n_windows=1_000_000, mean_counts=(0.1,)),
                      coincidence=CoincidenceConfig(bin=1e-9, max_lag=200e-6, fit=False))
    w = run_experiment(big, write=False).windows[0]
    ratio = w.tail.tail_ratio[5]
    z = w.tail.tail_significance[5]
    ok = ratio > 1 and z >= 3
    record("5 non-Rayleigh tail", ok,
           f"g2~3 source, <n>={w.mean:.3f}, 1e6 windows: P(n>=5) ratio={ratio:.2f}, "
           f"{w.tail.tail_counts[5]:.0f} windows vs {w.tail.tail_reference[5] * w.histogram.n_windows:.1f} "
           f"geometric, z={z:.1f} (>=3); 1e5 windows: ratio={w100k.tail.tail_ratio[5]:.2f}, "
           f"z={w100k.tail.tail_significance[5]:.1f}")
    assert ok


@pytest.mark.parametrize("source", ["speckle", "superbunching"])
def test_c6_long_window_washout(record, source):
    T = 100 * TAU_G
    n_windows = 2000
    if source == "speckle":
        cfg = bench_config(modulation=None)
    else:
        cfg = calibrate(bench_config(), [1.89, 3.12])[-1]
    cfg = cfg.replace(seed=SEED, duration=n_windows * T, mean_rate_target=2e5,
                      window=WindowConfig(width=T, n_windows=n_windows, mean_counts=(50.0,)),
                      coincidence=CoincidenceConfig(fit=False))
    k_trace, k_win = np.random.SeedSequence(SEED).spawn(2)
    w = window_statistics(cfg, build_trace(cfg, k_trace), k_win)[0]
    ok = abs(w.g2_c - 1.0) <= 0.05
    record(f"6 long-window washout ({source})", ok,
           f"T=100 tau_g, <n>={w.mean:.1f}: g2_c={w.g2_c:.4f}±{w.g2_c_stderr:.4f} (1.00±0.05)")
    assert ok


def _all_pairs(t1, t2, bin_width, K):
    hist = np.zeros(2 * K + 1, dtype=np.int64)
    d = t1[:, None] - t2[None, :]
    k = np.floor(d / bin_width + 0.5).astype(np.int64) + K
    inside = (k >= 0) & (k < 2 * K + 1)
    np.add.at(hist, k[inside], 1)
    return hist


def test_c7_oracle_equivalence(record):
    rng = np.random.default_rng(SEED)
    exact = True
    for trial in range(5):
        t1 = np.sort(rng.uniform(0, 50e-6, 1000))
        t2 = np.sort(rng.uniform(0, 50e-6, 1000))
        exact &= np.array_equal(coincidence_counts(t1, t2, 165e-12, 20000), _all_pairs(t1, t2, 165e-12, 20000))
    geo = g2_from_histogram(CountHistogram.from_pmf(truncated_pmf(geometric_pmf, 0.5)))[0]
    poi = g2_from_histogram(CountHistogram.from_pmf(truncated_pmf(poisson_pmf, 0.5)))[0]
    one = g2_from_histogram(CountHistogram(1.0, [0, 1000]))[0]
    ok = exact and abs(geo - 2) < 1e-6 and abs(poi - 1) < 1e-6 and abs(one) < 1e-6
    record("7 oracle equivalence", ok,
           f"sweep == all-pairs on 1e3-event streams: {exact}; g2 geometric={geo:.9f}, "
           f"poisson={poi:.9f}, deterministic-1={one:.1f}")
    assert ok


def test_c8_factorization(record):
    dt = TAU_M / 10
    mod = gen_modulation_intensity(ModulationParams(TAU_M, 96.0, 8.0, np.pi / 4), 0.2, dt, seed=SEED)
    spk = gen_speckle_intensity(SpeckleParams(TAU_G, 1.0), 0.2, dt, seed=SEED + 1)
    gm, em = intensity_g2(mod)
    gs, es = intensity_g2(spk)
    gp, ep = intensity_g2(multiply_traces(mod, spk))
    combined = np.sqrt(ep**2 + (gs * em) ** 2 + (gm * es) ** 2)
    ok = abs(gp - gm * gs) <= 3 * combined
    record("8 factorization", ok,
           f"g2(mod)={gm:.3f}, g2(speckle)={gs:.3f}, product {gm * gs:.3f} vs g2(product)={gp:.3f}, "
           f"|diff|={abs(gp - gm * gs):.3f} <= 3x{combined:.3f}")
    assert ok


def test_c9_determinism(record, tmp_path):
    configs = calibrate(table1_config(seed=SEED, duration=0.05,
                                      window=WindowConfig(n_windows=5_000)), [3.12])
    cfg = configs[0]
    max_workers = max(os.cpu_count() or 1, 8)
    run_experiment(cfg.replace(output_dir=str(tmp_path / "a")), workers=1)
    run_experiment(cfg.replace(output_dir=str(tmp_path / "b")), workers=max_workers)
    run_experiment(cfg.replace(output_dir=str(tmp_path / "c")), workers=1)
    names = sorted(p.name for p in (tmp_path / "a" / cfg.name).iterdir() if p.name != "config.yaml")
    same = all(
        (tmp_path / "a" / cfg.name / n).read_bytes() == (tmp_path / d / cfg.name / n).read_bytes()
        for n in names for d in ("b", "c")
    )
    record("9 determinism", same, f"{len(names)} artifacts byte-identical across repeat and workers=1/{max_workers}")
    assert same

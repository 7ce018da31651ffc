"""Histogram-derived g2 as the window grows from well below to far above the coherence time.

Windows only a few dead times wide lose most photon pairs; pass
``--dead-time 0`` to see the ideal-detector curve.
"""
import argparse

import numpy as np

from superbunch.config import CoincidenceConfig, WindowConfig
from superbunch.detection import DetectorParams
from superbunch.experiment import build_trace, calibrate, bench_config, window_statistics


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target", type=float, default=3.12)
    ap.add_argument("--duration", type=float, default=1.0)
    ap.add_argument("--dead-time", type=float, default=35e-9)
    args = ap.parse_args()

    cfg = calibrate(bench_config(seed=args.seed, duration=args.duration), [1.89, args.target])[-1]
    cfg = cfg.replace(coincidence=CoincidenceConfig(fit=False),
                      detector=DetectorParams(dead_time=args.dead_time))
    tau_g = cfg.speckle.coherence_time
    k_trace, k_win = np.random.SeedSequence(args.seed).spawn(2)
    trace = build_trace(cfg, k_trace)
    print(f"trace g2 = {trace.g2():.3f}")
    print(" T/tau_g   windows    <n>     g2_c")
    for ratio in (0.02, 0.1, 0.3, 1, 3, 10, 30, 100):
        T = ratio * tau_g
        n_win = min(100_000, int(args.duration / T))
        # keep ~1 photon per tau_g/50 so short windows still see counts
        mean = max(0.1, 5 * ratio)
        c = cfg.replace(mean_rate_target=max(cfg.mean_rate_target, mean / T),
                        window=WindowConfig(width=T, n_windows=n_win, mean_counts=(mean,)))
        w = window_statistics(c, trace.scaled(c.mean_rate_target / trace.mean), k_win)[0]
        print(f"{ratio:8.2f}  {n_win:8d}  {w.mean:7.2f}  {w.g2_c:.3f}±{w.g2_c_stderr:.3f}")


if __name__ == "__main__":
    main()

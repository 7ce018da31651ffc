"""Command line entry point: ``superbunch {run,table1,calibrate,import,export}``.

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .config import ConfigError, ExperimentConfig, dump_config, load_config, validate
from .detection import beam_split, detect, sample_arrivals
from .experiment import (
    TARGET_G2,
    CalibrationError,
    build_trace,
    calibrate,
    bench_config,
    run_experiment,
    run_table1,
    table1_config,
)
from .fitting import FitError
from .statistics import (
    UndefinedStatisticError,
    coincidence_histogram,
    count_windows,
    g2_from_histogram,
    geometric_pmf,
    tail_metrics,
)

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("superbunch")


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        out["output_dir"] = str(args.out)
    return out


def _load(path, args, preset) -> ExperimentConfig:
    if path is None:
        cfg = preset()
        changes = _overrides(args)
        cfg = cfg.replace(**changes)
        validate(cfg)
        return cfg
    return load_config(path, _overrides(args))


def cmd_run(args) -> int:
    cfg = _load(args.config, args, bench_config)
    report = run_experiment(cfg, workers=args.workers)
    sys.stdout.write(formats.dumps_json(report.summary()))
    return 0


def cmd_table1(args) -> int:
    if args.config:
        configs = [_load(p, args, table1_config) for p in args.config]
    else:
        base = _load(None, args, table1_config)
        configs = calibrate(base, TARGET_G2)
    table = run_table1(configs, workers=args.workers)
    sys.stdout.write(table["text"])
    if args.out is not None:
        doc = {k: v for k, v in table.items() if k != "text"}
        formats.write_json(Path(args.out) / "table1.json", doc)
        formats.atomic_write(Path(args.out) / "table1.txt", table["text"])
    return 0


def cmd_calibrate(args) -> int:
    base = _load(args.config[0] if args.config else None, args, table1_config).replace(output_dir=None)
    targets = args.targets or list(TARGET_G2)
    configs = calibrate(base, targets, mix_model=args.mix_model)
    out = Path(args.out) if args.out is not None else None
    for cfg in configs:
        text = dump_config(cfg)
        if out is not None:
            formats.atomic_write(out / f"{cfg.name}.yaml", text)
        m = cfg.modulation
        print(f"{cfg.name}: coherent_fraction={cfg.mix.coherent_fraction:.6f} v_pp={m.v_pp:.4f} V "
              f"(v_pi={m.v_pi:g} V, bias={m.bias_phase:.4f} rad)")
    if args.verify:
        table = run_table1(configs, workers=args.workers)
        sys.stdout.write(table["text"])
    return 0


def cmd_import(args) -> int:
    fmt = None if args.format is None else {"csv": "text", "binary": "binary"}.get(args.format)
    if args.format is not None and fmt is None:
        raise ConfigError(f"--format: time tags are read as csv (text) or binary, not {args.format}")
    stream = formats.read_timetags(args.path, fmt)
    doc = {"events": len(stream), "channel": stream.channel_id, "span": list(stream.span), "rate": stream.rate}
    if args.window is not None:
        n_windows = args.n_windows or int(stream.duration // args.window)
        hist = count_windows(stream, args.window, n_windows)
        g2c, err = g2_from_histogram(hist)
        doc["window"] = {"width": args.window, "n_windows": n_windows, "mean": hist.mean,
                         "g2_c": g2c, "g2_c_stderr": err,
                         "tail": tail_metrics(hist, geometric_pmf).to_dict()}
        if args.out is not None:
            formats.atomic_write(Path(args.out) / "pn.csv", formats.histogram_to_csv(hist))
    if args.partner is not None:
        other = formats.read_timetags(args.partner, fmt)
        cf = coincidence_histogram(stream, other, args.bin, args.max_lag, workers=args.workers)
        g2m, err = cf.zero_lag(args.zero_window)
        doc["hbt"] = {"g2_m": g2m, "g2_m_stderr": err}
        if args.out is not None:
            formats.atomic_write(Path(args.out) / "g2_tau.csv", formats.correlation_to_csv(cf))
    if args.out is not None:
        formats.write_json(Path(args.out) / "import_summary.json", doc)
    sys.stdout.write(formats.dumps_json(doc))
    return 0


def cmd_export(args) -> int:
    cfg = _load(args.config, args, bench_config)
    out = Path(args.out or ".")
    fmt = args.format or ("csv" if args.what != "report" else "json")
    k_trace, k_hbt, _ = np.random.SeedSequence(cfg.seed).spawn(3)
    if args.what == "trace":
        if fmt == "json":
            raise ConfigError("--format: traces export as csv or binary")
        trace = build_trace(cfg, k_trace)
        ext = "csv" if fmt == "csv" else "sbit"
        formats.write_trace(out / f"{cfg.name}_trace.{ext}", trace, fmt)
    elif args.what == "timetags":
        if fmt == "json":
            raise ConfigError("--format: time tags export as csv (text) or binary")
        trace = build_trace(cfg, k_trace)
        k_arr, k_split, k_d1, k_d2 = k_hbt.spawn(4)
        stream = sample_arrivals(trace, cfg.detector.efficiency, k_arr, workers=args.workers)
        s1, s2 = beam_split(stream, 0.5, k_split)
        for s, k in ((s1, k_d1), (s2, k_d2)):
            s = detect(s, cfg.detector, k)
            ext = "txt" if fmt == "csv" else "sbtt"
            formats.write_timetags(out / f"{cfg.name}_ch{s.channel_id}.{ext}", s,
                                   "text" if fmt == "csv" else "binary")
    else:
        if fmt != "json":
            raise ConfigError("--format: reports export as json")
        report = run_experiment(cfg.replace(output_dir=str(out)), workers=args.workers)
        sys.stdout.write(formats.dumps_json(report.summary()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="superbunch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi_config=False):
        if multi_config:
            sp.add_argument("--config", action="append", type=Path, help="config file (repeatable)")
        else:
            sp.add_argument("--config", type=Path, help="YAML config file")
        sp.add_argument("--seed", type=int, help="override the config seed (u64)")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--format", choices=("csv", "json", "binary"))

    sp = sub.add_parser("run", help="simulate one experiment and write its artifacts")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("table1", help="measured vs histogram-derived g2 for a set of configs")
    common(sp, multi_config=True)
    sp.set_defaults(func=cmd_table1)

    sp = sub.add_parser("calibrate", help="find coherent fraction and drive amplitudes for target g2 values")
    common(sp, multi_config=True)
    sp.add_argument("--targets", type=float, nargs="+")
    sp.add_argument("--mix-model", choices=("field", "intensity"), default="field")
    sp.add_argument("--verify", action="store_true", help="simulate the calibrated configs")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("import", help="statistics of recorded time tags")
    sp.add_argument("path", type=Path)
    common(sp)
    sp.add_argument("--window", type=float, help="window width in seconds for P(n)")
    sp.add_argument("--n-windows", type=int)
    sp.add_argument("--partner", type=Path, help="second detector file for HBT correlation")
    sp.add_argument("--bin", type=float, default=165e-12)
    sp.add_argument("--max-lag", type=float, default=20e-6)
    sp.add_argument("--zero-window", type=float, default=50e-9)
    sp.set_defaults(func=cmd_import)

    sp = sub.add_parser("export", help="export a simulated trace, time tags or report")
    common(sp)
    sp.add_argument("--what", choices=("trace", "timetags", "report"), default="trace")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (formats.FormatError, CalibrationError, FitError, UndefinedStatisticError,
            ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

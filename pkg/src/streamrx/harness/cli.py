"""Command-line entry point: ``streamrx {run,sweep,latency,selftest}``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure, 1 any
other error. Failures print a one-line JSON summary on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import _backend
from ..errors import CapabilityError, ConfigurationError, NumericalError
from .config import PRESETS, expand_grid, load_config, parse_assignment, preset_dict, read_config_file
from .csvio import Tables, emit_csv, summarize
from .experiment import run_experiment, worker_count
from .latency import DEFAULT_ROSTER, hidden_for_params, measure_latency


def _common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="YAML experiment file")
    src.add_argument("--preset", choices=PRESETS, help="bundled scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config entry, e.g. ssm.gamma=0.99")
    p.add_argument("--updaters", help="comma-separated updater labels to run (default: all)")
    p.add_argument("--workers", type=int, help="process-pool size (default $STREAMRX_WORKERS or 1)")


def _labels(args):
    return [s.strip() for s in args.updaters.split(",")] if args.updaters else None


def _load(args, extra=()):
    preset = args.preset if (args.preset or args.config) else "mimo-linear"
    return load_config(args.config, preset=None if args.config else preset,
                       overrides=list(args.overrides) + list(extra),
                       seed=args.seed, trials=args.trials)


def _summary(tables: Tables) -> list:
    return [{"updater": r.updater, "snr_db": r.snr_db, "ber_mean": r.ber_mean,
             "ber_std": r.ber_std} for r in tables.ber_vs_snr]


def cmd_run(args) -> int:
    cfg = _load(args)
    records = list(run_experiment(cfg, _labels(args), args.workers))
    order = [u.label for u in cfg.updaters] + list(cfg.references)
    tables = summarize(records, rotation=cfg.channel == "rotation", order=order)
    paths = emit_csv(tables, args.out_dir)
    print(json.dumps({"config": cfg.name, "files": [str(p) for p in paths],
                      "ber_vs_snr": _summary(tables)}, indent=2))
    return 0


def cmd_sweep(args) -> int:
    grid = {}
    for item in args.grid:
        key, values = parse_assignment(item)
        grid[key] = values if isinstance(values, list) else [values]
    if args.config:
        base = read_config_file(args.config)
    else:
        base = preset_dict(args.preset or "mimo-linear")
    rows = []
    for i, (point, data) in enumerate(expand_grid(base, grid) if grid else [({}, base)]):
        cfg = load_config(data, overrides=args.overrides, seed=args.seed, trials=args.trials)
        records = list(run_experiment(cfg, _labels(args), args.workers))
        order = [u.label for u in cfg.updaters] + list(cfg.references)
        tables = summarize(records, rotation=cfg.channel == "rotation", order=order)
        emit_csv(tables, args.out_dir / f"point-{i:03d}")
        for r in _summary(tables):
            rows.append({**point, **r})
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "sweep.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(rows, indent=2))
    return 0


def cmd_latency(args) -> int:
    cfg = _load(args)
    d_in = 2 * cfg.antennas + cfg.users * cfg.bits_per_symbol
    d_out = cfg.bits_per_symbol
    if args.P:
        widths = [(d_in, hidden_for_params(d_in, d_out, P), d_out)
                  for P in (int(v) for v in args.P.split(","))]
    else:
        widths = [(d_in, cfg.hidden[0], d_out)]
    labels = _labels(args)
    roster = [r for r in DEFAULT_ROSTER if labels is None or r[0] in labels]
    rows = measure_latency(widths, roster, cfg.hyper, args.updates, n_input_bits=d_in - 2 * cfg.antennas)
    emit_csv(Tables([], [], rows, []), args.out_dir)
    for r in rows:
        timing = "refused" if r.mean_us != r.mean_us else f"{r.mean_us:10.1f} us (p95 {r.p95_us:.1f})"
        print(f"{r.updater:10s} {r.repr:8s} P={r.P:6d} {timing}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamrx", description="Online Bayesian adaptation of modular receivers")
    p.add_argument("--version", action="store_true", help="print version and backend")
    sub = p.add_subparsers(dest="command")

    run = sub.add_parser("run", help="run one experiment and write the CSV summaries")
    _common(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run an experiment over a grid of config values")
    _common(sweep)
    sweep.add_argument("--grid", action="append", default=[], metavar="KEY=[V1,V2,...]",
                       help="e.g. scenario.snr_db=[[4],[8]] or updaters.gd-10.lr=[0.003,0.01]")
    sweep.set_defaults(func=cmd_sweep)

    lat = sub.add_parser("latency", help="time single streaming updates")
    _common(lat)
    lat.add_argument("--P", help="comma-separated target parameter counts")
    lat.add_argument("--updates", type=int, default=1000)
    lat.set_defaults(func=cmd_latency)

    st = sub.add_parser("selftest", help="run the built-in invariant checks")
    st.set_defaults(func=cmd_selftest)
    return p


def _fail(kind: str, exc: Exception, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": str(exc), **extra}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        from .. import __version__

        print(f"streamrx {__version__} ({_backend.BACKEND} kernels)")
        return 0
    if not args.command:
        parser.print_help()
        return 1
    try:
        if hasattr(args, "workers"):
            worker_count(args.workers)
        return args.func(args)
    except ConfigurationError as exc:
        return _fail("configuration", exc, 2, details=exc.errors)
    except (NumericalError, CapabilityError) as exc:
        return _fail(type(exc).__name__, exc, 3)
    except OSError as exc:
        return _fail("io", exc, 1)


if __name__ == "__main__":
    sys.exit(main())

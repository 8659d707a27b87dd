"""Command-line entry point: ingest, run, ablate, sweep.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig
from .evaluate import (
    SWEEP_AXES,
    prepare,
    sensitivity_sweep,
    sweep_table_csv,
    walk_forward,
    write_run,
)
from .ingest import DataError, TimeFrame, align_and_fill, fit_scaler, load_csv, transform
from .integrate import VARIANTS
from .semantic import STUB_MODES, ReplayLog, SlmClient, StubConfig

log = logging.getLogger("adaptive_forecast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--data", action="append", help="price CSV (repeatable)")
    common.add_argument("--gepu", help="GEPU CSV")
    common.add_argument("--target", help="target column name")
    common.add_argument("--stub", choices=STUB_MODES, help="replace the language model with a stub")
    common.add_argument("--stub-sigma", type=float, help="noise std (percent return) for --stub noisy")
    common.add_argument("--seed", type=int, help="master seed")
    rec = common.add_mutually_exclusive_group()
    rec.add_argument("--record", help="append model exchanges to this replay log")
    rec.add_argument("--replay", help="answer model queries from this replay log")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="adaptive-forecast", description="Dual-channel price forecasting with meta-selection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", parents=[common], help="align, fill and scale input data")
    sub.add_parser("run", parents=[common], help="walk-forward evaluation")
    ab = sub.add_parser("ablate", parents=[common], help="run ablation variants")
    ab.add_argument("--variants", default="all", help="'all' or a comma-separated subset of " + ",".join(VARIANTS))
    sw = sub.add_parser("sweep", parents=[common], help="window / ensemble sensitivity")
    sw.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sw.add_argument("--values", required=True, help="comma-separated integers")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    updates = {}
    if args.data:
        updates["data"] = tuple(args.data)
    if args.gepu:
        updates["gepu"] = args.gepu
    if args.target:
        updates["target"] = args.target
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out:
        updates["out"] = args.out
    if args.stub:
        base = cfg.stub or StubConfig()
        sigma = args.stub_sigma if args.stub_sigma is not None else base.sigma
        try:
            updates["stub"] = replace(base, mode=args.stub, sigma=sigma)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    elif args.stub_sigma is not None:
        raise ConfigError("--stub-sigma needs --stub")
    cfg = replace(cfg, **updates).validate()
    if not cfg.data:
        raise ConfigError("no input data: pass --data or set 'data' in the config")
    return cfg


def load_frame(cfg: RunConfig) -> TimeFrame:
    frames = [load_csv(p, cfg.date_column) for p in cfg.data]
    if cfg.gepu:
        frames.append(load_csv(cfg.gepu, cfg.date_column))
    frame = align_and_fill(frames, cfg.fill_policy, cfg.target)
    if cfg.target not in frame.columns:
        raise DataError(f"target column {cfg.target!r} not found; available: {frame.names}")
    if cfg.gepu and cfg.routing.gepu_column not in frame.columns:
        log.warning("GEPU file has no %r column; GEPU features disabled", cfg.routing.gepu_column)
    return frame


def _client(cfg: RunConfig, args) -> SlmClient | None:
    if cfg.stub is not None:
        return None
    replay = None
    if args.record:
        replay = ReplayLog(args.record, "record")
    elif args.replay:
        replay = ReplayLog(args.replay, "replay")
    return SlmClient(cfg.slm, replay=replay)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_ingest(cfg: RunConfig, args) -> int:
    frame = load_frame(cfg)
    n_fit = int(cfg.train_fraction * len(frame) + 1e-9) if cfg.protocol == "split" else cfg.forward_context
    if not 0 < n_fit <= len(frame):
        raise DataError(f"{len(frame)} rows cannot hold a {n_fit}-row training slice")
    scaler = fit_scaler(frame.slice(0, n_fit))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    transform(frame, scaler).to_csv(out / "scaled.csv")
    frame.to_csv(out / "aligned.csv")
    _write(out / "scaler.json", scaler.to_json() + "\n")
    _write(out / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"ingested {len(frame)} rows, {len(frame.columns)} columns -> {out}")
    return EXIT_OK


def cmd_run(cfg: RunConfig, args) -> int:
    frame = load_frame(cfg)
    client = _client(cfg, args)
    result = walk_forward(frame, cfg, client=client)
    out = Path(cfg.out)
    write_run(result, out)
    _write(out / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    r = result.report
    print(f"test steps {r.n}  MAE {r.mae:.6f}  RMSE {r.rmse:.6f}  CE {r.calibration_error:.4f} -> {out}")
    return EXIT_OK


def _parse_variants(text: str) -> list[str]:
    if text.strip() == "all":
        return list(VARIANTS)
    chosen = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in chosen if v not in VARIANTS]
    if bad or not chosen:
        raise UsageError(f"unknown variants {bad}; choose from {', '.join(VARIANTS)} or 'all'")
    return chosen


def cmd_ablate(cfg: RunConfig, args) -> int:
    variants = _parse_variants(args.variants)
    frame = load_frame(cfg)
    client = _client(cfg, args)
    prep = prepare(frame, cfg)
    out = Path(cfg.out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "mae", "rmse", "r_squared", "calibration_error", "meta_decision_quality"])
    for v in variants:
        result = walk_forward(frame, cfg, prep, v, client)
        write_run(result, out / "ablation" / v)
        r = result.report
        w.writerow([v, repr(r.mae), repr(r.rmse), "" if r.r_squared is None else repr(r.r_squared), repr(r.calibration_error), "" if r.meta_decision_quality is None else repr(r.meta_decision_quality)])
        print(f"{v:15s} MAE {r.mae:.6f}  RMSE {r.rmse:.6f}")
    _write(out / "ablation_summary.csv", buf.getvalue())
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated integers, got {args.values!r}") from None
    if not values:
        raise UsageError("--values is empty")
    frame = load_frame(cfg)
    rows = sensitivity_sweep(frame, args.axis, values, cfg)
    path = Path(cfg.out) / f"sweep_{args.axis}.csv"
    _write(path, sweep_table_csv(args.axis, rows))
    for v, r in rows:
        print(f"{args.axis}={v:<4d} MAE {r.mae:.6f}  RMSE {r.rmse:.6f}")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "run": cmd_run, "ablate": cmd_ablate, "sweep": cmd_sweep}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

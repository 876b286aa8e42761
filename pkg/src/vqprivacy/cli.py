"""Command line entry point: ``vqprivacy {gen-data,train,sweep,eval,report}``.

Exit codes: 0 success, 1 configuration error, 2 runtime or training error,
3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment as xp
from .config import ExperimentConfig, default_config, dump_config, parse_config
from .errors import ConfigError, FormatError, VQPrivacyError
from .synthdata import export_csv, generate
from .training import fit, load_model, save_model, write_curve_csv

log = logging.getLogger("vqprivacy")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out if args.out else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _formats(args) -> list[str]:
    return [args.format] if args.format else ["csv", "json"]


def _emit(report: xp.TradeoffReport, out: Path, args) -> None:
    for fmt in _formats(args):
        path = xp.emit_report(report, out / f"report.{fmt}", fmt)
        log.info("wrote %s", path)


def _print_table(report: xp.TradeoffReport) -> None:
    print(",".join(xp.REPORT_COLUMNS))
    for r in report.rows:
        print(",".join(xp.row_fields(r)))


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    ds = generate(cfg.data)
    for part in ("eval", "train"):
        sub = ds.subset(part)
        if sub.sequences:
            export_csv(sub, out / f"{part}.csv")
    (out / "config.cfg").write_text(dump_config(cfg))
    print(f"wrote corpus to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.no_vq and args.codebook_size is not None:
        raise ConfigError("--no-vq and --codebook-size are mutually exclusive")
    V = None if args.no_vq else (args.codebook_size or cfg.train.codebook_size)
    out = _out_dir(args, cfg)
    train, _, _ = xp.eval_split(cfg)
    model = fit(train, xp.train_config_for(cfg, V), cfg.encoder)
    label = xp.row_label(V)
    save_model(model, out / f"{label}.npz")
    write_curve_csv(model, out / f"{label}.curve.csv")
    last = model.curve[-1] if model.curve else None
    if last is not None:
        print(f"{label}: {len(model.curve)} epochs, final combined loss {last.combined_loss:.6g}")
    print(f"wrote {out / (label + '.npz')}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    report = xp.run_sweep(cfg, out, jobs=args.jobs)
    _emit(report, out, args)
    _print_table(report)
    aborted = [r.config_label for r in report.rows if r.aborted]
    if aborted:
        log.error("aborted rows: %s", ", ".join(aborted))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    model = load_model(args.model)
    out = _out_dir(args, cfg)
    raw = xp.evaluate_saved_model(cfg, model)
    xp.write_raw([raw], out / "raw", cfg)
    report = xp.TradeoffReport([xp.row_from_raw(raw, cfg.bootstrap_resamples, cfg.alpha)])
    _emit(report, out, args)
    _print_table(report)
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    raw_dir = run_dir / "raw"
    if not (raw_dir / "rows.json").is_file():
        raise FileNotFoundError(f"no raw results under {run_dir}")
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    report = xp.report_from_raw(raw_dir)
    _emit(report, out, args)
    _print_table(report)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vqprivacy", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="key = value config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory (default: output.dir)")

    def fmt(sp):
        sp.add_argument("--format", choices=("csv", "json"),
                        help="report format (default: both)")

    sp = sub.add_parser("gen-data", help="export the synthetic corpus as CSV")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train one model")
    common(sp)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--codebook-size", type=int, help="codebook size V")
    g.add_argument("--no-vq", action="store_true", help="train without quantization")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="baseline plus every codebook size, then the tradeoff report")
    common(sp, config_required=True)
    fmt(sp)
    sp.add_argument("--jobs", type=int, default=1, help="rows trained in parallel")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("eval", help="re-evaluate a saved model")
    common(sp)
    fmt(sp)
    sp.add_argument("--model", required=True, help="model .npz written by train or sweep")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="re-emit the report from a run's raw scores")
    sp.add_argument("run_dir", help="directory holding raw/")
    sp.add_argument("--out", help="where to write the report (default: run_dir)")
    fmt(sp)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, usage errors exit EXIT_CONFIG
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VQPrivacyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

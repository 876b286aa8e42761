"""Codebook-size sweep, tradeoff report, and the raw files a report is rebuilt from.

A sweep directory looks like::

    report.csv, report.json      the tradeoff table
    config.cfg                   the effective configuration
    raw/rows.json                per-row metadata (label, V, perplexity, status)
    raw/<label>.scores.csv       every verification trial score
    raw/<label>.utility.csv      per-utterance frame errors
    curves/<label>.csv           training curves
    models/<label>.npz           trained model snapshots

All metrics in the report are recomputed from ``raw/`` by the same code path,
so ``report`` re-emits byte-identical files.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import ExperimentConfig, dump_config
from .errors import ConfigError, FormatError, NumericError
from .numerics import RngStream
from .synthdata import Dataset, generate, split_enroll_test
from .training import TrainedModel, fit, represent, save_model, write_curve_csv
from .vq import codebook_perplexity

log = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "config_label", "codebook_size", "eer", "eer_ci_lo", "eer_ci_hi", "eer_groupA", "eer_groupB",
    "utility_err", "util_ci_lo", "util_ci_hi", "perplexity", "seed",
]
NO_VQ = "no_vq"


@dataclass
class ReportRow:
    config_label: str
    codebook_size: int | None
    eer: ev.MetricWithCI | None
    eer_groups: dict[str, float]
    utility: ev.MetricWithCI | None
    perplexity: float
    seed: int
    status: str = "ok"
    diagnostic: str = ""

    @property
    def aborted(self) -> bool:
        return self.status != "ok"


@dataclass
class TradeoffReport:
    rows: list[ReportRow] = field(default_factory=list)

    def row(self, label: str) -> ReportRow:
        for r in self.rows:
            if r.config_label == label:
                return r
        raise KeyError(label)


@dataclass
class RawRow:
    """Everything a report row is computed from."""

    label: str
    codebook_size: int | None
    seed: int
    perplexity: float
    scores: np.ndarray | None = None
    claimed: np.ndarray | None = None
    is_target: np.ndarray | None = None
    group: np.ndarray | None = None
    util_utterances: np.ndarray | None = None
    util_errors: np.ndarray | None = None
    util_frames: np.ndarray | None = None
    status: str = "ok"
    diagnostic: str = ""


def row_label(V: int | None) -> str:
    return NO_VQ if V is None else f"vq{V}"


def eval_split(cfg: ExperimentConfig, ds: Dataset | None = None):
    """Training set and (enroll, test) split of the evaluation speakers."""
    ds = ds if ds is not None else generate(cfg.data)
    train = ds.subset("train") if cfg.data.num_train_speakers > 0 else ds
    enroll, test = split_enroll_test(ds.subset("eval"), cfg.enroll_frames_per_speaker)
    return train, enroll, test


def train_config_for(cfg: ExperimentConfig, V: int | None):
    return replace(cfg.train, vq_enabled=V is not None, codebook_size=V if V is not None else 1)


def collect_raw(model: TrainedModel, enroll: Dataset, test: Dataset, V: int | None, seed: int) -> RawRow:
    ts = ev.build_trials(model, enroll, test)
    scores = ev.trial_scores(ts)
    errs, frames = ev.utility_counts(model, test.sequences)
    ppl = float("nan")
    if model.codebook is not None:
        idx = np.concatenate([represent(model, u)[2] for u in test.sequences])
        ppl = codebook_perplexity(idx, model.codebook.V)
    return RawRow(row_label(V), V, seed, ppl, scores, ts.claimed_speaker, ts.is_target, ts.group,
                  np.array([u.utterance_id for u in test.sequences]), errs, frames)


def row_from_raw(raw: RawRow, B: int, alpha: float) -> ReportRow:
    if raw.status != "ok":
        return ReportRow(raw.label, raw.codebook_size, None, {}, None, float("nan"), raw.seed,
                         raw.status, raw.diagnostic)
    # bootstrap streams depend only on (seed, row), never on sweep order
    key = 0 if raw.codebook_size is None else raw.codebook_size
    root = RngStream(raw.seed).child("evaluation")
    eer = ev.eer_with_ci(raw.scores, raw.is_target, B, alpha, root.child("eer-bootstrap", key))
    groups = ev.group_eers(raw.scores, raw.is_target, raw.group)
    util = ev.utility_error_with_ci(raw.util_errors, raw.util_frames, B, alpha,
                                    root.child("utility-bootstrap", key))
    return ReportRow(raw.label, raw.codebook_size, eer, groups, util, raw.perplexity, raw.seed)


def run_row(cfg: ExperimentConfig, V: int | None, out_dir: Path | None = None) -> RawRow:
    """Train and evaluate one configuration (``V=None`` is the no-VQ baseline)."""
    train, enroll, test = eval_split(cfg)
    tcfg = train_config_for(cfg, V)
    label = row_label(V)
    try:
        model = fit(train, tcfg, cfg.encoder)
    except NumericError as exc:
        log.error("%s: training diverged: %s", label, exc)
        return RawRow(label, V, cfg.seed, float("nan"), status="aborted", diagnostic=str(exc))
    if out_dir is not None:
        (out_dir / "models").mkdir(parents=True, exist_ok=True)
        (out_dir / "curves").mkdir(parents=True, exist_ok=True)
        save_model(model, out_dir / "models" / f"{label}.npz")
        write_curve_csv(model, out_dir / "curves" / f"{label}.csv")
    return collect_raw(model, enroll, test, V, cfg.seed)


def sweep_configurations(cfg: ExperimentConfig) -> list[int | None]:
    rows: list[int | None] = [None] if cfg.include_no_vq_baseline else []
    rows.extend(sorted(cfg.codebook_sizes))
    if not rows:
        raise ConfigError("empty sweep: no codebook sizes and no baseline")
    return rows


def _run_row_job(args):
    cfg, V, out_dir = args
    return run_row(cfg, V, out_dir)


def run_sweep(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> TradeoffReport:
    """Baseline first, then ascending V; rows may be computed in parallel."""
    configs = sweep_configurations(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    args = [(cfg, V, out) for V in configs]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raws = list(pool.map(_run_row_job, args))
    else:
        raws = [_run_row_job(a) for a in args]
    if out is not None:
        (out / "config.cfg").write_text(dump_config(cfg))
        write_raw(raws, out / "raw", cfg)
    return TradeoffReport([row_from_raw(r, cfg.bootstrap_resamples, cfg.alpha) for r in raws])


def write_raw(raws: list[RawRow], raw_dir: Path, cfg: ExperimentConfig) -> None:
    raw_dir.mkdir(parents=True, exist_ok=True)
    meta = {"bootstrap_resamples": cfg.bootstrap_resamples, "alpha": cfg.alpha, "rows": []}
    for r in raws:
        meta["rows"].append({"label": r.label, "codebook_size": r.codebook_size, "seed": r.seed,
                             "perplexity": None if math.isnan(r.perplexity) else r.perplexity,
                             "status": r.status, "diagnostic": r.diagnostic})
        if r.status != "ok":
            continue
        ev.write_scores_csv(raw_dir / f"{r.label}.scores.csv", r.scores, (r.claimed, r.is_target, r.group))
        with open(raw_dir / f"{r.label}.utility.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["utterance_id", "num_frames", "num_errors"])
            for u, n, e in zip(r.util_utterances, r.util_frames, r.util_errors):
                w.writerow([int(u), int(n), int(e)])
    (raw_dir / "rows.json").write_text(json.dumps(meta, indent=2) + "\n")


def read_raw(raw_dir) -> tuple[list[RawRow], int, float]:
    raw_dir = Path(raw_dir)
    try:
        meta = json.loads((raw_dir / "rows.json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{raw_dir / 'rows.json'}: {exc}") from None
    rows = []
    for m in meta["rows"]:
        ppl = float("nan") if m["perplexity"] is None else m["perplexity"]
        r = RawRow(m["label"], m["codebook_size"], m["seed"], ppl,
                   status=m["status"], diagnostic=m["diagnostic"])
        if r.status == "ok":
            r.scores, r.claimed, r.is_target, r.group = ev.read_scores_csv(raw_dir / f"{r.label}.scores.csv")
            with open(raw_dir / f"{r.label}.utility.csv", newline="") as fh:
                rd = csv.reader(fh)
                if next(rd, None) != ["utterance_id", "num_frames", "num_errors"]:
                    raise FormatError(f"{r.label}.utility.csv: unexpected header")
                body = [[int(x) for x in row] for row in rd]
            arr = np.array(body, dtype=np.int64).reshape(-1, 3)
            r.util_utterances, r.util_frames, r.util_errors = arr[:, 0], arr[:, 1], arr[:, 2]
        rows.append(r)
    return rows, meta["bootstrap_resamples"], meta["alpha"]


def report_from_raw(raw_dir) -> TradeoffReport:
    raws, B, alpha = read_raw(raw_dir)
    return TradeoffReport([row_from_raw(r, B, alpha) for r in raws])


def _num(v: float | None) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return f"{v:.6g}"


def row_fields(r: ReportRow) -> list[str]:
    label = r.config_label if not r.aborted else f"{r.config_label}:{r.status}"
    e, u = r.eer, r.utility
    return [
        label,
        "" if r.codebook_size is None else str(r.codebook_size),
        _num(e.value if e else None), _num(e.ci_low if e else None), _num(e.ci_high if e else None),
        _num(r.eer_groups.get("A")), _num(r.eer_groups.get("B")),
        _num(u.value if u else None), _num(u.ci_low if u else None), _num(u.ci_high if u else None),
        _num(r.perplexity), str(r.seed),
    ]


def report_records(report: TradeoffReport) -> list[dict]:
    """Rows as dicts with the CSV column names; numbers rounded as in the CSV."""
    recs = []
    for r in report.rows:
        rec = {}
        for col, s in zip(REPORT_COLUMNS, row_fields(r)):
            if col == "config_label":
                rec[col] = s
            elif s == "":
                rec[col] = None
            elif col in ("codebook_size", "seed"):
                rec[col] = int(s)
            else:
                rec[col] = float(s)
        if r.aborted:
            rec["diagnostic"] = r.diagnostic
        recs.append(rec)
    return recs


def emit_report(report: TradeoffReport, path, fmt: str = "csv") -> Path:
    if not report.rows:
        raise ValueError("report has no rows")
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in report.rows:
                w.writerow(row_fields(r))
    elif fmt == "json":
        doc = {"columns": REPORT_COLUMNS, "rows": report_records(report)}
        path.write_text(json.dumps(doc, indent=2) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def parse_report_csv(path) -> list[dict]:
    """Read ``report.csv`` back into the same records as :func:`report_records`."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != REPORT_COLUMNS:
            raise FormatError(f"{path}: unexpected report columns {header}")
        recs = []
        for row in rd:
            rec = {}
            for col, s in zip(REPORT_COLUMNS, row):
                if col == "config_label":
                    rec[col] = s
                elif s == "":
                    rec[col] = None
                elif col in ("codebook_size", "seed"):
                    rec[col] = int(s)
                else:
                    rec[col] = float(s)
            recs.append(rec)
    return recs


def evaluate_saved_model(cfg: ExperimentConfig, model: TrainedModel) -> RawRow:
    """Re-run the privacy and utility probes of a stored model on the configured corpus."""
    _, enroll, test = eval_split(cfg)
    V = model.codebook.V if model.codebook is not None else None
    return collect_raw(model, enroll, test, V, cfg.seed)

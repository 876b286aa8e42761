"""Privacy and utility probes.

Privacy is measured by a training-free speaker-verification attacker: every
utterance is mean-pooled and length-normalized, enrollment embeddings pool all
of a speaker's enrollment frames, and trials are scored by cosine similarity.
The equal error rate of those scores is the privacy metric (higher is more
private). Utility is the frame-level content classification error at the
bottleneck rate.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, EmptyInputError, FormatError, ProtocolError, ShapeError
from .numerics import RngStream, as_matrix
from .synthdata import Dataset
from .training import TrainedModel, bottleneck_labels, predict_content, represent

log = logging.getLogger(__name__)

CROSS_GROUP = "cross"


@dataclass(frozen=True)
class MetricWithCI:
    value: float
    ci_low: float
    ci_high: float
    num_resamples: int


@dataclass
class TrialSet:
    """Enrollment embeddings plus one trial per (test utterance, enrolled speaker).

    Trial ``n`` compares ``test_embeddings[test_index[n]]`` against
    ``enroll_embeddings[claimed_speaker[n]]``. ``group`` is the shared group of
    the two speakers, or ``"cross"`` when they differ.
    """

    enroll_embeddings: dict[int, np.ndarray]
    test_embeddings: np.ndarray
    test_utterances: np.ndarray
    test_index: np.ndarray
    claimed_speaker: np.ndarray
    is_target: np.ndarray
    group: np.ndarray

    def __len__(self) -> int:
        return self.test_index.size


def pool_embedding(b) -> np.ndarray:
    """Mean over frames, L2-normalized; an all-zero mean stays zero."""
    b = as_matrix(b, "frames")
    if b.shape[0] == 0:
        raise EmptyInputError("cannot pool an empty sequence")
    m = b.mean(axis=0)
    n = np.linalg.norm(m)
    return m / n if n > 0 else m


def build_trials(model: TrainedModel, enroll: Dataset, test: Dataset) -> TrialSet:
    enroll_ids = {u.utterance_id for u in enroll.sequences}
    if any(u.utterance_id in enroll_ids for u in test.sequences):
        raise ProtocolError("enrollment and test sets share utterances")
    frames: dict[int, list[np.ndarray]] = {}
    for u in enroll.sequences:
        frames.setdefault(u.speaker_id, []).append(represent(model, u)[1])
    enrolled = sorted(frames)
    emb = {k: pool_embedding(np.vstack(frames[k])) for k in enrolled}
    groups = {**enroll.speakers, **test.speakers}

    test_emb, test_utts, test_spk = [], [], []
    for u in test.sequences:
        if u.speaker_id not in emb:
            raise ProtocolError(f"speaker {u.speaker_id} has test data but no enrollment")
        test_emb.append(pool_embedding(represent(model, u)[1]))
        test_utts.append(u.utterance_id)
        test_spk.append(u.speaker_id)
    if not test_emb:
        raise EmptyInputError("no test utterances")

    n_test, n_spk = len(test_emb), len(enrolled)
    test_index = np.repeat(np.arange(n_test), n_spk)
    claimed = np.tile(np.array(enrolled), n_test)
    true_spk = np.repeat(np.array(test_spk), n_spk)
    g_true = np.array([groups[k].group for k in true_spk])
    g_claim = np.array([groups[k].group for k in claimed])
    group = np.where(g_true == g_claim, g_claim, CROSS_GROUP)
    return TrialSet(emb, np.vstack(test_emb), np.array(test_utts), test_index, claimed,
                    true_spk == claimed, group)


def trial_scores(ts: TrialSet) -> np.ndarray:
    """Cosine score of every trial, in trial order."""
    enrolled = sorted(ts.enroll_embeddings)
    E = np.vstack([ts.enroll_embeddings[k] for k in enrolled])
    pos = {k: i for i, k in enumerate(enrolled)}
    rows = np.array([pos[k] for k in ts.claimed_speaker])
    a = ts.test_embeddings[ts.test_index]
    b = E[rows]
    zero = (np.linalg.norm(a, axis=1) == 0) | (np.linalg.norm(b, axis=1) == 0)
    if zero.any():
        log.warning("%d trials involve a zero embedding; scored 0", int(zero.sum()))
    return np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)


def score_trials(ts: TrialSet):
    s = trial_scores(ts)
    return s[ts.is_target], s[~ts.is_target]


def compute_eer(target_scores, impostor_scores) -> float:
    """Equal error rate from a threshold sweep with linear interpolation.

    A trial is accepted when its score is ``>=`` the threshold. Thresholds run
    over the distinct pooled scores plus one above the maximum; the first
    operating point with FRR >= FAR and its predecessor bracket the crossing.
    """
    t = np.sort(np.asarray(target_scores, dtype=np.float64).ravel())
    i = np.sort(np.asarray(impostor_scores, dtype=np.float64).ravel())
    if t.size == 0 or i.size == 0:
        raise EmptyInputError("EER needs at least one target and one impostor score")
    thr = np.unique(np.concatenate([t, i]))
    frr = np.append(np.searchsorted(t, thr, side="left") / t.size, 1.0)
    far = np.append((i.size - np.searchsorted(i, thr, side="left")) / i.size, 0.0)
    d = frr - far
    k = int(np.argmax(d >= 0))
    if d[k] == 0:
        return float(frr[k])
    w = -d[k - 1] / (d[k] - d[k - 1])
    return float(frr[k - 1] + w * (frr[k] - frr[k - 1]))


def percentile(sorted_values: np.ndarray, p: float) -> float:
    """Linear-interpolation percentile of pre-sorted values, ``p`` in [0, 1]."""
    n = sorted_values.size
    h = (n - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, n - 1)
    return float(sorted_values[lo] + (h - lo) * (sorted_values[hi] - sorted_values[lo]))


def resample_indices(rng: RngStream, n: int, b: int) -> np.ndarray:
    """Indices of bootstrap resample ``b``; each resample has its own child stream."""
    return rng.child("bootstrap", b).integers(n, n)


def bootstrap_ci(n_units: int, metric: Callable[[np.ndarray], float], B: int = 1000,
                 alpha: float = 0.05, rng: RngStream | None = None) -> MetricWithCI:
    """Percentile bootstrap over ``n_units`` resampling units.

    ``metric`` maps an index array over the units to a value; the point value
    uses every unit once. The interval is widened, if needed, to contain the
    point value.
    """
    if B < 1:
        raise ConfigError("bootstrap needs B >= 1")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if n_units < 1:
        raise EmptyInputError("bootstrap needs a non-empty sample")
    rng = rng if rng is not None else RngStream(0)
    value = float(metric(np.arange(n_units)))
    stats = np.sort(np.array([metric(resample_indices(rng, n_units, b)) for b in range(B)]))
    lo = percentile(stats, alpha / 2)
    hi = percentile(stats, 1 - alpha / 2)
    return MetricWithCI(value, min(lo, value), max(hi, value), B)


def eer_with_ci(scores: np.ndarray, is_target: np.ndarray, B: int = 1000, alpha: float = 0.05,
                rng: RngStream | None = None) -> MetricWithCI:
    """EER with a trial-level bootstrap interval."""
    scores = np.asarray(scores, dtype=np.float64)
    is_target = np.asarray(is_target, dtype=bool)

    def metric(idx):
        s, y = scores[idx], is_target[idx]
        return compute_eer(s[y], s[~y])

    return bootstrap_ci(scores.size, metric, B, alpha, rng)


def utility_counts(model: TrainedModel, seqs) -> tuple[np.ndarray, np.ndarray]:
    """Per-utterance (misclassified frames, frames) at the bottleneck rate."""
    errs, n = [], []
    for u in seqs:
        pred = predict_content(model, u)
        y = bottleneck_labels(u.content_labels, model.encoder_cfg)
        if pred.shape != y.shape:
            raise ShapeError("prediction and label lengths differ")
        errs.append(int(np.count_nonzero(pred != y)))
        n.append(y.size)
    return np.array(errs, dtype=np.int64), np.array(n, dtype=np.int64)


def utility_error(model: TrainedModel, seqs) -> float:
    errs, n = utility_counts(model, seqs)
    return float(errs.sum() / n.sum())


def utility_error_with_ci(errors: np.ndarray, frames: np.ndarray, B: int = 1000,
                          alpha: float = 0.05, rng: RngStream | None = None) -> MetricWithCI:
    """Frame error rate with an utterance-level bootstrap interval."""
    errors = np.asarray(errors)
    frames = np.asarray(frames)
    return bootstrap_ci(errors.size, lambda idx: errors[idx].sum() / frames[idx].sum(),
                        B, alpha, rng)


def group_eers(scores: np.ndarray, is_target: np.ndarray, group: np.ndarray,
               groups=("A", "B")) -> dict[str, float]:
    """EER over same-group trials of each group; NaN when a group lacks a trial kind."""
    out = {}
    for g in groups:
        m = group == g
        t, i = scores[m & is_target], scores[m & ~is_target]
        out[g] = compute_eer(t, i) if t.size and i.size else float("nan")
    return out


def write_scores_csv(path, scores: np.ndarray, ts_or_fields) -> None:
    """Score file: trial_id, claimed_speaker, is_target, group, score.

    ``ts_or_fields`` is a :class:`TrialSet` or a ``(claimed, is_target, group)``
    triple. Scores are written with full precision.
    """
    if isinstance(ts_or_fields, TrialSet):
        claimed, target, group = ts_or_fields.claimed_speaker, ts_or_fields.is_target, ts_or_fields.group
    else:
        claimed, target, group = ts_or_fields
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "claimed_speaker", "is_target", "group", "score"])
        for n in range(len(scores)):
            w.writerow([n, int(claimed[n]), int(bool(target[n])), group[n], repr(float(scores[n]))])


def read_scores_csv(path):
    """Inverse of :func:`write_scores_csv`: ``(scores, claimed, is_target, group)``."""
    scores, claimed, target, group = [], [], [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r, None) != ["trial_id", "claimed_speaker", "is_target", "group", "score"]:
            raise FormatError(f"{path}: not a score file")
        for n, row in enumerate(r):
            if int(row[0]) != n:
                raise FormatError(f"{path}: trial ids out of order at line {n + 2}")
            claimed.append(int(row[1]))
            target.append(row[2] == "1")
            group.append(row[3])
            scores.append(float(row[4]))
    return (np.array(scores), np.array(claimed, dtype=np.int64), np.array(target, dtype=bool),
            np.array(group))

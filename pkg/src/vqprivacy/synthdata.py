"""Deterministic synthetic corpus with independent content and speaker factors.

Frame ``t`` of an utterance by speaker ``k`` is::

    x_t = content[c_t] + speaker_strength * speaker[k] + noise_sigma * n_t

with ``content`` (P x F) and ``speaker`` (S x F) drawn once per corpus. Content
labels come in runs of geometric length (mean 3), each run's label drawn
uniformly from the classes other than the previous run's, so the label
marginal is uniform and identical for every speaker.

Two disjoint speaker populations are generated: ``train`` speakers for fitting
the encoder and ``eval`` speakers for the verification protocol. Within each
population the first half of the speakers is tagged group ``A``, the rest ``B``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BudgetError, ConfigError, FormatError
from .numerics import RngStream

MEAN_RUN_LENGTH = 3.0


@dataclass(frozen=True)
class DatasetSpec:
    num_speakers: int = 40
    num_content_classes: int = 20
    feature_dim: int = 24
    utterances_per_speaker: int = 10
    frames_per_utterance: int = 120
    speaker_strength: float = 1.0
    noise_sigma: float = 0.5
    seed: int = 0
    # 0 trains on the evaluation speakers themselves
    num_train_speakers: int = 40

    def __post_init__(self):
        for name in ("num_speakers", "num_content_classes", "feature_dim",
                     "utterances_per_speaker", "frames_per_utterance"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_train_speakers < 0:
            raise ConfigError("num_train_speakers must be >= 0")
        if self.speaker_strength < 0 or self.noise_sigma < 0:
            raise ConfigError("speaker_strength and noise_sigma must be >= 0")
        if self.num_content_classes < 2:
            raise ConfigError("num_content_classes must be >= 2")


@dataclass(frozen=True)
class Speaker:
    speaker_id: int
    group: str
    partition: str


@dataclass
class FrameSequence:
    features: np.ndarray
    content_labels: np.ndarray
    speaker_id: int
    utterance_id: int

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class Dataset:
    sequences: list[FrameSequence]
    speakers: dict[int, Speaker]
    content_matrix: np.ndarray | None = field(default=None, repr=False)
    speaker_matrix: np.ndarray | None = field(default=None, repr=False)

    def subset(self, partition: str) -> "Dataset":
        keep = {k: s for k, s in self.speakers.items() if s.partition == partition}
        return Dataset([u for u in self.sequences if u.speaker_id in keep], keep,
                       self.content_matrix, self.speaker_matrix)

    def by_speaker(self) -> dict[int, list[FrameSequence]]:
        out: dict[int, list[FrameSequence]] = {k: [] for k in sorted(self.speakers)}
        for u in self.sequences:
            out[u.speaker_id].append(u)
        return out

    def __len__(self) -> int:
        return len(self.sequences)


def _content_runs(rng: RngStream, T: int, P: int) -> np.ndarray:
    labels = np.empty(T, dtype=np.int64)
    lengths = np.ceil(np.log(1.0 - rng.uniform(T)) / np.log(1.0 - 1.0 / MEAN_RUN_LENGTH))
    picks = rng.integers(P - 1, T)
    t, prev, r = 0, -1, 0
    while t < T:
        n = max(1, int(lengths[r]))
        c = int(picks[r])
        if prev >= 0 and c >= prev:
            c += 1  # skip the previous label
        labels[t:t + n] = c
        t += n
        prev = c
        r += 1
    return labels


def generate(spec: DatasetSpec) -> Dataset:
    root = RngStream(spec.seed).child("synthdata")
    P, F = spec.num_content_classes, spec.feature_dim
    n_eval, n_train = spec.num_speakers, spec.num_train_speakers
    content = root.child("content-matrix").normal_matrix(P, F)
    speaker_mat = root.child("speaker-offsets").normal_matrix(n_eval + n_train, F)

    speakers: dict[int, Speaker] = {}
    for k in range(n_eval):
        speakers[k] = Speaker(k, "A" if k < (n_eval + 1) // 2 else "B", "eval")
    for k in range(n_train):
        speakers[n_eval + k] = Speaker(n_eval + k, "A" if k < (n_train + 1) // 2 else "B", "train")

    T = spec.frames_per_utterance
    seqs = []
    uid = 0
    for k in sorted(speakers):
        for _ in range(spec.utterances_per_speaker):
            r = root.child("utterance", uid)
            labels = _content_runs(r, T, P)
            x = content[labels] + spec.speaker_strength * speaker_mat[k]
            if spec.noise_sigma > 0:
                x = x + spec.noise_sigma * r.normal_matrix(T, F)
            seqs.append(FrameSequence(x, labels, k, uid))
            uid += 1
    return Dataset(seqs, speakers, content, speaker_mat)


def split_enroll_test(ds: Dataset, enroll_frames_per_speaker: int):
    """Per speaker, take whole utterances in order until the frame budget is met.

    Returns ``(enroll, test)`` datasets sharing the speaker roster.
    """
    if enroll_frames_per_speaker < 1:
        raise BudgetError("enrollment budget must be >= 1 frame")
    enroll, test = [], []
    for k, utts in ds.by_speaker().items():
        total = sum(u.num_frames for u in utts)
        if total <= enroll_frames_per_speaker:
            raise BudgetError(
                f"speaker {k} has {total} frames, not more than the budget {enroll_frames_per_speaker}")
        taken = 0
        i = 0
        while taken < enroll_frames_per_speaker:
            enroll.append(utts[i])
            taken += utts[i].num_frames
            i += 1
        if i == len(utts):
            raise BudgetError(f"speaker {k} has no utterances left for testing")
        test.extend(utts[i:])
    return (Dataset(enroll, dict(ds.speakers), ds.content_matrix, ds.speaker_matrix),
            Dataset(test, dict(ds.speakers), ds.content_matrix, ds.speaker_matrix))


def export_csv(ds: Dataset, path) -> None:
    F = ds.sequences[0].features.shape[1] if ds.sequences else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["utterance_id", "speaker_id", "group", "frame_index", "content_label"]
                   + [f"f{i}" for i in range(F)])
        for u in ds.sequences:
            group = ds.speakers[u.speaker_id].group
            for t in range(u.num_frames):
                w.writerow([u.utterance_id, u.speaker_id, group, t, int(u.content_labels[t])]
                           + [repr(float(v)) for v in u.features[t]])


def import_csv(path, partition: str = "eval") -> Dataset:
    """Read a corpus written by :func:`export_csv`; every speaker gets ``partition``."""
    rows_by_utt: dict[int, list] = {}
    speakers: dict[int, Speaker] = {}
    owner: dict[int, int] = {}
    with open(Path(path), newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or header[:5] != ["utterance_id", "speaker_id", "group",
                                            "frame_index", "content_label"]:
            raise FormatError(f"{path}: not a corpus export")
        for row in r:
            uid, spk, grp, t = int(row[0]), int(row[1]), row[2], int(row[3])
            speakers.setdefault(spk, Speaker(spk, grp, partition))
            owner[uid] = spk
            rows = rows_by_utt.setdefault(uid, [])
            if t != len(rows):
                raise FormatError(f"{path}: frames of utterance {uid} out of order")
            rows.append((int(row[4]), [float(v) for v in row[5:]]))
    seqs = []
    for uid, rows in rows_by_utt.items():
        labels = np.array([lab for lab, _ in rows], dtype=np.int64)
        feats = np.array([f for _, f in rows], dtype=np.float64)
        seqs.append(FrameSequence(feats, labels, owner[uid], uid))
    return Dataset(seqs, speakers)

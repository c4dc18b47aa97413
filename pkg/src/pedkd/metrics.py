"""Open-vocabulary decoding and scoring: threshold decoding, threshold tuning,
top-k precision/recall/F1 and uni-gram BLEU over label sets."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

THRESHOLD_GRID = tuple(round(0.01 * i, 2) for i in range(1, 100))


@dataclass(frozen=True)
class DecodedLabels:
    labels: tuple[str, ...]
    threshold: float

    def __len__(self) -> int:
        return len(self.labels)


def decode_labels(probs, threshold: float, vocab_labels: Sequence[str] | None = None) -> DecodedLabels:
    """Labels with probability >= threshold, most probable first (ties by index)."""
    probs = np.asarray(probs, dtype=float)
    names = list(vocab_labels) if vocab_labels is not None else [str(i) for i in range(len(probs))]
    order = sorted((i for i in range(len(probs)) if probs[i] >= threshold), key=lambda i: (-probs[i], i))
    return DecodedLabels(tuple(names[i] for i in order), float(threshold))


def tune_threshold(prob_sets, references: Sequence[Iterable], grid: Sequence[float] = THRESHOLD_GRID) -> float:
    """Grid threshold whose mean decoded length is closest to the mean reference length.

    Ties go to the smaller threshold.
    """
    probs = np.asarray(prob_sets, dtype=float)
    if probs.size == 0 or len(references) == 0:
        raise ValueError("tune_threshold needs a nonempty evaluation set")
    target = float(np.mean([len(set(r)) for r in references]))
    best, best_gap = None, math.inf
    for th in grid:
        gap = abs(float((probs >= th).sum(axis=1).mean()) - target)
        if gap < best_gap - 1e-12:
            best, best_gap = th, gap
    return float(best)


def mean_decoded_length(prob_sets, threshold: float) -> float:
    return float((np.asarray(prob_sets) >= threshold).sum(axis=1).mean())


def topk_indices(scores, k: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if k < 1 or k > scores.shape[-1]:
        raise ValueError(f"k must lie in [1, C={scores.shape[-1]}]")
    # stable sort on -score keeps the lower index first on ties
    return np.argsort(-scores, kind="stable")[:k]


def topk_prf(scores, truth, k: int) -> tuple[float, float, float]:
    """Per-sample top-k precision, recall, F1. ``truth`` must be nonempty."""
    truth = np.asarray(truth) > 0.5
    n_true = int(truth.sum())
    if n_true == 0:
        raise ValueError("truth label set is empty; recall is undefined")
    hits = int(truth[topk_indices(scores, k)].sum())
    p, r = hits / k, hits / n_true
    return p, r, harmonic(p, r)


def harmonic(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def unigram_bleu(candidates: Sequence, references: Sequence) -> float:
    """Corpus-level BLEU-1; each label (phrases included) is one unit."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    matches = c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        cand = list(cand.labels if isinstance(cand, DecodedLabels) else cand)
        ref_counts = Counter(ref)
        cand_counts = Counter(cand)
        matches += sum(min(n, ref_counts[w]) for w, n in cand_counts.items())
        c_len += len(cand)
        r_len += sum(ref_counts.values())
    if c_len == 0:
        return 0.0
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return bp * matches / c_len


@dataclass
class MetricsReport:
    prf: dict[int, tuple[float, float, float]]
    bleu: float
    n_samples: int
    n_skipped: int
    threshold: float
    extra: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for k, (p, r, f) in sorted(self.prf.items()):
            out[f"top{k}_precision"] = p
            out[f"top{k}_recall"] = r
            out[f"top{k}_f1"] = f
        out["bleu"] = self.bleu
        out["threshold"] = self.threshold
        out["n_samples"] = self.n_samples
        out["n_skipped"] = self.n_skipped
        out.update(self.extra)
        return out

    def to_kv(self) -> str:
        return format_kv(self.as_dict())

    def to_table(self, sep: str = "\t") -> str:
        lines = [sep.join(("k", "precision", "recall", "f1"))]
        for k, (p, r, f) in sorted(self.prf.items()):
            lines.append(sep.join((str(k), _fmt(p), _fmt(r), _fmt(f))))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def format_kv(values: dict) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in values.items())


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k] = v
    return out


def evaluate(probs, truth, vocab_labels: Sequence[str], threshold: float,
             ks: Sequence[int] = (1, 3, 5)) -> MetricsReport:
    """Macro-averaged top-k P/R over samples with nonempty truth, plus corpus BLEU-1."""
    probs = np.asarray(probs, dtype=float)
    truth = np.asarray(truth) > 0.5
    keep = truth.any(axis=1)
    ks = [k for k in ks if k <= probs.shape[1]]
    prf = {}
    for k in ks:
        rows = [topk_prf(probs[i], truth[i], k) for i in np.flatnonzero(keep)]
        p = float(np.mean([r[0] for r in rows])) if rows else 0.0
        r = float(np.mean([r[1] for r in rows])) if rows else 0.0
        prf[k] = (p, r, harmonic(p, r))
    labels = list(vocab_labels)
    cands = [decode_labels(probs[i], threshold, labels) for i in range(len(probs))]
    refs = [[labels[j] for j in np.flatnonzero(truth[i])] for i in range(len(probs))]
    return MetricsReport(prf, unigram_bleu(cands, refs), int(keep.sum()), int((~keep).sum()), float(threshold))

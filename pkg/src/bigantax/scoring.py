"""Reconstruction scoring and the quartile/IQR outlier gate."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .bigan import BiGanModel, row_cosine
from .errors import DataError, ShapeError
from .nn_core import as_matrix

IQR_FACTOR = 1.5


def score(model: BiGanModel, data) -> np.ndarray:
    """Cosine similarity between each row and its regeneration ``G(E(x))``."""
    x = as_matrix(data)
    if x.shape[1] != model.data_dim:
        raise ShapeError(f"model expects {model.data_dim} features, data has {x.shape[1]}")
    return row_cosine(x, model.reconstruct(x))


def quantile(values: Sequence[float], q: float) -> float:
    """Quantile by linear interpolation at position ``q * (n - 1)`` of the sorted values."""
    if not 0.0 <= q <= 1.0:
        raise DataError(f"q must lie in [0, 1], got {q}")
    v = sorted(float(x) for x in values)
    if not v:
        raise DataError("quantile of an empty list")
    pos = q * (len(v) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(v) - 1)
    frac = pos - lo
    if frac == 0.0:
        return v[lo]
    return v[lo] + (v[hi] - v[lo]) * frac


@dataclass
class ScoreReport:
    ids: list[str]
    scores: np.ndarray
    ranks: np.ndarray
    q1: float
    q3: float
    iqr: float
    threshold: float
    flagged: list[str]

    @property
    def flagged_mask(self) -> np.ndarray:
        return self.scores < self.threshold

    def summary(self) -> dict:
        return {
            "Q1": self.q1,
            "Q3": self.q3,
            "IQR": self.iqr,
            "threshold": self.threshold,
            "flagged_count": len(self.flagged),
            "total_count": len(self.ids),
        }

    def write_csv(self, path: str | Path) -> None:
        order = np.argsort(self.ranks, kind="stable")
        mask = self.flagged_mask
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("taxpayer_id", "score", "rank", "flagged"))
            for i in order:
                w.writerow((self.ids[i], repr(float(self.scores[i])), int(self.ranks[i]),
                            "true" if mask[i] else "false"))

    def write_summary(self, path: str | Path, extra: dict | None = None) -> None:
        doc = self.summary()
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def iqr_gate(scores: Sequence[float], ids: Sequence[str] | None = None) -> ScoreReport:
    """Flag scores strictly below ``Q1 - 1.5 * IQR`` and rank ascending.

    Rank 1 is the lowest (most anomalous) score; ties are broken by taxpayer id.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size < 4:
        raise DataError(f"iqr_gate needs at least 4 scores, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise DataError("scores must be finite")
    ids = [str(i) for i in range(s.size)] if ids is None else [str(i) for i in ids]
    if len(ids) != s.size:
        raise ShapeError("ids and scores differ in length")
    q1 = quantile(s, 0.25)
    q3 = quantile(s, 0.75)
    iqr = q3 - q1
    threshold = q1 - IQR_FACTOR * iqr
    order = sorted(range(s.size), key=lambda i: (s[i], ids[i]))
    ranks = np.empty(s.size, dtype=np.int64)
    ranks[order] = np.arange(1, s.size + 1)
    flagged = [ids[i] for i in order if s[i] < threshold]
    return ScoreReport(ids, s, ranks, q1, q3, iqr, threshold, flagged)


def roc_auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Area under the ROC curve for ``scores`` ranking positives high (ties count 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC-AUC needs both positive and negative labels")
    # Mann-Whitney U with average ranks for ties
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(s.size)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))

"""Prediction-entropy scoring and informative/redundant selection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .stats import CIComparison, compare_ci

INFORMATIVE, REDUNDANT = "informative", "redundant"


def _check_probs(p: np.ndarray):
    if p.shape[-1] < 2:
        raise ValueError("probability vectors need at least two entries")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("probabilities must sum to 1")


def prediction_entropy(p) -> float | np.ndarray:
    """Shannon entropy in nats, with 0 ln 0 taken as 0.

    Accepts one probability vector or a stack of them along the last axis.
    """
    p = np.asarray(p, dtype=np.float64)
    _check_probs(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    h = terms.sum(axis=-1)
    h = np.clip(h, 0.0, math.log(p.shape[-1]))
    return float(h) if h.ndim == 0 else h


@dataclass(frozen=True, eq=False)
class EntropyScoreTable:
    """Rows in rank order: rank 1 is the most uncertain sample."""

    sample_id: np.ndarray
    entropy: np.ndarray
    rank: np.ndarray
    informative: np.ndarray

    def __len__(self):
        return len(self.sample_id)

    def __eq__(self, other):
        return isinstance(other, EntropyScoreTable) and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("sample_id", "entropy", "rank", "informative")
        )

    def flagged(self, m: int) -> EntropyScoreTable:
        return EntropyScoreTable(self.sample_id, self.entropy, self.rank, self.rank <= m)

    def subset_entropies(self, subset: str) -> np.ndarray:
        if subset == "all":
            return self.entropy
        if subset == INFORMATIVE:
            return self.entropy[self.informative]
        if subset == REDUNDANT:
            return self.entropy[~self.informative]
        raise ValueError(f"unknown subset {subset!r}")


def build_score_table(sample_ids, entropies) -> EntropyScoreTable:
    """Rank by descending entropy, ties by ascending sample id."""
    sid = np.asarray(sample_ids, dtype=np.int64)
    ent = np.asarray(entropies, dtype=np.float64)
    if len(sid) == 0:
        raise ValueError("cannot score an empty sample set")
    order = np.lexsort((sid, -ent))
    return EntropyScoreTable(
        sample_id=sid[order],
        entropy=ent[order],
        rank=np.arange(1, len(sid) + 1),
        informative=np.zeros(len(sid), dtype=bool),
    )


def score_training_set(model, dataset, train_ids) -> EntropyScoreTable:
    ids = np.asarray(train_ids, dtype=np.int64)
    if len(ids) == 0:
        raise ValueError("cannot score an empty sample set")
    probs = model.predict_proba(dataset.features[dataset.index_of(ids)])
    return build_score_table(ids, prediction_entropy(probs))


def selected_count(proportion: float, n: int) -> int:
    """``round(proportion * n)`` with halves rounded away from zero."""
    if proportion <= 0 or proportion > 1:
        raise ValueError("proportion must lie in (0, 1]")
    return int(math.floor(proportion * n + 0.5))


def select_informative(table: EntropyScoreTable, proportion: float):
    """Split the table's ids into the top-ranked share and the rest.

    Both id arrays come back sorted by sample id; the third element is the
    table with informative flags set.
    """
    m = selected_count(proportion, len(table))
    informative = np.sort(table.sample_id[:m])
    redundant = np.sort(table.sample_id[m:])
    return informative, redundant, table.flagged(m)


def entropy_histogram(table: EntropyScoreTable, n_bins: int, subset: str = "all"):
    """Histogram over ``[0, ln 2]`` with counts normalized to sum to one."""
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    values = table.subset_entropies(subset)
    if len(values) == 0:
        raise ValueError(f"subset {subset!r} is empty")
    counts, edges = np.histogram(values, bins=n_bins, range=(0.0, math.log(2)))
    return edges, counts / counts.sum()


def entropy_gap_test(table: EntropyScoreTable) -> CIComparison:
    """Mean entropy of informative vs redundant samples.

    Normal-approximation 95% intervals on each mean feed the CI-based Z test,
    with the redundant subset as the first value, so a positive Z means the
    informative subset is more uncertain.
    """
    inf = table.subset_entropies(INFORMATIVE)
    red = table.subset_entropies(REDUNDANT)
    if len(inf) == 0 or len(red) == 0:
        raise ValueError("both subsets must be non-empty")

    def mean_ci(v):
        mu = float(np.mean(v))
        half = 1.96 * float(np.std(v, ddof=1)) / math.sqrt(len(v)) if len(v) > 1 else 0.0
        return mu, (mu - half, mu + half)

    m_red, ci_red = mean_ci(red)
    m_inf, ci_inf = mean_ci(inf)
    return compare_ci(m_red, ci_red, m_inf, ci_inf)


def save_score_table(table: EntropyScoreTable, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "entropy", "rank", "flag"])
        for sid, h, r, f in zip(table.sample_id, table.entropy, table.rank, table.informative):
            w.writerow([int(sid), format(h, ".17g"), int(r), INFORMATIVE if f else REDUNDANT])


def load_score_table(path) -> EntropyScoreTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return EntropyScoreTable(
        np.array([int(r["sample_id"]) for r in rows], dtype=np.int64),
        np.array([float(r["entropy"]) for r in rows]),
        np.array([int(r["rank"]) for r in rows], dtype=np.int64),
        np.array([r["flag"] == INFORMATIVE for r in rows]),
    )


def save_histograms(table: EntropyScoreTable, n_bins: int, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "normalized_count", "subset"])
        for subset in (INFORMATIVE, REDUNDANT):
            edges, norm = entropy_histogram(table, n_bins, subset)
            for lo, hi, c in zip(edges[:-1], edges[1:], norm):
                w.writerow([format(lo, ".17g"), format(hi, ".17g"), format(c, ".17g"), subset])

"""Thresholding, binary classification metrics, exact binomial intervals and
the confidence-interval based Z test."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import gammaln

Z_95 = 1.96


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp


def confusion_at_threshold(probs_positive, labels, threshold: float) -> ConfusionMatrix:
    """Tally predictions, calling a sample positive iff its probability >= threshold."""
    p = np.asarray(probs_positive, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} probabilities vs {y.shape} labels")
    pred = p >= threshold
    pos = y == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn)


def specificity(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tn, cm.tn + cm.fp)


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    return (recall(cm) + specificity(cm)) / 2


def f_score_from(prec: float, rec: float) -> float:
    return _ratio(2 * prec * rec, prec + rec)


def f_score(cm: ConfusionMatrix) -> float:
    return f_score_from(precision(cm), recall(cm))


def mcc(cm: ConfusionMatrix) -> float:
    den = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    return _ratio(cm.tp * cm.tn - cm.fp * cm.fn, math.sqrt(den))


@dataclass(frozen=True)
class MetricReport:
    balanced_accuracy: float
    precision: float
    recall: float
    specificity: float
    f_score: float
    mcc: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    degenerate: tuple[str, ...] = ()

    @property
    def confusion(self) -> ConfusionMatrix:
        return ConfusionMatrix(self.tp, self.fp, self.tn, self.fn)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degenerate"] = list(self.degenerate)
        return d


def metric_report(cm: ConfusionMatrix, threshold: float) -> MetricReport:
    """All six metrics; metrics with a zero denominator are 0 and listed in ``degenerate``."""
    flags = []
    if cm.tp + cm.fp == 0:
        flags.append("precision")
    if cm.positives == 0:
        flags.append("recall")
    if cm.negatives == 0:
        flags.append("specificity")
    if precision(cm) + recall(cm) == 0:
        flags.append("f_score")
    if (cm.tp + cm.fp) * cm.positives * cm.negatives * (cm.tn + cm.fn) == 0:
        flags.append("mcc")
    return MetricReport(
        balanced_accuracy=balanced_accuracy(cm),
        precision=precision(cm),
        recall=recall(cm),
        specificity=specificity(cm),
        f_score=f_score(cm),
        mcc=mcc(cm),
        threshold=float(threshold),
        tp=cm.tp, fp=cm.fp, tn=cm.tn, fn=cm.fn,
        degenerate=tuple(flags),
    )


def threshold_candidates(probs) -> np.ndarray:
    return np.unique(np.concatenate([np.asarray(probs, dtype=np.float64), [0.0, 1.0]]))


def select_threshold_max_f(probs_positive, labels) -> float:
    """Smallest candidate threshold attaining the maximal F-score.

    Candidates are every distinct predicted probability plus 0 and 1.
    """
    p = np.asarray(probs_positive, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError("length mismatch between probabilities and labels")
    if len(np.unique(y)) < 2:
        raise ValueError("validation set must contain both classes")
    cand = threshold_candidates(p)
    pos_sorted = np.sort(p[y == 1])
    neg_sorted = np.sort(p[y != 1])
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, cand, side="left")
    fp = len(neg_sorted) - np.searchsorted(neg_sorted, cand, side="left")
    fn = len(pos_sorted) - tp
    f = np.array([f_score(ConfusionMatrix(int(a), int(b), 0, int(c))) for a, b, c in zip(tp, fp, fn)])
    return float(cand[int(np.argmax(f))])


# -- exact binomial interval ---------------------------------------------------

def _log_pmf(n: int, p: float) -> np.ndarray:
    i = np.arange(n + 1)
    log_coef = gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
    return log_coef + i * math.log(p) + (n - i) * math.log1p(-p)


def _log_tail(n: int, p: float, k: int, upper: bool) -> float:
    lp = _log_pmf(n, p)
    part = lp[k:] if upper else lp[: k + 1]
    mx = part.max()
    return float(mx + math.log(np.exp(part - mx).sum()))


def _bisect(fn, tol=1e-10) -> float:
    """Root of a function increasing on (0, 1)."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fn(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(k: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    """Exact two-sided interval for a binomial proportion.

    The bounds invert the binomial tails: the lower bound is where
    P(X >= k) reaches alpha/2, the upper bound where P(X <= k) does.
    """
    if n < 1 or k < 0 or k > n:
        raise ValueError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    target = math.log(alpha / 2)
    lower = 0.0 if k == 0 else _bisect(lambda p: _log_tail(n, p, k, True) - target)
    upper = 1.0 if k == n else _bisect(lambda p: target - _log_tail(n, p, k, False))
    return lower, upper


# -- CI-based Z test -----------------------------------------------------------

def normal_sf2(z: float) -> float:
    """Two-sided normal tail probability ``2 (1 - Phi(|z|))``."""
    return math.erfc(abs(z) / math.sqrt(2.0))


@dataclass(frozen=True)
class CIComparison:
    value1: float
    ci1: tuple[float, float]
    value2: float
    ci2: tuple[float, float]
    se1: float
    se2: float
    delta: float
    delta_se: float
    z: float
    p: float
    significant: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci1"], d["ci2"] = list(self.ci1), list(self.ci2)
        return d


RecallComparison = CIComparison


def standard_error_from_ci(lower: float, upper: float) -> float:
    return (upper - lower) / (2 * Z_95)


def compare_ci(value1, ci1, value2, ci2, alpha: float = 0.05) -> CIComparison:
    """Z test on ``value2 - value1`` with standard errors recovered from 95% CI widths."""
    for v, (lo, hi) in ((value1, ci1), (value2, ci2)):
        if not lo <= v <= hi:
            raise ValueError(f"value {v} lies outside its interval ({lo}, {hi})")
    se1 = standard_error_from_ci(*ci1)
    se2 = standard_error_from_ci(*ci2)
    delta = value2 - value1
    delta_se = math.sqrt(se1**2 + se2**2)
    if delta_se == 0:
        raise ValueError("Z is undefined when both intervals have zero width")
    z = delta / delta_se
    p = normal_sf2(z)
    return CIComparison(float(value1), (float(ci1[0]), float(ci1[1])), float(value2),
                        (float(ci2[0]), float(ci2[1])), se1, se2, delta, delta_se, z, p, p < alpha)


def compare_recall(recall1, ci1, recall2, ci2) -> CIComparison:
    return compare_ci(recall1, ci1, recall2, ci2)


def recall_with_ci(cm: ConfusionMatrix, alpha: float = 0.05) -> tuple[float, tuple[float, float]]:
    if cm.positives == 0:
        raise ValueError("recall interval needs at least one positive sample")
    return recall(cm), clopper_pearson(cm.tp, cm.positives, alpha)

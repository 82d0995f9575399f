"""Evaluation stack: any-overlap detection PR, IoU>0.5 matching, per-class
metrics, parent-class bounded PPV/NPV, and the Friedman test.

Undefined ratios (zero denominators) surface as NaN with the offending
counts preserved, never as silent zeros.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_PARENT_MAP = {
    "helper_t": "lymphocyte",
    "enterocyte": "epithelial",
    "progenitor": "epithelial",
    "fibroblast": "connective",
    "stromal_undetermined": "connective",
}


class MetricsError(Exception):
    pass


def _ratio(num: int, den: int) -> float:
    return num / den if den else float("nan")


# ---------------------------------------------------------------------------
# overlap bookkeeping


def _overlap_table(pred: np.ndarray, truth: np.ndarray):
    """Pixel counts for every (pred id, truth id) co-occurrence, incl. background."""
    if pred.shape != truth.shape:
        raise MetricsError(f"map dimensions differ: {pred.shape} vs {truth.shape}")
    p = pred.ravel().astype(np.int64)
    t = truth.ravel().astype(np.int64)
    key = p * (t.max() + 1) + t
    uniq, counts = np.unique(key, return_counts=True)
    pk = uniq // (t.max() + 1)
    tk = uniq % (t.max() + 1)
    return pk, tk, counts


def detection_pr(pred: np.ndarray, truth: np.ndarray) -> dict:
    """Any-overlap detection: a prediction is TP iff it shares >= 1 pixel
    with any truth instance; a truth instance is covered iff some
    prediction overlaps it. Many-to-one overlaps count on both sides."""
    pk, tk, _ = _overlap_table(pred, truth)
    pred_ids = set(np.unique(pred[pred != 0]).tolist())
    truth_ids = set(np.unique(truth[truth != 0]).tolist())
    overlapping = (pk != 0) & (tk != 0)
    tp_preds = set(pk[overlapping].tolist())
    covered_truths = set(tk[overlapping].tolist())
    tp = len(tp_preds)
    fp = len(pred_ids) - tp
    fn = len(truth_ids) - len(covered_truths)
    return {
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "n_pred": len(pred_ids),
        "n_truth": len(truth_ids),
        "precision": _ratio(tp, len(pred_ids)),
        "recall": _ratio(len(covered_truths), len(truth_ids)),
    }


@dataclass
class MatchedPairSet:
    pairs: list[tuple[int, int, float]]   # (pred id, truth id, IoU)
    unmatched_pred: list[int]
    unmatched_truth: list[int]


def match_instances(pred: np.ndarray, truth: np.ndarray) -> MatchedPairSet:
    """Pair instances whose IoU exceeds 0.5.

    IoU > 0.5 pairs are unique per instance (two sets cannot each cover
    more than half of the same union twice), so collecting qualifying
    pairs directly is exact.
    """
    pk, tk, counts = _overlap_table(pred, truth)
    pred_ids, pred_areas = np.unique(pred[pred != 0], return_counts=True)
    truth_ids, truth_areas = np.unique(truth[truth != 0], return_counts=True)
    parea = dict(zip(pred_ids.tolist(), pred_areas.tolist()))
    tarea = dict(zip(truth_ids.tolist(), truth_areas.tolist()))
    pairs = []
    matched_p, matched_t = set(), set()
    for p, t, inter in zip(pk.tolist(), tk.tolist(), counts.tolist()):
        if p == 0 or t == 0:
            continue
        union = parea[p] + tarea[t] - inter
        iou = inter / union
        if iou > 0.5:
            pairs.append((p, t, iou))
            matched_p.add(p)
            matched_t.add(t)
    pairs.sort()
    return MatchedPairSet(
        pairs=pairs,
        unmatched_pred=sorted(set(parea) - matched_p),
        unmatched_truth=sorted(set(tarea) - matched_t),
    )


# ---------------------------------------------------------------------------
# classification metrics over matched pairs


@dataclass
class ClassMetrics:
    classes: list[str]
    confusion: np.ndarray                 # rows = truth, cols = pred
    per_class: dict[str, dict]
    accuracy: float
    n_pairs: int

    def to_json(self, path) -> None:
        doc = {
            "classes": self.classes,
            "confusion": self.confusion.tolist(),
            "per_class": self.per_class,
            "accuracy": self.accuracy,
            "n_pairs": self.n_pairs,
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=2, allow_nan=True)


def class_metrics(
    pairs: MatchedPairSet, pred_classes: dict, truth_classes: dict
) -> ClassMetrics:
    """One-vs-rest TP/FP/TN/FN, PPV, NPV, prevalence and its normalized PPV
    over matched pairs only."""
    pred_seq, truth_seq = [], []
    for p, t, _ in pairs.pairs:
        if p not in pred_classes:
            raise MetricsError(f"no class for predicted instance {p}")
        if t not in truth_classes:
            raise MetricsError(f"no class for truth instance {t}")
        pred_seq.append(pred_classes[p])
        truth_seq.append(truth_classes[t])
    classes = sorted(set(pred_seq) | set(truth_seq))
    idx = {c: i for i, c in enumerate(classes)}
    k = len(classes)
    conf = np.zeros((k, k), dtype=np.int64)
    for pc, tc in zip(pred_seq, truth_seq):
        conf[idx[tc], idx[pc]] += 1
    n = len(pred_seq)
    per_class = {}
    for c in classes:
        i = idx[c]
        tp = int(conf[i, i])
        fp = int(conf[:, i].sum() - tp)
        fn = int(conf[i, :].sum() - tp)
        tn = n - tp - fp - fn
        prevalence = _ratio(int(conf[i, :].sum()), n)
        ppv = _ratio(tp, tp + fp)
        per_class[c] = {
            "tp": tp, "fp": fp, "tn": tn, "fn": fn,
            "ppv": ppv,
            "npv": _ratio(tn, tn + fn),
            "prevalence": prevalence,
            "prevalence_normalized_ppv": (
                ppv / prevalence if prevalence and not math.isnan(ppv) else float("nan")
            ),
        }
    return ClassMetrics(
        classes=classes,
        confusion=conf,
        per_class=per_class,
        accuracy=_ratio(int(np.trace(conf)), n),
        n_pairs=n,
    )


# ---------------------------------------------------------------------------
# bounded metrics against parent-class truth


@dataclass
class BoundedMetrics:
    per_subclass: dict[str, dict] = field(default_factory=dict)


def bounded_metrics(
    pairs: MatchedPairSet,
    pred_subclasses: dict,
    truth_parents: dict,
    parent_map: dict | None = None,
) -> BoundedMetrics:
    """PPV upper bound and NPV interval when truth carries only parent classes.

    For subclass c with parent P: among pairs predicted c, those whose
    truth parent is P may or may not be true c, so the best case gives
    ppv_upper. Among the rest, pairs with truth parent != P are definite
    true negatives; pairs with truth parent == P are ambiguous and bound
    NPV from both sides.
    """
    parent_map = dict(DEFAULT_PARENT_MAP if parent_map is None else parent_map)
    rows = []
    for p, t, _ in pairs.pairs:
        sub = pred_subclasses[p]
        if sub not in parent_map:
            raise MetricsError(f"predicted subclass {sub!r} has no parent mapping")
        rows.append((sub, truth_parents[t]))
    out = BoundedMetrics()
    for sub in sorted({s for s, _ in rows}):
        parent = parent_map[sub]
        positives = [tp for s, tp in rows if s == sub]
        negatives = [tp for s, tp in rows if s != sub]
        pos_hit = sum(1 for tp in positives if tp == parent)
        ambiguous = sum(1 for tp in negatives if tp == parent)
        definite_tn = len(negatives) - ambiguous
        out.per_subclass[sub] = {
            "parent": parent,
            "n_positive": len(positives),
            "n_negative": len(negatives),
            "ambiguous_negatives": ambiguous,
            "ppv_upper": _ratio(pos_hit, len(positives)),
            "npv_lower": _ratio(definite_tn, len(negatives)),
            "npv_upper": _ratio(definite_tn + ambiguous, len(negatives)),
        }
    return out


# ---------------------------------------------------------------------------
# Friedman test


def _regularized_gamma_upper(s: float, x: float) -> float:
    """Q(s, x) = Gamma(s, x) / Gamma(s), abs err <= 1e-10.

    Series for the lower function when x < s + 1, Lentz continued fraction
    for the upper function otherwise.
    """
    if x < 0 or s <= 0:
        raise ValueError("invalid arguments")
    if x == 0:
        return 1.0
    lg = math.lgamma(s)
    if x < s + 1:
        # lower series: P(s,x) = x^s e^-x / Gamma(s) * sum x^n / (s)_{n+1}
        term = 1.0 / s
        total = term
        n = 1
        while True:
            term *= x / (s + n)
            total += term
            if abs(term) < abs(total) * 1e-16 or n > 10_000:
                break
            n += 1
        p = math.exp(s * math.log(x) - x - lg) * total
        return 1.0 - p
    # upper continued fraction (Lentz)
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(s * math.log(x) - x - lg) * h


def chi2_sf(q: float, df: int) -> float:
    """Chi-square survival function P(X >= q)."""
    if q <= 0:
        return 1.0
    return _regularized_gamma_upper(df / 2.0, q / 2.0)


def _midranks(row: np.ndarray) -> np.ndarray:
    order = np.argsort(row, kind="stable")
    ranks = np.empty(len(row), dtype=np.float64)
    sorted_vals = row[order]
    i = 0
    while i < len(row):
        j = i
        while j + 1 < len(row) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass
class FriedmanResult:
    statistic: float
    df: int
    p_value: float
    small_sample_warning: bool


def friedman_test(values: np.ndarray) -> FriedmanResult:
    """Friedman rank test over an (n blocks x k treatments) matrix.

    Mid-ranks for ties within a block; the statistic carries the standard
    tie correction. Fully tied input yields Q = 0, p = 1.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise MetricsError("expected a 2-D blocks x treatments matrix")
    n, k = values.shape
    if n < 2 or k < 2:
        raise MetricsError("need at least 2 blocks and 2 treatments")
    if not np.isfinite(values).all():
        raise MetricsError("missing or non-finite cells")
    ranks = np.vstack([_midranks(row) for row in values])
    rank_sums = ranks.sum(axis=0)
    q = 12.0 / (n * k * (k + 1)) * float((rank_sums**2).sum()) - 3.0 * n * (k + 1)
    tie_sum = 0.0
    for row in values:
        _, counts = np.unique(row, return_counts=True)
        tie_sum += float((counts**3 - counts).sum())
    correction = 1.0 - tie_sum / (n * k * (k**2 - 1))
    if correction <= 0:
        q, p = 0.0, 1.0
    else:
        q = q / correction
        p = chi2_sf(q, k - 1)
    return FriedmanResult(
        statistic=q,
        df=k - 1,
        p_value=p,
        small_sample_warning=(n < 10 or k < 4),
    )

"""Per-sample overlap metrics, aggregate reports and paired t-tests."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

METRIC_EPS = 1e-7
METRICS = ("dsc", "iou", "precision", "recall")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int
    eps: float = METRIC_EPS

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return a.astype(bool)


def confusion(pred, truth) -> ConfusionCounts:
    pred = _as_binary(pred, "pred")
    truth = _as_binary(truth, "truth")
    if pred.shape != truth.shape:
        raise ValueError(f"pred and truth shapes differ: {pred.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0  # only reachable with eps = 0


def metrics_from_counts(c: ConfusionCounts) -> tuple[float, float, float, float]:
    """(dsc, iou, precision, recall) with eps in every denominator."""
    tp, fp, fn, eps = c.tp, c.fp, c.fn, c.eps
    dsc = _ratio(2 * tp, 2 * tp + fp + fn + eps)
    iou = _ratio(tp, tp + fp + fn + eps)
    precision = _ratio(tp, tp + fp + eps)
    recall = _ratio(tp, tp + fn + eps)
    return dsc, iou, precision, recall


def f_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# Student t distribution -------------------------------------------------------------
def _betacf(a: float, b: float, x: float, max_iter: int = 500, tol: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tailed_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTest:
    t: float
    df: int
    p: float


def paired_t_test(a, b) -> TTest:
    """Two-tailed paired t-test on a - b. All-zero differences give p = 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"score arrays must be 1-D and of equal length, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError(f"paired t-test needs at least 2 samples, got {n}")
    d = a - b
    sd = float(np.std(d, ddof=1))
    mean = float(d.mean())
    if sd == 0.0:
        if mean == 0.0:
            return TTest(0.0, n - 1, 1.0)
        return TTest(math.copysign(math.inf, mean), n - 1, 0.0)
    t = mean / (sd / math.sqrt(n))
    return TTest(t, n - 1, t_two_tailed_p(t, n - 1))


# reports ------------------------------------------------------------------------------
@dataclass
class SampleMetrics:
    id: str
    counts: ConfusionCounts
    dsc: float
    iou: float
    precision: float
    recall: float


@dataclass
class MetricReport:
    samples: list[SampleMetrics]
    p_values: dict[str, float] = field(default_factory=dict)
    t_stats: dict[str, float] = field(default_factory=dict)

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(s, metric) for s in self.samples], dtype=np.float64)

    @property
    def means(self) -> dict[str, float]:
        return {m: float(self.values(m).mean()) if self.samples else 0.0 for m in METRICS}

    @property
    def f_score(self) -> float:
        m = self.means
        return f_score(m["precision"], m["recall"])

    def compare(self, baseline: "MetricReport") -> None:
        """Attach paired t-test p-values against a baseline over the same samples."""
        ours = [s.id for s in self.samples]
        theirs = [s.id for s in baseline.samples]
        if ours != theirs:
            missing = sorted(set(ours) ^ set(theirs))
            raise ValueError(f"sample sets differ between reports: {missing[:10]}")
        for m in METRICS:
            res = paired_t_test(self.values(m), baseline.values(m))
            self.p_values[m] = res.p
            self.t_stats[m] = res.t

    def to_json(self) -> dict:
        return {
            "samples": [
                {
                    "id": s.id,
                    "tp": s.counts.tp,
                    "fp": s.counts.fp,
                    "fn": s.counts.fn,
                    "tn": s.counts.tn,
                    "dsc": s.dsc,
                    "iou": s.iou,
                    "precision": s.precision,
                    "recall": s.recall,
                }
                for s in self.samples
            ],
            "aggregate": {**self.means, "f_score": self.f_score, "n": len(self.samples)},
            "p_values": dict(self.p_values),
            "t_stats": dict(self.t_stats),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MetricReport":
        samples = []
        for r in obj["samples"]:
            c = ConfusionCounts(r["tp"], r["fp"], r["fn"], r["tn"])
            samples.append(SampleMetrics(r["id"], c, r["dsc"], r["iou"], r["precision"], r["recall"]))
        return cls(samples, dict(obj.get("p_values", {})), dict(obj.get("t_stats", {})))

    def write(self, json_path) -> tuple[Path, Path]:
        """Write ``<name>.json`` and a ``<name>.csv`` summary next to it."""
        json_path = Path(json_path)
        json_path.parent.mkdir(parents=True, exist_ok=True)
        json_path.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        csv_path = json_path.with_suffix(".csv")
        means = self.means
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "mean", "p_value"])
            for m in METRICS:
                p = self.p_values.get(m)
                w.writerow([m, repr(means[m]), "" if p is None else repr(p)])
            w.writerow(["f_score", repr(self.f_score), ""])
        return json_path, csv_path

    @classmethod
    def read(cls, json_path) -> "MetricReport":
        return cls.from_json(json.loads(Path(json_path).read_text()))


def score_sample(sample_id: str, pred, truth) -> SampleMetrics:
    c = confusion(pred, truth)
    return SampleMetrics(sample_id, c, *metrics_from_counts(c))


def evaluate_folder(pred_dir, truth_dir, threshold: float = 0.5) -> MetricReport:
    """Score every ``<stem>.png`` prediction against the mask with the same stem.

    Predictions are read as 8-bit grey levels and thresholded at
    ``threshold * 255``; ground truth is binarised at > 127.
    """
    from .data import read_gray, stems_in

    pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
    preds, truths = stems_in(pred_dir), stems_in(truth_dir)
    unmatched = sorted(set(preds) ^ set(truths))
    if unmatched:
        where = [str(preds.get(s) or truths.get(s)) for s in unmatched]
        raise ValueError(f"unmatched files: {', '.join(where)}")
    samples = []
    for stem in sorted(preds):
        p = read_gray(preds[stem]).astype(np.float64) / 255.0 >= threshold
        t = read_gray(truths[stem]) > 127
        if p.shape != t.shape:
            raise ValueError(f"{stem}: prediction {p.shape} and mask {t.shape} sizes differ")
        samples.append(score_sample(stem, p, t))
    return MetricReport(samples)

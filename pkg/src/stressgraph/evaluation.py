"""Binary classification metrics, seed aggregation, and paired significance tests.

Conventions: the positive class is label 1, undefined ratios (0/0) evaluate
to 0.0 and mark the class as degenerate, weighted averages use gold-label
support, and spread over seeds is the sample standard deviation (ddof=1,
zero for a single run).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_VALID_LABELS = (0, 1)

AVERAGING_MODES = ("weighted", "macro", "per_class")

METRIC_NAMES = ("precision", "recall", "f1", "accuracy")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary confusion counts with label 1 as the positive class."""

    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        for name in ("tn", "fp", "fn", "tp"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer")
        if self.total == 0:
            raise ValueError("confusion matrix must count at least one sample")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def support(self, label: int) -> int:
        return self.tp + self.fn if label == 1 else self.tn + self.fp


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy plus per-class and averaged precision/recall/F1.

    The headline precision/recall/f1 properties follow the requested
    averaging mode; per_class keeps the full table as the primary view and
    falls back to weighted headlines. degenerate_classes lists labels where
    a 0/0 convention fired.
    """

    accuracy: float
    per_class: dict
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    averaging: str
    degenerate_classes: tuple
    total: int

    @property
    def precision(self) -> float:
        return self.macro_precision if self.averaging == "macro" else self.weighted_precision

    @property
    def recall(self) -> float:
        return self.macro_recall if self.averaging == "macro" else self.weighted_recall

    @property
    def f1(self) -> float:
        return self.macro_f1 if self.averaging == "macro" else self.weighted_f1


@dataclass(frozen=True)
class SeedAggregate:
    """Per-metric (mean, sample std) pairs over repeated runs."""

    stats: dict
    n_runs: int


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    df: int
    p_value: float
    corrected_p: float
    comparisons: int


def confusion(predicted, gold) -> ConfusionMatrix:
    """Count binary agreement between two equal-length label sequences."""
    predicted = list(predicted)
    gold = list(gold)
    if len(predicted) != len(gold):
        raise ValueError(
            f"prediction/gold length mismatch: {len(predicted)} vs {len(gold)}"
        )
    if not predicted:
        raise ValueError("cannot build a confusion matrix from zero samples")
    counts = {(0, 0): 0, (0, 1): 0, (1, 0): 0, (1, 1): 0}
    for pred, actual in zip(predicted, gold):
        if pred not in _VALID_LABELS or actual not in _VALID_LABELS:
            raise ValueError(f"labels must be 0 or 1, got pred={pred!r} gold={actual!r}")
        counts[(int(pred), int(actual))] += 1
    return ConfusionMatrix(
        tn=counts[(0, 0)], fp=counts[(1, 0)], fn=counts[(0, 1)], tp=counts[(1, 1)]
    )


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def metrics(cm: ConfusionMatrix, averaging: str = "weighted") -> MetricsReport:
    """Per-class, support-weighted, and macro precision/recall/F1."""
    if averaging not in AVERAGING_MODES:
        raise ValueError(f"averaging must be one of {AVERAGING_MODES}, got {averaging!r}")
    per_class: dict[int, ClassMetrics] = {}
    degenerate = []
    for label in (0, 1):
        if label == 1:
            p_num, p_den = cm.tp, cm.tp + cm.fp
            r_num, r_den = cm.tp, cm.tp + cm.fn
        else:
            p_num, p_den = cm.tn, cm.tn + cm.fn
            r_num, r_den = cm.tn, cm.tn + cm.fp
        precision, p_deg = _ratio(p_num, p_den)
        recall, r_deg = _ratio(r_num, r_den)
        if precision + recall == 0.0:
            f1, f_deg = 0.0, True
        else:
            f1, f_deg = 2.0 * precision * recall / (precision + recall), False
        if p_deg or r_deg or f_deg:
            degenerate.append(label)
        per_class[label] = ClassMetrics(
            precision=precision, recall=recall, f1=f1, support=cm.support(label)
        )

    total = cm.total
    weighted = {
        field: sum(
            getattr(per_class[label], field) * cm.support(label) for label in (0, 1)
        ) / total
        for field in ("precision", "recall", "f1")
    }
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / total,
        per_class=per_class,
        weighted_precision=weighted["precision"],
        weighted_recall=weighted["recall"],
        weighted_f1=weighted["f1"],
        macro_precision=(per_class[0].precision + per_class[1].precision) / 2.0,
        macro_recall=(per_class[0].recall + per_class[1].recall) / 2.0,
        macro_f1=(per_class[0].f1 + per_class[1].f1) / 2.0,
        averaging=averaging,
        degenerate_classes=tuple(degenerate),
        total=total,
    )


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation; a single value has std 0."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("cannot aggregate zero values")
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return mean, std


def aggregate(reports) -> SeedAggregate:
    """Mean/std of precision, recall, F1, and accuracy across per-seed reports."""
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate zero reports")
    stats = {
        name: mean_std([getattr(report, name) for report in reports])
        for name in METRIC_NAMES
    }
    return SeedAggregate(stats=stats, n_runs=len(reports))


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    max_iter = 300
    eps = 3e-15
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise FloatingPointError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # Symmetry switch keeps the continued fraction in its fast-converging zone.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: int) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t."""
    if df < 1:
        raise ValueError("degrees of freedom must be at least 1")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def bonferroni(p_value: float, n_comparisons: int) -> float:
    """min(1, p * m) correction for m simultaneous comparisons."""
    if n_comparisons < 1:
        raise ValueError("comparison count must be at least 1")
    if not 0.0 <= p_value <= 1.0:
        raise ValueError(f"p-value must lie in [0, 1], got {p_value}")
    return min(1.0, p_value * n_comparisons)


def paired_ttest(a, b, comparisons: int = 1) -> TTestResult:
    """Two-tailed paired t-test with Bonferroni correction over comparisons.

    Zero-variance differences short-circuit: identical sequences give t=0,
    p=1; a constant non-zero gap gives t=+/-inf, p=0.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    if len(a) != len(b):
        raise ValueError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    diffs = np.asarray(a) - np.asarray(b)
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            t, p = 0.0, 1.0
        else:
            t, p = math.copysign(math.inf, mean), 0.0
    else:
        t = mean / (sd / math.sqrt(n))
        p = student_t_sf2(t, df)
    return TTestResult(
        statistic=t, df=df, p_value=p,
        corrected_p=bonferroni(p, comparisons), comparisons=comparisons,
    )


def report_as_dict(report: MetricsReport) -> dict:
    """JSON-friendly view of a metrics report."""
    return {
        "accuracy": report.accuracy,
        "averaging": report.averaging,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "weighted": {
            "precision": report.weighted_precision,
            "recall": report.weighted_recall,
            "f1": report.weighted_f1,
        },
        "macro": {
            "precision": report.macro_precision,
            "recall": report.macro_recall,
            "f1": report.macro_f1,
        },
        "per_class": {
            str(label): {
                "precision": cls.precision,
                "recall": cls.recall,
                "f1": cls.f1,
                "support": cls.support,
            }
            for label, cls in sorted(report.per_class.items())
        },
        "degenerate_classes": list(report.degenerate_classes),
        "total": report.total,
    }


def render_table(headers, rows) -> str:
    """Plain-text table with left-aligned, width-padded columns."""
    headers = [str(h) for h in headers]
    str_rows = [[str(cell) for cell in row] for row in rows]
    for row in str_rows:
        if len(row) != len(headers):
            raise ValueError("table row width does not match the header")
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in str_rows)) if str_rows else len(headers[i])
        for i in range(len(headers))
    ]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(),
        "  ".join("-" * w for w in widths).rstrip(),
    ]
    for row in str_rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def render_metrics(report: MetricsReport, name: str = "run") -> str:
    """One-row text table in the column order Precision, Recall, F1, Accuracy."""
    row = [name] + [f"{getattr(report, metric):.4f}" for metric in METRIC_NAMES]
    return render_table(["", "Precision", "Recall", "F1", "Accuracy"], [row])


def render_aggregate(aggregates: dict) -> str:
    """Multi-run text table; cells are mean with a +/- sample-std suffix."""
    rows = []
    for name, agg in aggregates.items():
        cells = [name]
        for metric in METRIC_NAMES:
            mean, std = agg.stats[metric]
            cells.append(f"{mean:.4f}+/-{std:.4f}")
        rows.append(cells)
    return render_table(["", "Precision", "Recall", "F1", "Accuracy"], rows)

"""Segmentation metrics: Dice, Jaccard, Recall, Accuracy, VOE.

Computed from exact TP/FP/FN/TN pixel tallies, with per-image, per-class,
and overall aggregation. When both masks are empty the overlap metrics
read as perfect agreement (Dice = Jaccard = Recall = 1, VOE = 0); Recall
is likewise 1 whenever the reference mask is empty, so over-segmentation
of an empty reference never scores below a correct one.
"""

from dataclasses import dataclass

import numpy as np

METRIC_NAMES = ("dice", "jaccard", "recall", "accuracy", "voe")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _check_binary(name, m):
    arr = np.asarray(m)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} mask must be binary (0/1)")
    return arr.astype(bool)


def confusion_counts(pred, gt):
    p = _check_binary("pred", pred)
    g = _check_binary("gt", gt)
    if p.shape != g.shape:
        raise ValueError(f"mask size mismatch: pred {p.shape} vs gt {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return ConfusionCounts(tp, fp, fn, tn)


def compute_metrics(counts):
    """Five metrics from a tally; returns a dict keyed by METRIC_NAMES."""
    if counts.total <= 0:
        raise ValueError("confusion counts cover zero pixels")
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    union = tp + fp + fn
    if union == 0:  # both masks empty: perfect agreement
        dice = jaccard = 1.0
    else:
        dice = 2.0 * tp / (2.0 * tp + fp + fn)
        jaccard = tp / union
    recall = 1.0 if (tp + fn) == 0 else tp / (tp + fn)
    accuracy = (tp + tn) / counts.total
    return {
        "dice": dice,
        "jaccard": jaccard,
        "recall": recall,
        "accuracy": accuracy,
        "voe": 1.0 - jaccard,
    }


def evaluate_pair(pred, gt):
    return compute_metrics(confusion_counts(pred, gt))


@dataclass(frozen=True)
class MetricsReport:
    per_image: tuple    # (image_id, {metric: value}) in input order
    per_class: tuple    # (class_name, {metric: mean}) sorted by class name
    overall: dict       # unweighted mean over all per-image rows


def _mean_rows(rows):
    return {m: float(np.mean([r[m] for r in rows])) for m in METRIC_NAMES}


def aggregate(rows, class_of):
    """rows: list of (image_id, metrics dict); class_of maps image_id to a
    class name. Per-class means are unweighted over that class's images;
    the overall row is the unweighted mean over all images."""
    if not rows:
        raise ValueError("no metric rows to aggregate")
    by_class = {}
    for image_id, vals in rows:
        if image_id not in class_of:
            raise ValueError(f"no class mapping for image {image_id!r}")
        by_class.setdefault(class_of[image_id], []).append(vals)
    per_class = tuple(
        (cname, _mean_rows(vals)) for cname, vals in sorted(by_class.items())
    )
    overall = _mean_rows([vals for _, vals in rows])
    return MetricsReport(tuple(rows), per_class, overall)


def format_csv_value(x):
    return f"{x:.4f}"


def per_image_csv(report):
    lines = ["image_id," + ",".join(METRIC_NAMES)]
    for image_id, vals in report.per_image:
        lines.append(image_id + "," + ",".join(format_csv_value(vals[m]) for m in METRIC_NAMES))
    return "\n".join(lines) + "\n"


def per_class_csv(report):
    lines = ["class," + ",".join(METRIC_NAMES)]
    for cname, vals in report.per_class:
        lines.append(cname + "," + ",".join(format_csv_value(vals[m]) for m in METRIC_NAMES))
    return "\n".join(lines) + "\n"


def overall_csv(report):
    lines = [",".join(METRIC_NAMES),
             ",".join(format_csv_value(report.overall[m]) for m in METRIC_NAMES)]
    return "\n".join(lines) + "\n"

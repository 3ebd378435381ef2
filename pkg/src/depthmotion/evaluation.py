"""Depth error metrics with median scale alignment and the dynamic-region
evaluation protocol (alignment on the full image, metrics restricted to
object pixels).  Everything here is plain numpy; nothing is differentiated.
"""

from dataclasses import dataclass

import numpy as np

DELTA_BASE = 1.25


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def __post_init__(self):
        if not (self.delta1 <= self.delta2 + 1e-12 and self.delta2 <= self.delta3 + 1e-12):
            raise ValueError("delta metrics must be non-decreasing")

    def as_tuple(self):
        return (self.abs_rel, self.sq_rel, self.rmse, self.rmse_log,
                self.delta1, self.delta2, self.delta3)

    NAMES = ("AbsRel", "SqRel", "RMSE", "RMSElog", "d<1.25", "d<1.25^2", "d<1.25^3")


def _as_numpy(depth):
    if hasattr(depth, "values"):
        depth = depth.values
    if hasattr(depth, "data"):
        depth = depth.data
    depth = np.asarray(depth, dtype=np.float64)
    return depth[0] if depth.ndim == 3 else depth


def align_scale(pred, gt, mask, bounds=(1e-3, 80.0)):
    """Median-ratio scale alignment, then clamp to the evaluation bounds."""
    pred = _as_numpy(pred)
    gt = _as_numpy(gt)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("alignment mask is empty")
    ratio = np.median(gt[mask]) / np.median(pred[mask])
    return np.clip(pred * ratio, bounds[0], bounds[1])


def compute_metrics(pred, gt, mask):
    """Standard error/accuracy metrics over masked pixels of aligned depth."""
    pred = _as_numpy(pred)
    gt = _as_numpy(gt)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("metric mask is empty")
    p = pred[mask]
    g = gt[mask]
    if (p <= 0).any() or (g <= 0).any():
        raise ValueError("nonpositive depths under the metric mask")
    err = p - g
    abs_rel = float(np.mean(np.abs(err) / g))
    sq_rel = float(np.mean(err * err / g))
    rmse = float(np.sqrt(np.mean(err * err)))
    log_err = np.log(p) - np.log(g)
    rmse_log = float(np.sqrt(np.mean(log_err * log_err)))
    ratio = np.maximum(p / g, g / p)
    deltas = [float(np.mean(ratio < DELTA_BASE ** k)) for k in (1, 2, 3)]
    return DepthMetrics(abs_rel, sq_rel, rmse, rmse_log, *deltas)


def dynamic_region_metrics(pred, gt, object_mask, full_mask=None, bounds=(1e-3, 80.0)):
    """Metrics restricted to object pixels, aligned on the full image first."""
    object_mask = np.asarray(object_mask, dtype=bool)
    if object_mask.ndim == 3:
        object_mask = object_mask.any(axis=0)
    if not object_mask.any():
        raise ValueError("object mask is empty")
    if full_mask is None:
        full_mask = np.ones_like(object_mask)
    aligned = align_scale(pred, gt, full_mask, bounds)
    return compute_metrics(aligned, gt, object_mask & full_mask)


@dataclass
class BenchmarkReport:
    full: DepthMetrics
    dynamic: DepthMetrics | None
    per_sample: list      # (sample id, "full"/"dynamic", DepthMetrics, pixel count)
    skipped_dynamic: int  # samples without object pixels

    def table(self):
        lines = ["%-10s " % "split" + " ".join("%-9s" % n for n in DepthMetrics.NAMES)]
        rows = [("full", self.full)]
        if self.dynamic is not None:
            rows.append(("dynamic", self.dynamic))
        for name, m in rows:
            lines.append("%-10s " % name + " ".join("%-9.4f" % v for v in m.as_tuple()))
        if self.skipped_dynamic:
            lines.append("skipped %d dynamic samples with empty object masks"
                         % self.skipped_dynamic)
        return "\n".join(lines)

    def sample_log(self):
        lines = []
        for sid, split, metrics, count in self.per_sample:
            lines.append("sample %s %s %s %d"
                         % (sid, split, " ".join("%.17g" % v for v in metrics.as_tuple()), count))
        return "\n".join(lines)


def _mean_metrics(entries):
    arr = np.array([m.as_tuple() for m in entries])
    return DepthMetrics(*arr.mean(axis=0))


def evaluate_predictions(samples, predictions, bounds):
    """Per-sample alignment + metrics, averaged; dynamic split where masks exist."""
    per_sample = []
    full_list = []
    dyn_list = []
    skipped = 0
    for sample, pred in zip(samples, predictions):
        gt = sample.gt_depth[0]
        valid = np.ones_like(gt, dtype=bool)
        aligned = align_scale(pred, gt, valid, bounds)
        metrics = compute_metrics(aligned, gt, valid)
        full_list.append(metrics)
        per_sample.append((sample.scene_id, "full", metrics, int(valid.sum())))
        obj = sample.object_mask
        if sample.dynamic:
            if obj.any():
                dyn = dynamic_region_metrics(pred, gt, obj, valid, bounds)
                dyn_list.append(dyn)
                per_sample.append((sample.scene_id, "dynamic", dyn, int(obj.sum())))
            else:
                skipped += 1
    return BenchmarkReport(
        full=_mean_metrics(full_list),
        dynamic=_mean_metrics(dyn_list) if dyn_list else None,
        per_sample=per_sample,
        skipped_dynamic=skipped)

"""
Segmentation metrics, row-band breakdowns, per-row range statistics and a
small wall-clock benchmark harness.

Confusion matrices are indexed ``[predicted, ground_truth]`` and only count
occupied cells.  Background (class 0) takes part in the matrix but is left
out of every mean.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from rangeseg.errors import EmptyBenchmarkError, ShapeMismatchError, UndefinedIoUError
from rangeseg.pointcloud_io import CLASS_NAMES

FOREGROUND = (1, 2, 3)


@dataclass
class ConfusionMatrix:
    num_classes: int = 4
    counts: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)

    def accumulate(self, pred, gt, mask=None) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")
        if mask is not None:
            mask = np.asarray(mask) > 0
            if mask.shape != gt.shape:
                raise ShapeMismatchError(f"mask {mask.shape} vs ground truth {gt.shape}")
            pred, gt = pred[mask], gt[mask]
        C = self.num_classes
        flat = pred.astype(np.int64).ravel() * C + gt.astype(np.int64).ravel()
        self.counts += np.bincount(flat, minlength=C * C).reshape(C, C)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def iou(self, c: int) -> float:
        tp = self.counts[c, c]
        fp = self.counts[c].sum() - tp
        fn = self.counts[:, c].sum() - tp
        denom = tp + fp + fn
        if denom == 0:
            raise UndefinedIoUError(f"class {c} absent from prediction and ground truth")
        return float(tp / denom)

    def iou_or_nan(self, c: int) -> float:
        try:
            return self.iou(c)
        except UndefinedIoUError:
            return float("nan")

    def miou(self, classes=FOREGROUND) -> float:
        """Mean IoU over ``classes``, skipping classes with undefined IoU.

        Returns NaN when no class is defined.
        """
        vals = [self.iou_or_nan(c) for c in classes]
        vals = [v for v in vals if not np.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")


def iou(cm: ConfusionMatrix, c: int) -> float:
    return cm.iou(c)


def miou(cm: ConfusionMatrix, classes=FOREGROUND) -> float:
    return cm.miou(classes)


def confusion(pred, gt, mask=None, rows=None, num_classes: int = 4) -> ConfusionMatrix:
    """Confusion matrix of one frame, optionally restricted to ``rows=(start, stop)``."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if rows is not None:
        lo, hi = rows
        pred, gt = pred[lo:hi], gt[lo:hi]
        mask = None if mask is None else np.asarray(mask)[lo:hi]
    return ConfusionMatrix(num_classes).accumulate(pred, gt, mask)


def band_miou(rasters, band, num_classes: int = 4) -> float:
    """mIoU over cells in image rows ``band = (start, stop)``.

    ``rasters`` yields ``(pred, gt)`` or ``(pred, gt, occupancy)`` tuples.
    """
    cm = ConfusionMatrix(num_classes)
    for item in rasters:
        pred, gt = item[0], item[1]
        mask = item[2] if len(item) > 2 else None
        cm += confusion(pred, gt, mask, band, num_classes)
    return cm.miou()


@dataclass
class EvalReport:
    """Whole-image, top-band and bottom-band confusion matrices."""

    top_rows: int = 16
    height: int = 64
    num_classes: int = 4
    full: ConfusionMatrix = None
    top: ConfusionMatrix = None
    bottom: ConfusionMatrix = None
    frames: int = 0

    def __post_init__(self):
        for name in ("full", "top", "bottom"):
            if getattr(self, name) is None:
                setattr(self, name, ConfusionMatrix(self.num_classes))

    def add(self, pred, gt, mask=None) -> "EvalReport":
        gt = np.asarray(gt)
        if gt.shape[0] != self.height:
            raise ShapeMismatchError(f"raster height {gt.shape[0]} != report height {self.height}")
        self.full += confusion(pred, gt, mask, None, self.num_classes)
        self.top += confusion(pred, gt, mask, (0, self.top_rows), self.num_classes)
        self.bottom += confusion(pred, gt, mask, (self.top_rows, self.height), self.num_classes)
        self.frames += 1
        return self

    def rows(self):
        out = [(CLASS_NAMES[c], self.full.iou_or_nan(c)) for c in FOREGROUND]
        out.append(("mean", self.full.miou()))
        out.append((f"top{self.top_rows}_mean", self.top.miou()))
        out.append((f"lower{self.height - self.top_rows}_mean", self.bottom.miou()))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "iou"])
        for name, value in self.rows():
            writer.writerow([name, "nan" if np.isnan(value) else f"{value:.6f}"])
        return buf.getvalue()


def evaluate(pairs, top_rows: int = 16, num_classes: int = 4) -> EvalReport:
    """Accumulate an :class:`EvalReport` over ``(pred, gt[, occupancy])`` tuples."""
    report = None
    for item in pairs:
        gt = np.asarray(item[1])
        if report is None:
            report = EvalReport(top_rows, gt.shape[0], num_classes)
        report.add(item[0], gt, item[2] if len(item) > 2 else None)
    return report if report is not None else EvalReport(top_rows, 64, num_classes)


# ---------------------------------------------------------------------------
# per-row range distribution


@dataclass
class RowRangeStats:
    class_id: int
    height: int
    r_max: float
    ranges: dict = field(default_factory=dict)

    @property
    def rows(self) -> list:
        return sorted(self.ranges)

    def summary(self, row: int) -> dict:
        r = np.asarray(self.ranges[row])
        q25, q50, q75 = np.quantile(r, [0.25, 0.5, 0.75])
        return {"row": row, "count": int(r.size), "min": float(r.min()), "q25": float(q25),
                "median": float(q50), "q75": float(q75), "max": float(r.max())}

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["row", "count", "min", "q25", "median", "q75", "max"]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row in self.rows:
            s = self.summary(row)
            writer.writerow([s["row"], s["count"]] + [f"{s[k]:.4f}" for k in cols[2:]])
        return buf.getvalue()

    def histogram(self, bin_width: float = 1.0) -> np.ndarray:
        """``(height, n_bins)`` counts of class cells per row and range bin."""
        n_bins = max(1, int(np.ceil(self.r_max / bin_width)))
        hist = np.zeros((self.height, n_bins), dtype=np.int64)
        for row, values in self.ranges.items():
            idx = np.clip((np.asarray(values) / bin_width).astype(np.int64), 0, n_bins - 1)
            np.add.at(hist[row], idx, 1)
        return hist

    def heatmap(self, bin_width: float = 1.0) -> np.ndarray:
        """Histogram scaled to 8-bit gray, rows = laser rows, columns = range bins."""
        hist = self.histogram(bin_width).astype(np.float64)
        peak = hist.max()
        if peak > 0:
            hist = np.sqrt(hist / peak)
        return np.round(255 * hist).astype(np.uint8)


def analyze_row_ranges(frames, class_id: int = 1) -> RowRangeStats:
    """Collect the metric range of every cell labeled ``class_id`` per image row.

    ``frames`` yields ``(RangeImage, raster)`` pairs.
    """
    frames = list(frames)
    if not frames:
        return RowRangeStats(class_id, 0, 0.0)
    first = frames[0][0]
    stats = RowRangeStats(class_id, first.config.H, first.config.r_max)
    collected = {}
    for img, raster in frames:
        sel = (np.asarray(raster) == class_id) & (img.occupancy > 0)
        rows, cols = np.nonzero(sel)
        rng = img.metric_range()[rows, cols]
        for r in np.unique(rows):
            collected.setdefault(int(r), []).append(rng[rows == r])
    stats.ranges = {r: np.concatenate(v) for r, v in collected.items()}
    return stats


# ---------------------------------------------------------------------------
# benchmark

STAGE_LABELS = {"encode": "Encoding", "forward": "Model", "cluster": "DBSCAN"}


@dataclass
class BenchResult:
    stage: str
    mean_ms: float
    std_ms: float
    samples: int


def benchmark(fn, frames, repetitions: int = 5, warmup: int = 3, stage: str = "") -> BenchResult:
    """Time ``fn(frame)`` over all frames, ``repetitions`` times.

    Each repetition contributes one sample: the mean per-frame time.  The
    first ``warmup`` calls are run but not timed.
    """
    frames = list(frames)
    if not frames:
        raise EmptyBenchmarkError("benchmark needs at least one frame")
    if repetitions < 1:
        raise EmptyBenchmarkError("benchmark needs at least one repetition")
    for i in range(warmup):
        fn(frames[i % len(frames)])
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for fr in frames:
            fn(fr)
        samples.append((time.perf_counter() - t0) * 1000.0 / len(frames))
    arr = np.asarray(samples)
    return BenchResult(stage, float(arr.mean()), float(arr.std()), len(samples))


def bench_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Process", "Time Avg.(ms)", "Time Std.(ms)"])
    for res in results:
        writer.writerow([STAGE_LABELS.get(res.stage, res.stage), f"{res.mean_ms:.3f}", f"{res.std_ms:.3f}"])
    return buf.getvalue()

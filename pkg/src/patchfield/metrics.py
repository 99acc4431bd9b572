"""Segmentation-style scoring of reconstructions: quantize, confuse, average.

Label images are RGB rasters; both ground truth and prediction are snapped to
a class palette by nearest color before counting, so anti-aliased label PNGs
are handled identically on both sides. Both metrics are class means (not
pixel-frequency weighted); classes that never occur in the ground truth are
excluded from the pixel-accuracy mean rather than scored zero, and reports
say so explicitly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UndefinedMetricError


@dataclass(frozen=True)
class ClassPalette:
    """Ordered bijection between class names and RGB label colors."""

    names: tuple[str, ...]
    colors: np.ndarray  # (C, 3) uint8

    def __post_init__(self):
        colors = np.ascontiguousarray(self.colors, dtype=np.uint8)
        if colors.ndim != 2 or colors.shape[1] != 3 or colors.shape[0] < 1:
            raise ConfigError("palette needs at least one (name, RGB) entry")
        if len(self.names) != colors.shape[0]:
            raise ConfigError("palette names and colors disagree in length")
        if len({tuple(c) for c in colors.tolist()}) != colors.shape[0]:
            raise ConfigError("palette colors must be pairwise distinct")
        colors.flags.writeable = False
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "ClassPalette":
        """Load a palette file: JSON list of {"name": ..., "rgb_hex": "#RRGGBB"}."""
        with open(path) as fh:
            entries = json.load(fh)
        if not isinstance(entries, list) or not entries:
            raise ConfigError(f"{path}: palette must be a non-empty JSON list")
        names, colors = [], []
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict) or "name" not in entry or "rgb_hex" not in entry:
                raise ConfigError(f"{path}: entry {i} needs 'name' and 'rgb_hex'")
            names.append(str(entry["name"]))
            colors.append(_parse_hex(entry["rgb_hex"], f"{path}: entry {i}"))
        return cls(names=tuple(names), colors=np.array(colors, dtype=np.uint8))

    def to_json(self, path: str | os.PathLike) -> None:
        entries = [
            {"name": name, "rgb_hex": "#%02X%02X%02X" % tuple(color)}
            for name, color in zip(self.names, self.colors.tolist())
        ]
        with open(path, "w") as fh:
            json.dump(entries, fh, indent=2)
            fh.write("\n")

    def render(self, class_raster: np.ndarray) -> np.ndarray:
        """Class indices → RGB label raster."""
        return self.colors[np.asarray(class_raster, dtype=np.int64)]


def _parse_hex(text: str, where: str) -> tuple[int, int, int]:
    if not isinstance(text, str) or len(text.lstrip("#")) != 6:
        raise ConfigError(f"{where}: rgb_hex must look like '#RRGGBB', got {text!r}")
    value = int(text.lstrip("#"), 16)
    return (value >> 16) & 0xFF, (value >> 8) & 0xFF, value & 0xFF


def quantize(raster: np.ndarray, palette: ClassPalette) -> np.ndarray:
    """Snap each pixel to the class of minimum Euclidean RGB distance.

    Exact ties go to the lowest class index.
    """
    pixels = np.asarray(raster, dtype=np.int64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) raster, got {pixels.shape}")
    diff = pixels[:, :, None, :] - palette.colors.astype(np.int64)[None, None, :, :]
    d2 = np.einsum("hwck,hwck->hwc", diff, diff)
    return np.argmin(d2, axis=2)  # first minimum -> lowest class index


def confusion(gt: np.ndarray, pred: np.ndarray, num_classes: int) -> np.ndarray:
    """Counts[g][p] = pixels with ground truth g predicted as p."""
    gt = np.asarray(gt, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gt.shape != pred.shape:
        raise ShapeError(f"gt {gt.shape} and prediction {pred.shape} differ in shape")
    flat = gt.reshape(-1) * num_classes + pred.reshape(-1)
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def mean_pixel_accuracy(matrix: np.ndarray) -> float:
    """Class-mean recall over classes that occur in the ground truth."""
    m = np.asarray(matrix, dtype=np.int64)
    gt_totals = m.sum(axis=1)
    present = gt_totals > 0
    if not present.any():
        raise UndefinedMetricError("no class has ground-truth pixels")
    recall = np.diag(m)[present] / gt_totals[present]
    return float(recall.mean())


def mean_iou(matrix: np.ndarray) -> float:
    """Class-mean intersection-over-union over classes with non-empty union."""
    m = np.asarray(matrix, dtype=np.int64)
    diag = np.diag(m)
    union = m.sum(axis=1) + m.sum(axis=0) - diag
    present = union > 0
    if not present.any():
        raise UndefinedMetricError("every class has an empty union")
    iou = diag[present] / union[present]
    return float(iou.mean())


def compare_to_baseline(metric_recon: float, metric_cnn: float) -> float:
    """Signed delta, positive when the reconstruction beats the baseline."""
    return metric_recon - metric_cnn


def format_delta(delta: float) -> str:
    return f"{delta:+.4f}"


def metric_report(
    gt_classes: np.ndarray,
    pred_classes: np.ndarray,
    palette: ClassPalette,
    baseline_classes: np.ndarray | None = None,
) -> dict:
    """Full JSON-able report: global means, per-class detail, optional deltas."""
    m = confusion(gt_classes, pred_classes, len(palette))
    gt_totals = m.sum(axis=1)
    union = gt_totals + m.sum(axis=0) - np.diag(m)
    per_class = {}
    for idx, name in enumerate(palette.names):
        per_class[name] = {
            "gt_pixels": int(gt_totals[idx]),
            "pixel_accuracy": (
                float(m[idx, idx] / gt_totals[idx]) if gt_totals[idx] > 0 else None
            ),
            "iou": float(m[idx, idx] / union[idx]) if union[idx] > 0 else None,
        }
    report = {
        "mpa": mean_pixel_accuracy(m),
        "miou": mean_iou(m),
        "per_class": per_class,
        "zero_gt_classes_excluded": [
            name for idx, name in enumerate(palette.names) if gt_totals[idx] == 0
        ],
    }
    if baseline_classes is not None:
        mb = confusion(gt_classes, baseline_classes, len(palette))
        deltas = {}
        for key, fn in (("mpa", mean_pixel_accuracy), ("miou", mean_iou)):
            value = compare_to_baseline(report[key], fn(mb))
            deltas[key] = {"value": value, "formatted": format_delta(value)}
        report["baseline"] = {"mpa": mean_pixel_accuracy(mb), "miou": mean_iou(mb)}
        report["delta_vs_baseline"] = deltas
    return report

"""Classification metrics (OA, AA, Cohen's kappa), map prediction, rendering.

Confusion-matrix convention: rows are true classes, columns predictions,
both 1-based externally and 0-based in the array. AA averages per-class
accuracy over classes that actually occur; absent classes are excluded and
flagged rather than counted as zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cube import extract_patches
from .errors import ValidationError
from .nets import Network

# Fixed 17-entry palette (index 0 = black for unlabeled); enough for the
# 16-class benchmark cubes and documented in the README.
DEFAULT_PALETTE = [
    (0, 0, 0),
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 190),
    (0, 128, 128),
    (170, 110, 40),
    (255, 250, 200),
    (128, 0, 0),
    (128, 128, 128),
    (255, 215, 180),
]


@dataclass
class MetricsReport:
    confusion: np.ndarray
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray
    absent_classes: list[int] = field(default_factory=list)

    def to_dict(self):
        return {
            "confusion": self.confusion.tolist(),
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
            "per_class": [None if np.isnan(v) else float(v) for v in self.per_class],
            "absent_classes": self.absent_classes,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def format_percent(self):
        """Two-decimal percent lines in the conventional reporting style."""
        lines = [
            f"OA(%)    {100 * self.oa:.2f}",
            f"AA(%)    {100 * self.aa:.2f}",
            f"kappa(%) {100 * self.kappa:.2f}",
        ]
        for i, v in enumerate(self.per_class, start=1):
            shown = "absent" if np.isnan(v) else f"{100 * v:.2f}"
            lines.append(f"C{i}(%)    {shown}")
        return "\n".join(lines)


def confusion_matrix(preds, truths, class_count) -> np.ndarray:
    """Count matrix: entry (i, j) is how often true class i+1 got predicted j+1."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    truths = np.asarray(truths, dtype=np.int64).ravel()
    if preds.shape != truths.shape:
        raise ValueError(f"{len(preds)} predictions vs {len(truths)} truths")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    if preds.size == 0:
        return cm
    if preds.min() < 1 or preds.max() > class_count:
        raise ValueError(f"predictions outside 1..{class_count}")
    if truths.min() < 1 or truths.max() > class_count:
        raise ValueError(f"truths outside 1..{class_count}")
    np.add.at(cm, (truths - 1, preds - 1), 1)
    return cm


def metrics(confusion) -> MetricsReport:
    """OA, AA, kappa and per-class accuracies from a confusion matrix."""
    cm = np.asarray(confusion, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion matrix has negative counts")
    total = int(cm.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")

    row_sums = cm.sum(axis=1)
    col_sums = cm.sum(axis=0)
    diag = np.diag(cm)

    oa = float(diag.sum() / total)
    per_class = np.full(cm.shape[0], np.nan)
    present = row_sums > 0
    per_class[present] = diag[present] / row_sums[present]
    absent = [int(i + 1) for i in np.nonzero(~present)[0]]
    aa = float(per_class[present].mean())

    p_e = float((row_sums * col_sums).sum() / total**2)
    if p_e == 1.0:
        # both marginals concentrated on one class; perfect agreement iff oa == 1
        kappa = 1.0 if oa == 1.0 else 0.0
    else:
        kappa = float((oa - p_e) / (1.0 - p_e))
    return MetricsReport(
        confusion=cm,
        oa=oa,
        aa=aa,
        kappa=kappa,
        per_class=per_class,
        absent_classes=absent,
    )


def predict_labels(params, cube, coords, batch_size=512) -> np.ndarray:
    """Predicted class (1-based) for each (row, col); argmax of class_probs,
    ties to the lowest class index."""
    net = Network(params.config)
    if params.config.bands != cube.bands:
        raise ValidationError(
            f"checkpoint expects {params.config.bands} bands, cube has {cube.bands}"
        )
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    s = params.config.patch_size
    out = np.empty(len(coords), dtype=np.int32)
    for start in range(0, len(coords), batch_size):
        chunk = coords[start : start + batch_size]
        patches = extract_patches(cube, chunk, s)
        probs = net.forward(params, patches).class_probs
        out[start : start + len(chunk)] = probs.argmax(axis=1) + 1
    return out


def eval_samples(params, samples, batch_size=512):
    """Predict classes for materialized patch samples (stored windows, not
    re-extracted from the cube); returns (preds, truths) 1-based arrays."""
    net = Network(params.config)
    preds = np.empty(len(samples), dtype=np.int32)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x = np.stack([s.x for s in chunk])
        probs = net.forward(params, x).class_probs
        preds[start : start + len(chunk)] = probs.argmax(axis=1) + 1
    truths = np.array([s.y for s in samples], dtype=np.int32)
    return preds, truths


def predict_map(params, cube, restrict_to=None, include_unlabeled=False,
                batch_size=512) -> np.ndarray:
    """Per-pixel predicted label map (H, W); skipped pixels stay 0.

    By default predicts every labeled pixel; restrict_to limits prediction to
    the given (row, col) list, and include_unlabeled=True covers the whole
    scene.
    """
    if restrict_to is not None:
        coords = np.asarray(restrict_to, dtype=np.int64).reshape(-1, 2)
    elif include_unlabeled:
        rr, cc = np.meshgrid(np.arange(cube.height), np.arange(cube.width), indexing="ij")
        coords = np.column_stack([rr.ravel(), cc.ravel()])
    else:
        rows, cols = np.nonzero(cube.labels > 0)
        coords = np.column_stack([rows, cols])
    labels = np.zeros((cube.height, cube.width), dtype=np.int32)
    if len(coords):
        labels[coords[:, 0], coords[:, 1]] = predict_labels(
            params, cube, coords, batch_size=batch_size
        )
    return labels


def render_map(labels, palette=None) -> bytes:
    """Binary PPM (P6) image of a label map, one pixel per label."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
    palette = DEFAULT_PALETTE if palette is None else palette
    if labels.size and labels.max() >= len(palette):
        raise ValueError(
            f"label {int(labels.max())} exceeds palette of {len(palette)} colors"
        )
    if labels.size and labels.min() < 0:
        raise ValueError("labels must be >= 0")
    height, width = labels.shape
    lut = np.asarray(palette, dtype=np.uint8)
    rgb = lut[labels]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + rgb.tobytes()


def write_map(path_prefix, labels, palette=None, class_names=None):
    """Write map.ppm plus a legend.json side file mapping labels to colors."""
    palette = DEFAULT_PALETTE if palette is None else palette
    ppm = render_map(labels, palette)
    ppm_path = f"{path_prefix}.ppm"
    with open(ppm_path, "wb") as fh:
        fh.write(ppm)
    legend = {}
    used = sorted(int(v) for v in np.unique(labels))
    for label in used:
        name = "unlabeled" if label == 0 else (
            class_names[label - 1] if class_names and label - 1 < len(class_names)
            else f"class_{label}"
        )
        legend[str(label)] = {"color": list(palette[label]), "name": name}
    legend_path = f"{path_prefix}_legend.json"
    with open(legend_path, "w") as fh:
        json.dump(legend, fh, indent=2)
    return ppm_path, legend_path

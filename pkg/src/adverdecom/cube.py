"""Hyperspectral cube I/O, normalization, patch windows, and train/test splits.

On-disk cube format (one directory per cube):
    manifest.json   {height, width, bands, class_count, class_names,
                     dtype:"f32", order:"row-major H,W,D", endianness:"little"}
    values.bin      raw float32, little-endian, row-major (H, W, D)
    labels.bin      raw uint16, little-endian, row-major (H, W); 0 = unlabeled
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    FormatError,
    InsufficientSamplesError,
    IntegrityError,
    ValidationError,
)

MANIFEST_NAME = "manifest.json"
VALUES_NAME = "values.bin"
LABELS_NAME = "labels.bin"


@dataclass
class HsiCube:
    """A hyperspectral image with per-pixel class labels.

    values has shape (height, width, bands); labels has shape (height, width)
    with 0 meaning unlabeled and 1..class_count the land-cover classes.
    """

    height: int
    width: int
    bands: int
    values: np.ndarray
    labels: np.ndarray
    class_count: int
    class_names: list[str]
    name: str = "cube"

    def validate(self):
        if self.values.shape != (self.height, self.width, self.bands):
            raise ValidationError(
                f"values shape {self.values.shape} does not match manifest "
                f"({self.height}, {self.width}, {self.bands})"
            )
        if self.labels.shape != (self.height, self.width):
            raise ValidationError(
                f"labels shape {self.labels.shape} does not match manifest "
                f"({self.height}, {self.width})"
            )
        if not np.isfinite(self.values).all():
            raise ValidationError("cube values contain NaN or Inf")
        lmin, lmax = int(self.labels.min()), int(self.labels.max())
        if lmin < 0 or lmax > self.class_count:
            raise ValidationError(
                f"labels span [{lmin}, {lmax}], outside 0..{self.class_count}"
            )
        if len(self.class_names) != self.class_count:
            raise ValidationError(
                f"{len(self.class_names)} class names for {self.class_count} classes"
            )
        return self


@dataclass
class PatchSample:
    """One training/testing unit: an s*s*d window plus its labels.

    y is the land-cover class (1..class_count), z the pseudo-environment
    label (0 until assigned), (row, col) the center pixel of the window.
    """

    x: np.ndarray
    y: int
    z: int
    row: int
    col: int


@dataclass
class SplitSpec:
    """Train/test split request: either per-class counts or explicit indices."""

    per_class_train_counts: dict[int, int] | None = None
    train_indices: list[tuple[int, int]] | None = None
    test_indices: list[tuple[int, int]] | None = None
    seed: int = 0

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        if "per_class_train" in raw:
            counts = {int(k): int(v) for k, v in raw["per_class_train"].items()}
            return cls(per_class_train_counts=counts, seed=int(raw.get("seed", 0)))
        if "train" in raw and "test" in raw:
            return cls(
                train_indices=[tuple(rc) for rc in raw["train"]],
                test_indices=[tuple(rc) for rc in raw["test"]],
                seed=int(raw.get("seed", 0)),
            )
        raise FormatError(f"split file {path} has neither per_class_train nor train/test lists")

    def to_json(self, path):
        if self.per_class_train_counts is not None:
            payload = {
                "per_class_train": {str(k): v for k, v in self.per_class_train_counts.items()},
                "seed": self.seed,
            }
        else:
            payload = {
                "seed": self.seed,
                "train": [list(rc) for rc in self.train_indices],
                "test": [list(rc) for rc in self.test_indices],
            }
        with open(path, "w") as fh:
            json.dump(payload, fh)


def save_cube(cube: HsiCube, path):
    """Write a cube directory (manifest.json, values.bin, labels.bin)."""
    cube.validate()
    os.makedirs(path, exist_ok=True)
    manifest = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "class_count": cube.class_count,
        "class_names": cube.class_names,
        "name": cube.name,
        "dtype": "f32",
        "order": "row-major H,W,D",
        "endianness": "little",
    }
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2)
    cube.values.astype("<f4").tofile(os.path.join(path, VALUES_NAME))
    cube.labels.astype("<u2").tofile(os.path.join(path, LABELS_NAME))


def load_cube(path) -> HsiCube:
    """Load a cube directory written by save_cube.

    Raises FormatError for a missing/corrupt manifest, IntegrityError when
    payload sizes disagree with the manifest, ValidationError for NaN values
    or labels outside 0..class_count.
    """
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise FormatError(f"no {MANIFEST_NAME} in {path}")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        height = int(manifest["height"])
        width = int(manifest["width"])
        bands = int(manifest["bands"])
        class_count = int(manifest["class_count"])
        class_names = list(manifest["class_names"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"corrupt manifest in {path}: {exc}") from exc
    if manifest.get("dtype", "f32") != "f32":
        raise FormatError(f"unsupported dtype {manifest.get('dtype')!r} in {path}")

    values_path = os.path.join(path, VALUES_NAME)
    labels_path = os.path.join(path, LABELS_NAME)
    for p in (values_path, labels_path):
        if not os.path.isfile(p):
            raise FormatError(f"missing payload {os.path.basename(p)} in {path}")

    expected_values = height * width * bands * 4
    actual_values = os.path.getsize(values_path)
    if actual_values != expected_values:
        raise IntegrityError(
            f"values.bin is {actual_values} bytes, manifest implies {expected_values}"
        )
    expected_labels = height * width * 2
    actual_labels = os.path.getsize(labels_path)
    if actual_labels != expected_labels:
        raise IntegrityError(
            f"labels.bin is {actual_labels} bytes, manifest implies {expected_labels}"
        )

    values = np.fromfile(values_path, dtype="<f4").reshape(height, width, bands)
    labels = np.fromfile(labels_path, dtype="<u2").reshape(height, width).astype(np.int32)
    cube = HsiCube(
        height=height,
        width=width,
        bands=bands,
        values=values,
        labels=labels,
        class_count=class_count,
        class_names=class_names,
        name=manifest.get("name", os.path.basename(os.path.normpath(path))),
    )
    return cube.validate()


def normalize_bands(cube: HsiCube) -> HsiCube:
    """Rescale each band linearly to [0, 1] over the whole cube.

    Constant bands map to all zeros. Labels are untouched; a new cube is
    returned and the input is left as-is.
    """
    if not np.isfinite(cube.values).all():
        raise ValidationError("cube values contain NaN or Inf")
    v = cube.values.astype(np.float32)
    vmin = v.min(axis=(0, 1), keepdims=True)
    vmax = v.max(axis=(0, 1), keepdims=True)
    span = vmax - vmin
    # constant bands: span 0 -> divide by 1, numerator 0 -> all zeros
    safe = np.where(span > 0, span, 1.0).astype(np.float32)
    out = (v - vmin) / safe
    return HsiCube(
        height=cube.height,
        width=cube.width,
        bands=cube.bands,
        values=out.astype(np.float32),
        labels=cube.labels.copy(),
        class_count=cube.class_count,
        class_names=list(cube.class_names),
        name=cube.name,
    )


def _reflect_indices(center: int, half: int, n: int) -> np.ndarray:
    """Window indices center-half..center+half reflected at the borders.

    Mirror reflection about the edge pixel (the edge itself is not repeated),
    with period 2(n-1) so windows wider than the axis stay defined.
    """
    idx = np.arange(center - half, center + half + 1)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    m = np.mod(idx, period)
    return np.where(m < n, m, period - m)


def extract_patch(cube: HsiCube, row: int, col: int, s: int) -> np.ndarray:
    """Return the s*s*d window centered at (row, col), reflect-padded at borders."""
    if s < 1 or s % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 1, got {s}")
    if not (0 <= row < cube.height and 0 <= col < cube.width):
        raise IndexError(f"({row}, {col}) outside cube {cube.height}x{cube.width}")
    half = s // 2
    rows = _reflect_indices(row, half, cube.height)
    cols = _reflect_indices(col, half, cube.width)
    return cube.values[np.ix_(rows, cols)]


def extract_patches(cube: HsiCube, coords, s: int) -> np.ndarray:
    """Vectorized extract_patch over a list of (row, col); returns (N, s, s, d)."""
    if s < 1 or s % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 1, got {s}")
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    half = s // 2
    if half == 0:
        return cube.values[coords[:, 0], coords[:, 1]][:, None, None, :]
    if half > cube.height - 1 or half > cube.width - 1:
        # np.pad reflect caps at n-1; fall back to the index-mapped scalar path
        return np.stack([extract_patch(cube, r, c, s) for r, c in coords])
    padded = np.pad(cube.values, ((half, half), (half, half), (0, 0)), mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (s, s), axis=(0, 1))
    # windows: (H, W, d, s, s) -> gather centers, put bands last
    out = windows[coords[:, 0], coords[:, 1]]
    return np.ascontiguousarray(np.moveaxis(out, 1, 3))


def make_split(cube: HsiCube, spec: SplitSpec, patch_size: int = 5):
    """Materialize (train, test) PatchSample lists from a split spec.

    Per-class mode draws counts uniformly without replacement, seeded by
    spec.seed; the remaining labeled pixels of each class become the test
    set. Explicit-index mode uses the given coordinate lists verbatim.
    Pseudo-environment labels start at 0 (unassigned).
    """
    if spec.per_class_train_counts is not None:
        train_coords, test_coords = _split_per_class(cube, spec)
    elif spec.train_indices is not None and spec.test_indices is not None:
        train_coords = [tuple(rc) for rc in spec.train_indices]
        test_coords = [tuple(rc) for rc in spec.test_indices]
        _check_explicit(cube, train_coords, test_coords)
    else:
        raise ValueError("SplitSpec has neither per-class counts nor explicit indices")

    train = _materialize(cube, train_coords, patch_size)
    test = _materialize(cube, test_coords, patch_size)
    return train, test


def _split_per_class(cube, spec):
    rng = np.random.default_rng(spec.seed)
    labels = cube.labels
    train_coords, test_coords = [], []
    for cls in range(1, cube.class_count + 1):
        rows, cols = np.nonzero(labels == cls)
        available = len(rows)
        want = int(spec.per_class_train_counts.get(cls, 0))
        if want > available:
            raise InsufficientSamplesError(
                f"class {cls}: requested {want} train samples, only {available} labeled"
            )
        order = rng.permutation(available)
        picked = order[:want]
        rest = order[want:]
        train_coords.extend(zip(rows[picked].tolist(), cols[picked].tolist()))
        test_coords.extend(zip(rows[rest].tolist(), cols[rest].tolist()))
    return train_coords, test_coords


def _check_explicit(cube, train_coords, test_coords):
    overlap = set(train_coords) & set(test_coords)
    if overlap:
        raise ValidationError(f"train and test share {len(overlap)} pixels")
    for row, col in train_coords + test_coords:
        if not (0 <= row < cube.height and 0 <= col < cube.width):
            raise ValidationError(f"split index ({row}, {col}) outside cube")
        if cube.labels[row, col] == 0:
            raise ValidationError(f"split references unlabeled pixel ({row}, {col})")


def _materialize(cube, coords, patch_size):
    if not coords:
        return []
    patches = extract_patches(cube, coords, patch_size)
    return [
        PatchSample(
            x=patches[i],
            y=int(cube.labels[row, col]),
            z=0,
            row=int(row),
            col=int(col),
        )
        for i, (row, col) in enumerate(coords)
    ]


def stack_batch(samples):
    """Stack a list of PatchSample into (x, y, z) arrays for the networks."""
    x = np.stack([s.x for s in samples]).astype(np.float32)
    y = np.array([s.y for s in samples], dtype=np.int64)
    z = np.array([s.z for s in samples], dtype=np.int64)
    return x, y, z

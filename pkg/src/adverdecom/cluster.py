"""Environmental pseudo-classes: k-means over pixel spectra.

Samples are grouped by spectral proximity of their center pixels; the
resulting cluster index (1-based) becomes the pseudo-environment label the
discriminator is trained to predict.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, IntegrityError, ValidationError

MODEL_MANIFEST = "envmodel.json"
CENTERS_NAME = "centers.bin"


@dataclass
class EnvModel:
    """Fitted pseudo-environment clustering: K centers over d-dim spectra."""

    k: int
    centers: np.ndarray
    objective: float
    iterations_run: int
    objective_history: list[float] = field(default_factory=list)


def _sq_dists(points, centers):
    # (N, K) squared euclidean distances
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _objective(points, centers):
    return float(_sq_dists(points, centers).min(axis=1).sum())


def _kmeanspp_init(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=points.dtype)
    centers[0] = points[rng.integers(n)]
    for j in range(1, k):
        d2 = _sq_dists(points, centers[:j]).min(axis=1)
        total = d2.sum()
        if total <= 0:
            # all points coincide with chosen centers; any pick is equivalent
            centers[j] = points[rng.integers(n)]
            continue
        centers[j] = points[rng.choice(n, p=d2 / total)]
    return centers


def kmeans_fit(spectra, k, seed=0, max_iter=300, tol=1e-6) -> EnvModel:
    """Lloyd's algorithm with seeded k-means++ initialization.

    Stops when the largest center shift (L2) drops to tol or max_iter is
    reached. Empty clusters are re-seeded to the point currently farthest
    from its assigned center. The sum-of-squared-distances objective is
    recorded after every iteration and is non-increasing.
    """
    points = np.asarray(spectra, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"spectra must be 2-D (N, d), got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"need at least K={k} points, got {n}")
    if not np.isfinite(points).all():
        raise ValidationError("spectra contain NaN or Inf")

    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(points, k, rng)

    history = []
    iterations = 0
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        assign = d2.argmin(axis=1)
        nearest = d2[np.arange(n), assign]

        new_centers = centers.copy()
        for j in range(k):
            mask = assign == j
            if mask.any():
                new_centers[j] = points[mask].mean(axis=0)
            else:
                # re-seed to the point farthest from its current center
                far = int(nearest.argmax())
                new_centers[j] = points[far]
                nearest[far] = 0.0
        iterations += 1
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        history.append(_objective(points, centers))
        if shift <= tol:
            break

    return EnvModel(
        k=k,
        centers=centers,
        objective=history[-1] if history else _objective(points, centers),
        iterations_run=iterations,
        objective_history=history,
    )


def assign_pseudo_class(x, model: EnvModel) -> int:
    """Nearest-center index in 1..K; ties resolve to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.centers.shape[1],):
        raise ValueError(
            f"spectrum has shape {x.shape}, centers expect ({model.centers.shape[1]},)"
        )
    d2 = ((model.centers - x) ** 2).sum(axis=1)
    return int(d2.argmin()) + 1


def assign_pseudo_classes(points, model: EnvModel) -> np.ndarray:
    """Vectorized assign_pseudo_class; returns int array of labels in 1..K."""
    points = np.asarray(points, dtype=np.float64)
    return _sq_dists(points, model.centers).argmin(axis=1) + 1


def center_spectrum(sample):
    """Center-pixel spectrum of a patch sample (the d-vector used for clustering)."""
    s = sample.x.shape[0]
    return sample.x[s // 2, s // 2, :]


def label_samples(samples, model: EnvModel, spectrum_of=center_spectrum):
    """Set z on every sample from its center-pixel spectrum. Idempotent."""
    if not samples:
        return samples
    points = np.stack([spectrum_of(s) for s in samples])
    labels = assign_pseudo_classes(points, model)
    for sample, z in zip(samples, labels):
        sample.z = int(z)
    return samples


def save_env_model(model: EnvModel, path):
    """Write envmodel.json plus raw float32 little-endian centers."""
    os.makedirs(path, exist_ok=True)
    manifest = {
        "k": model.k,
        "bands": int(model.centers.shape[1]),
        "objective": model.objective,
        "iterations_run": model.iterations_run,
        "dtype": "f32",
        "endianness": "little",
    }
    with open(os.path.join(path, MODEL_MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2)
    model.centers.astype("<f4").tofile(os.path.join(path, CENTERS_NAME))


def load_env_model(path) -> EnvModel:
    manifest_path = os.path.join(path, MODEL_MANIFEST)
    if not os.path.isfile(manifest_path):
        raise FormatError(f"no {MODEL_MANIFEST} in {path}")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        k = int(manifest["k"])
        bands = int(manifest["bands"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"corrupt env model manifest in {path}: {exc}") from exc
    centers_path = os.path.join(path, CENTERS_NAME)
    if not os.path.isfile(centers_path):
        raise FormatError(f"missing {CENTERS_NAME} in {path}")
    expected = k * bands * 4
    actual = os.path.getsize(centers_path)
    if actual != expected:
        raise IntegrityError(f"centers.bin is {actual} bytes, manifest implies {expected}")
    centers = np.fromfile(centers_path, dtype="<f4").reshape(k, bands).astype(np.float64)
    return EnvModel(
        k=k,
        centers=centers,
        objective=float(manifest.get("objective", 0.0)),
        iterations_run=int(manifest.get("iterations_run", 0)),
    )

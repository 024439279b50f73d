"""Synthetic hyperspectral scenes obeying the multiplicative intrinsic model.

Every scene factors exactly as values = reflectance * shading (elementwise)
before noise. Reflectance is a pure function of the pixel's land-cover
class; shading is a pure function of its environment region, smooth over
band index and different per wavelength. That makes the environmental-
robustness claim testable at desk scale: the generator knows the true
factorization and the true environment map.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from .cluster import assign_pseudo_classes, kmeans_fit
from .cube import HsiCube
from .errors import ValidationError

ENV_MAP_NAME = "env_map.bin"
REFLECTANCE_NAME = "R.bin"
SHADING_NAME = "S.bin"
SCENE_SPEC_NAME = "scene_spec.json"

# Spectral texture of the generator. Class signatures share a smooth base
# spectrum and differ by a scaled random bump mixture; the scale keeps class
# separation comparable to the environmental distortion so classification
# genuinely suffers from shading variation.
CLASS_BUMP_SCALE = 0.22
BASE_BUMPS = 3
CLASS_BUMPS_MIN = 2
CLASS_BUMPS_MAX = 4
SHADING_SMOOTH_FRACTION = 0.12  # gaussian smoothing width as a fraction of d


@dataclass
class SceneSpec:
    """Parameters of a generated scene; seed makes generation deterministic."""

    height: int = 64
    width: int = 64
    bands: int = 40
    class_count: int = 5
    env_count: int = 3
    shading_amplitude: float = 0.5
    noise_sigma: float = 0.01
    region_scale: int = 16
    seed: int = 0

    def validate(self):
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if self.env_count < 1:
            raise ValueError(f"env_count must be >= 1, got {self.env_count}")
        if self.bands < 4:
            raise ValueError(f"bands must be >= 4, got {self.bands}")
        if not 0.0 <= self.shading_amplitude < 1.0:
            raise ValueError(
                f"shading_amplitude must be in [0, 1), got {self.shading_amplitude}"
            )
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.height < 1 or self.width < 1 or self.region_scale < 1:
            raise ValueError("height, width, region_scale must be positive")
        return self

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        return cls(**raw).validate()

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)


@dataclass
class SyntheticScene:
    """A generated cube plus its ground-truth factorization and env regions."""

    cube: HsiCube
    env_map: np.ndarray
    reflectance: np.ndarray
    shading: np.ndarray
    spec: SceneSpec


def _voronoi_labels(height, width, n_regions, region_scale, rng):
    """Contiguous blob regions: nearest random site wins, sites labeled round-robin."""
    n_sites = max(n_regions, round(height * width / region_scale**2))
    sites = np.column_stack(
        [rng.uniform(0, height, size=n_sites), rng.uniform(0, width, size=n_sites)]
    )
    site_labels = np.arange(n_sites) % n_regions + 1
    rng.shuffle(site_labels)
    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    pix = np.column_stack([rr.ravel(), cc.ravel()]).astype(np.float64)
    d2 = ((pix[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    return site_labels[nearest].reshape(height, width).astype(np.int32)


def _bump_mixture(bands, n_bumps, rng):
    b = np.arange(bands, dtype=np.float64)
    mix = np.zeros(bands)
    for _ in range(n_bumps):
        mu = rng.uniform(0, bands - 1)
        sigma = rng.uniform(bands / 20, bands / 6)
        amp = rng.uniform(0.3, 1.0)
        mix += amp * np.exp(-0.5 * ((b - mu) / sigma) ** 2)
    return mix


def _class_signatures(spec, rng):
    """Smooth positive spectra in [0.1, 1]: shared base plus class-specific bumps."""
    base = _bump_mixture(spec.bands, BASE_BUMPS, rng)
    signatures = np.empty((spec.class_count, spec.bands))
    for c in range(spec.class_count):
        n_bumps = int(rng.integers(CLASS_BUMPS_MIN, CLASS_BUMPS_MAX + 1))
        delta = _bump_mixture(spec.bands, n_bumps, rng)
        raw = base + CLASS_BUMP_SCALE * delta
        signatures[c] = 0.1 + 0.9 * raw / raw.max()
    return signatures


def _shading_curves(spec, rng):
    """Per-environment multiplicative curves 1 + amplitude*w, smooth w in [-1, 1]."""
    d = spec.bands
    b = np.arange(d, dtype=np.float64)
    width = max(d * SHADING_SMOOTH_FRACTION, 1.0)
    kernel = np.exp(-0.5 * ((np.arange(-3 * int(width), 3 * int(width) + 1)) / width) ** 2)
    kernel /= kernel.sum()
    curves = np.empty((spec.env_count, d))
    for e in range(spec.env_count):
        rough = rng.standard_normal(d + 2 * len(kernel))
        smooth = np.convolve(rough, kernel, mode="same")[len(kernel) : len(kernel) + d]
        peak = np.abs(smooth).max()
        w = smooth / peak if peak > 0 else np.zeros(d)
        curves[e] = 1.0 + spec.shading_amplitude * w
    return curves


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Generate a scene: Voronoi class/env regions, per-class reflectance,
    per-environment shading, values = R * S (+ optional gaussian noise, clipped
    at zero). Deterministic per spec.seed; exact factorization when sigma = 0.
    """
    spec.validate()
    class_rng = np.random.default_rng([spec.seed, 101])
    env_rng = np.random.default_rng([spec.seed, 202])
    noise_rng = np.random.default_rng([spec.seed, 303])

    class_map = _voronoi_labels(
        spec.height, spec.width, spec.class_count, spec.region_scale, class_rng
    )
    env_map = _voronoi_labels(
        spec.height, spec.width, spec.env_count, spec.region_scale, env_rng
    )
    signatures = _class_signatures(spec, class_rng).astype(np.float32)
    curves = _shading_curves(spec, env_rng).astype(np.float32)

    reflectance = signatures[class_map - 1]  # (H, W, d)
    shading = curves[env_map - 1]
    values = reflectance * shading
    if spec.noise_sigma > 0:
        noise = noise_rng.normal(0.0, spec.noise_sigma, size=values.shape)
        values = np.maximum(values + noise.astype(np.float32), 0.0).astype(np.float32)

    cube = HsiCube(
        height=spec.height,
        width=spec.width,
        bands=spec.bands,
        values=values,
        labels=class_map.astype(np.int32),
        class_count=spec.class_count,
        class_names=[f"class_{c}" for c in range(1, spec.class_count + 1)],
        name=f"synth_seed{spec.seed}",
    ).validate()
    return SyntheticScene(
        cube=cube,
        env_map=env_map,
        reflectance=reflectance,
        shading=shading,
        spec=spec,
    )


def best_permutation_agreement(pred, truth, k_pred, k_truth):
    """Max label agreement over one-to-one cluster relabelings.

    Hungarian assignment on the contingency table; pred/truth are 1-based
    label arrays of equal length.
    """
    from scipy.optimize import linear_sum_assignment

    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    n = len(truth)
    contingency = np.zeros((k_pred, k_truth), dtype=np.int64)
    np.add.at(contingency, (pred - 1, truth - 1), 1)
    rows, cols = linear_sum_assignment(contingency, maximize=True)
    return contingency[rows, cols].sum() / n


def scene_env_recoverability(scene: SyntheticScene, k: int, seed: int = 0) -> float:
    """How well k-means over pixel spectra recovers the true environment map.

    Returns the best label-permutation agreement in [0, 1]; a sanity metric
    for the pseudo-class premise (near 1 when shading separates environments,
    near 1/k when there is no environmental signal).
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    spectra = scene.cube.values.reshape(-1, scene.cube.bands).astype(np.float64)
    model = kmeans_fit(spectra, k, seed=seed)
    pred = assign_pseudo_classes(spectra, model)
    return best_permutation_agreement(pred, scene.env_map.ravel(), k, scene.spec.env_count)


def save_scene(scene: SyntheticScene, path, keep_intrinsics=False):
    """Write the cube directory plus env_map.bin (uint16) and the scene spec;
    optionally the ground-truth R/S factors for oracle tests."""
    from .cube import save_cube

    save_cube(scene.cube, path)
    scene.env_map.astype("<u2").tofile(os.path.join(path, ENV_MAP_NAME))
    scene.spec.to_json(os.path.join(path, SCENE_SPEC_NAME))
    if keep_intrinsics:
        scene.reflectance.astype("<f4").tofile(os.path.join(path, REFLECTANCE_NAME))
        scene.shading.astype("<f4").tofile(os.path.join(path, SHADING_NAME))


def load_env_map(path, height, width):
    env_path = os.path.join(path, ENV_MAP_NAME)
    if not os.path.isfile(env_path):
        raise ValidationError(f"no {ENV_MAP_NAME} in {path}")
    return np.fromfile(env_path, dtype="<u2").reshape(height, width).astype(np.int32)

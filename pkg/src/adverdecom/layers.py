"""Differentiable primitives with explicit reverse-mode backward passes.

Conventions: 2-D tensors are (B, H, W, C), 3-D tensors are (B, D, H, W, C).
Each layer exposes param_shapes() keyed by its own name, forward(params, x)
returning (y, cache), and backward(params, cache, dy, grads) returning dx.
Passing grads=None backpropagates to the input without accumulating
parameter gradients (used when a subnetwork is frozen).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def check_finite(name, arr):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite activation in layer {name!r}")
    return arr


class Dense:
    def __init__(self, name, in_dim, out_dim):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim

    def param_shapes(self):
        return {f"{self.name}.w": (self.in_dim, self.out_dim), f"{self.name}.b": (self.out_dim,)}

    def forward(self, params, x):
        y = x @ params[f"{self.name}.w"] + params[f"{self.name}.b"]
        return check_finite(self.name, y), x

    def backward(self, params, cache, dy, grads):
        x = cache
        if grads is not None:
            grads[f"{self.name}.w"] += x.T @ dy
            grads[f"{self.name}.b"] += dy.sum(axis=0)
        return dy @ params[f"{self.name}.w"].T


class Relu:
    def __init__(self, name):
        self.name = name

    def param_shapes(self):
        return {}

    def forward(self, params, x):
        return np.maximum(x, 0), x > 0

    def backward(self, params, cache, dy, grads):
        return dy * cache


class Conv2d:
    """3x3-style 2-D convolution, stride 1, zero 'same' padding."""

    def __init__(self, name, in_ch, out_ch, kernel=3):
        self.name = name
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel

    def param_shapes(self):
        k = self.kernel
        return {
            f"{self.name}.w": (k, k, self.in_ch, self.out_ch),
            f"{self.name}.b": (self.out_ch,),
        }

    def forward(self, params, x):
        w = params[f"{self.name}.w"]
        b = params[f"{self.name}.b"]
        batch, height, width, _ = x.shape
        k = self.kernel
        pad = k // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        y = np.broadcast_to(b, (batch, height, width, self.out_ch)).copy()
        for di in range(k):
            for dj in range(k):
                window = xp[:, di : di + height, dj : dj + width, :].reshape(-1, self.in_ch)
                y += (window @ w[di, dj]).reshape(batch, height, width, self.out_ch)
        return check_finite(self.name, y), xp

    def backward(self, params, cache, dy, grads):
        w = params[f"{self.name}.w"]
        xp = cache
        batch = dy.shape[0]
        height, width = dy.shape[1], dy.shape[2]
        k = self.kernel
        pad = k // 2
        dy_flat = dy.reshape(-1, self.out_ch)
        dxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                window = xp[:, di : di + height, dj : dj + width, :].reshape(-1, self.in_ch)
                if grads is not None:
                    grads[f"{self.name}.w"][di, dj] += window.T @ dy_flat
                dxp[:, di : di + height, dj : dj + width, :] += (
                    dy_flat @ w[di, dj].T
                ).reshape(batch, height, width, self.in_ch)
        if grads is not None:
            grads[f"{self.name}.b"] += dy_flat.sum(axis=0)
        return dxp[:, pad : pad + height, pad : pad + width, :]


class Conv3d:
    """3-D convolution, stride 1; spatial padding 'same', spectral padding
    'same' or 'valid'. The spectral kernel is clamped to the input depth so
    shallow cubes stay valid."""

    def __init__(self, name, in_ch, out_ch, kernel, depth_in, spectral_mode="same"):
        self.name = name
        self.in_ch = in_ch
        self.out_ch = out_ch
        kd, kh, kw = kernel
        self.kd = min(kd, depth_in) if spectral_mode == "valid" else kd
        self.kh = kh
        self.kw = kw
        self.spectral_mode = spectral_mode
        self.depth_in = depth_in
        if spectral_mode == "valid":
            self.depth_out = depth_in - self.kd + 1
        elif spectral_mode == "same":
            self.depth_out = depth_in
        else:
            raise ValueError(f"unknown spectral_mode {spectral_mode!r}")

    def param_shapes(self):
        return {
            f"{self.name}.w": (self.kd, self.kh, self.kw, self.in_ch, self.out_ch),
            f"{self.name}.b": (self.out_ch,),
        }

    def _pads(self):
        pd = self.kd // 2 if self.spectral_mode == "same" else 0
        return pd, self.kh // 2, self.kw // 2

    def forward(self, params, x):
        w = params[f"{self.name}.w"]
        b = params[f"{self.name}.b"]
        batch, _, height, width, _ = x.shape
        pd, ph, pw = self._pads()
        xp = np.pad(x, ((0, 0), (pd, pd), (ph, ph), (pw, pw), (0, 0)))
        out = np.broadcast_to(
            b, (batch, self.depth_out, height, width, self.out_ch)
        ).copy()
        for dd in range(self.kd):
            for di in range(self.kh):
                for dj in range(self.kw):
                    window = xp[
                        :, dd : dd + self.depth_out, di : di + height, dj : dj + width, :
                    ].reshape(-1, self.in_ch)
                    out += (window @ w[dd, di, dj]).reshape(
                        batch, self.depth_out, height, width, self.out_ch
                    )
        return check_finite(self.name, out), xp

    def backward(self, params, cache, dy, grads):
        w = params[f"{self.name}.w"]
        xp = cache
        batch, depth_out, height, width, _ = dy.shape
        pd, ph, pw = self._pads()
        dy_flat = dy.reshape(-1, self.out_ch)
        dxp = np.zeros_like(xp)
        for dd in range(self.kd):
            for di in range(self.kh):
                for dj in range(self.kw):
                    window = xp[
                        :, dd : dd + depth_out, di : di + height, dj : dj + width, :
                    ].reshape(-1, self.in_ch)
                    if grads is not None:
                        grads[f"{self.name}.w"][dd, di, dj] += window.T @ dy_flat
                    dxp[:, dd : dd + depth_out, di : di + height, dj : dj + width, :] += (
                        dy_flat @ w[dd, di, dj].T
                    ).reshape(batch, depth_out, height, width, self.in_ch)
        if grads is not None:
            grads[f"{self.name}.b"] += dy_flat.sum(axis=0)
        return dxp[:, pd : pd + self.depth_in, ph : ph + height, pw : pw + width, :]


class GlobalAvgPool:
    """Mean over all axes between batch and channels."""

    def __init__(self, name):
        self.name = name

    def param_shapes(self):
        return {}

    def forward(self, params, x):
        axes = tuple(range(1, x.ndim - 1))
        return x.mean(axis=axes), x.shape

    def backward(self, params, cache, dy, grads):
        shape = cache
        count = int(np.prod(shape[1:-1]))
        expand = (shape[0],) + (1,) * (len(shape) - 2) + (shape[-1],)
        return np.broadcast_to(dy.reshape(expand), shape) / count


class Flatten:
    def __init__(self, name):
        self.name = name

    def param_shapes(self):
        return {}

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, dy, grads):
        return dy.reshape(cache)


class SpectralVolume:
    """Adapter (B, s, s, d) -> (B, d, s, s, 1): bands become conv depth."""

    def __init__(self, name):
        self.name = name

    def param_shapes(self):
        return {}

    def forward(self, params, x):
        return np.ascontiguousarray(np.moveaxis(x, 3, 1))[..., None], x.shape

    def backward(self, params, cache, dy, grads):
        return np.ascontiguousarray(np.moveaxis(dy[..., 0], 1, 3))


class MergeDepthChannels:
    """Adapter (B, D, H, W, C) -> (B, H, W, D*C) for a 3-D to 2-D handoff."""

    def __init__(self, name):
        self.name = name

    def param_shapes(self):
        return {}

    def forward(self, params, x):
        batch, depth, height, width, ch = x.shape
        moved = np.ascontiguousarray(np.moveaxis(x, 1, 3))
        return moved.reshape(batch, height, width, depth * ch), x.shape

    def backward(self, params, cache, dy, grads):
        batch, depth, height, width, ch = cache
        dy = dy.reshape(batch, height, width, depth, ch)
        return np.ascontiguousarray(np.moveaxis(dy, 3, 1))


class Stack:
    """A named sequence of layers with shared forward/backward plumbing."""

    def __init__(self, layers):
        self.layers = layers

    def param_shapes(self):
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes())
        return shapes

    def forward(self, params, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(params, x)
            caches.append(cache)
        return x, caches

    def backward(self, params, caches, dy, grads):
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(params, cache, dy, grads)
        return dy


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)

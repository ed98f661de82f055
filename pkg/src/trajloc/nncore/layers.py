"""Sequence layers built on :class:`Cell`, a dense layer, and inverted dropout."""

from __future__ import annotations

import numpy as np

from .cells import Cell, ShapeError, glorot


def apply_dropout(activations, rate, rng, training):
    """Inverted dropout. Returns ``(output, mask)``; ``mask`` is None when inactive."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return activations, None
    keep = rng.random(activations.shape) >= rate
    mask = keep / (1.0 - rate)
    return activations * mask, mask


class Recurrent:
    """A cell unrolled over time, left to right or (``reverse``) right to left."""

    def __init__(self, variant, input_size, hidden_size, rng=None, reverse=False):
        self.cell = Cell(variant, input_size, hidden_size, rng)
        self.reverse = reverse
        self.output_size = hidden_size
        self._cache = None

    @property
    def params(self):
        return self.cell.params

    @property
    def grads(self):
        return self.cell.grads

    def zero_grad(self):
        self.cell.zero_grad()

    def initial_state(self, batch):
        H = self.cell.hidden_size
        h = np.zeros((batch, H))
        return (h, np.zeros((batch, H)) if self.cell.has_cellstate else None)

    def step(self, x, state):
        """Inference-only single step; ``state`` is ``(h, c)``."""
        xw = x @ self.cell.params["Wx"] + self.cell.params["b"]
        h, c, _ = self.cell.step_projected(xw, *state)
        return h, (h, c)

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[2] != self.cell.input_size:
            raise ShapeError(f"expected (B, T, {self.cell.input_size}), got {X.shape}")
        B, T, _ = X.shape
        p = self.cell.params
        XW = X @ p["Wx"] + p["b"]
        out = np.empty((B, T, self.cell.hidden_size))
        h, c = self.initial_state(B)
        caches = [None] * T
        order = range(T - 1, -1, -1) if self.reverse else range(T)
        for t in order:
            h, c, caches[t] = self.cell.step_projected(XW[:, t], h, c)
            out[:, t] = h
        self._cache = (X, caches)
        return out

    def backward(self, dOut):
        X, caches = self._cache
        B, T, D = X.shape
        cell = self.cell
        dXW = np.empty((B, T, cell.params["Wx"].shape[1]))
        dh_next = np.zeros((B, cell.hidden_size))
        dc_next = np.zeros((B, cell.hidden_size)) if cell.has_cellstate else None
        order = range(T) if self.reverse else range(T - 1, -1, -1)
        for t in order:
            dXW[:, t], dh_next, dc_next = cell.step_backward(dOut[:, t] + dh_next, dc_next, caches[t])
        flat = dXW.reshape(B * T, -1)
        cell.grads["Wx"] += X.reshape(B * T, D).T @ flat
        cell.grads["b"] += flat.sum(axis=0)
        return dXW @ cell.params["Wx"].T


class Bidirectional:
    """Forward and backward recurrences over the same input, outputs concatenated."""

    def __init__(self, variant, input_size, hidden_size, rng=None):
        self.fwd = Recurrent(variant, input_size, hidden_size, rng)
        self.bwd = Recurrent(variant, input_size, hidden_size, rng, reverse=True)
        self.output_size = 2 * hidden_size

    @property
    def params(self):
        out = {f"fwd.{k}": v for k, v in self.fwd.params.items()}
        out.update({f"bwd.{k}": v for k, v in self.bwd.params.items()})
        return out

    @property
    def grads(self):
        out = {f"fwd.{k}": v for k, v in self.fwd.grads.items()}
        out.update({f"bwd.{k}": v for k, v in self.bwd.grads.items()})
        return out

    def zero_grad(self):
        self.fwd.zero_grad()
        self.bwd.zero_grad()

    def forward(self, X):
        return np.concatenate([self.fwd.forward(X), self.bwd.forward(X)], axis=2)

    def backward(self, dOut):
        H = self.fwd.output_size
        return self.fwd.backward(dOut[..., :H]) + self.bwd.backward(dOut[..., H:])


def bidirectional_step(fwd_params, bwd_params, input_sequence):
    """Run two parameter sets over a (T, D) or (B, T, D) sequence and concatenate.

    ``fwd_params`` / ``bwd_params`` are :class:`Cell` instances; the backward one
    reads the sequence right to left.
    """
    X = np.asarray(input_sequence, dtype=float)
    squeeze = X.ndim == 2
    if squeeze:
        X = X[None]
    halves = []
    for cell, reverse in ((fwd_params, False), (bwd_params, True)):
        layer = Recurrent(cell.variant, cell.input_size, cell.hidden_size, reverse=reverse)
        layer.cell = cell
        halves.append(layer.forward(X))
    out = np.concatenate(halves, axis=2)
    return out[0] if squeeze else out


ACTIVATIONS = {
    "linear": (lambda z: z, lambda z, a: np.ones_like(a)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(float)),
}


class Dense:
    """Affine map over the last axis, with optional activation."""

    def __init__(self, input_size, output_size, rng=None, activation="linear"):
        rng = rng if rng is not None else np.random.default_rng(0)
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.output_size = output_size
        self.params = {"W": glorot(rng, input_size, output_size), "b": np.zeros(output_size)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._cache = None

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.params["W"].shape[0]:
            raise ShapeError(f"expected last axis {self.params['W'].shape[0]}, got {X.shape}")
        z = X @ self.params["W"] + self.params["b"]
        a = ACTIVATIONS[self.activation][0](z)
        self._cache = (X, z, a)
        return a

    def backward(self, dA):
        X, z, a = self._cache
        dz = dA * ACTIVATIONS[self.activation][1](z, a)
        D = X.shape[-1]
        self.grads["W"] += X.reshape(-1, D).T @ dz.reshape(-1, dz.shape[-1])
        self.grads["b"] += dz.reshape(-1, dz.shape[-1]).sum(axis=0)
        return dz @ self.params["W"].T

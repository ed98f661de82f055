"""Vanilla, LSTM and GRU cells with hand-derived backward passes.

Gate weights are stored fused: ``Wx`` is ``(D, G*H)``, ``Wh`` is ``(H, G*H)``
and ``b`` is ``(G*H,)`` where ``G`` is the gate count of the variant.  Gate
order inside the fused blocks:

* vanilla: ``[a]``
* lstm: ``[input, forget, output, candidate]``
* gru: ``[update, reset, candidate]``
"""

from __future__ import annotations

import numpy as np

GATE_COUNT = {"vanilla": 1, "lstm": 4, "gru": 3}


class ShapeError(ValueError):
    """Raised when array shapes disagree with a cell or layer."""


def sigmoid(x):
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Cell:
    """One recurrent cell. Holds parameters and their gradient accumulators."""

    def __init__(self, variant: str, input_size: int, hidden_size: int, rng=None):
        if variant not in GATE_COUNT:
            raise ValueError(f"unknown cell variant {variant!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.variant = variant
        self.input_size = input_size
        self.hidden_size = hidden_size
        G, D, H = GATE_COUNT[variant], input_size, hidden_size
        Wx = np.concatenate([glorot(rng, D, H) for _ in range(G)], axis=1)
        Wh = np.concatenate([glorot(rng, H, H) for _ in range(G)], axis=1)
        self.params = {"Wx": Wx, "Wh": Wh, "b": np.zeros(G * H)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def has_cellstate(self) -> bool:
        return self.variant == "lstm"

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def gate_bias(self, gate: int) -> np.ndarray:
        """View onto the bias block of one gate (see module docstring for order)."""
        H = self.hidden_size
        return self.params["b"][gate * H:(gate + 1) * H]

    def check_input(self, x, h):
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise ShapeError(f"input must be (B, {self.input_size}), got {x.shape}")
        if h.shape != (x.shape[0], self.hidden_size):
            raise ShapeError(f"hidden must be ({x.shape[0]}, {self.hidden_size}), got {h.shape}")

    # -- forward -----------------------------------------------------------

    def step(self, x, h, c=None):
        """Single step from raw input. Returns ``(h, c, cache)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        h = np.atleast_2d(np.asarray(h, dtype=float))
        self.check_input(x, h)
        if self.variant == "lstm" and c is None:
            c = np.zeros_like(h)
        return self.step_projected(x @ self.params["Wx"] + self.params["b"], h, c)

    def step_projected(self, xw, h, c=None):
        """Single step given the precomputed ``x @ Wx + b``."""
        H = self.hidden_size
        Wh = self.params["Wh"]
        if self.variant == "vanilla":
            h_new = np.tanh(xw + h @ Wh)
            return h_new, None, (h, h_new)
        if self.variant == "lstm":
            a = xw + h @ Wh
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H:2 * H])
            o = sigmoid(a[:, 2 * H:3 * H])
            g = np.tanh(a[:, 3 * H:])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            return h_new, c_new, (h, c, i, f, o, g, tc)
        # gru
        zr = sigmoid(xw[:, :2 * H] + h @ Wh[:, :2 * H])
        z, r = zr[:, :H], zr[:, H:]
        rh = r * h
        n = np.tanh(xw[:, 2 * H:] + rh @ Wh[:, 2 * H:])
        h_new = (1.0 - z) * n + z * h
        return h_new, None, (h, z, r, rh, n)

    # -- backward ----------------------------------------------------------

    def step_backward(self, dh, dc, cache):
        """Backward through one step.

        Returns ``(da, dh_prev, dc_prev)`` where ``da`` is the gradient with
        respect to the pre-activation ``x @ Wx + b``.  ``Wh`` gradients are
        accumulated here; ``Wx`` and ``b`` are handled by the caller in bulk.
        """
        H = self.hidden_size
        Wh = self.params["Wh"]
        gWh = self.grads["Wh"]
        if self.variant == "vanilla":
            h_prev, h_new = cache
            da = dh * (1.0 - h_new * h_new)
            gWh += h_prev.T @ da
            return da, da @ Wh.T, None
        if self.variant == "lstm":
            h_prev, c_prev, i, f, o, g, tc = cache
            dct = dh * o * (1.0 - tc * tc)
            if dc is not None:
                dct = dct + dc
            da = np.empty((dh.shape[0], 4 * H))
            da[:, :H] = dct * g * i * (1.0 - i)
            da[:, H:2 * H] = dct * c_prev * f * (1.0 - f)
            da[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            da[:, 3 * H:] = dct * i * (1.0 - g * g)
            gWh += h_prev.T @ da
            return da, da @ Wh.T, dct * f
        h_prev, z, r, rh, n = cache
        da = np.empty((dh.shape[0], 3 * H))
        dn = dh * (1.0 - z) * (1.0 - n * n)
        da[:, 2 * H:] = dn
        gWh[:, 2 * H:] += rh.T @ dn
        drh = dn @ Wh[:, 2 * H:].T
        da[:, :H] = dh * (h_prev - n) * z * (1.0 - z)
        da[:, H:2 * H] = drh * h_prev * r * (1.0 - r)
        gWh[:, :2 * H] += h_prev.T @ da[:, :2 * H]
        dh_prev = dh * z + drh * r + da[:, :2 * H] @ Wh[:, :2 * H].T
        return da, dh_prev, None

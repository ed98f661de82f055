"""Stacked recurrent network with a per-step linear head, and a plain MLP."""

from __future__ import annotations

import numpy as np

from .layers import Bidirectional, Dense, Recurrent, apply_dropout


class _ParamContainer:
    """Shared parameter bookkeeping: flat ``name -> array`` views."""

    def _modules(self):
        raise NotImplementedError

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, mod in self._modules() for k, v in mod.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, mod in self._modules() for k, v in mod.grads.items()}

    def zero_grad(self):
        for _, mod in self._modules():
            mod.zero_grad()

    def load_params(self, values: dict[str, np.ndarray]):
        own = self.named_params()
        if set(own) != set(values):
            raise KeyError(f"parameter names differ: {sorted(set(own) ^ set(values))}")
        for k, v in values.items():
            if own[k].shape != np.shape(v):
                raise ValueError(f"{k}: shape {np.shape(v)} != {own[k].shape}")
            own[k][...] = v


class SequenceNetwork(_ParamContainer):
    """``layers`` recurrent layers, dropout between them, then a dense head per step."""

    def __init__(self, cell="lstm", input_size=1, hidden_size=100, layers=2,
                 bidirectional=False, dropout=0.0, output_size=2, seed=0):
        self.config = dict(cell=cell, input_size=input_size, hidden_size=hidden_size,
                           layers=layers, bidirectional=bidirectional, dropout=dropout,
                           output_size=output_size, seed=seed)
        rng = np.random.default_rng(seed)
        self.dropout = dropout
        self.bidirectional = bidirectional
        self.rnn = []
        size = input_size
        for _ in range(layers):
            layer = (Bidirectional(cell, size, hidden_size, rng) if bidirectional
                     else Recurrent(cell, size, hidden_size, rng))
            self.rnn.append(layer)
            size = layer.output_size
        self.head = Dense(size, output_size, rng)
        self._masks = []

    def _modules(self):
        return [(f"rnn{i}", layer) for i, layer in enumerate(self.rnn)] + [("head", self.head)]

    @property
    def input_size(self):
        return self.config["input_size"]

    def forward(self, X, training=False, rng=None):
        """``X`` is (B, T, D); returns (B, T, output_size)."""
        self._masks = []
        a = X
        for layer in self.rnn:
            a, mask = apply_dropout(layer.forward(a), self.dropout, rng, training)
            self._masks.append(mask)
        return self.head.forward(a)

    def backward(self, dY):
        d = self.head.backward(dY)
        for layer, mask in zip(reversed(self.rnn), reversed(self._masks)):
            if mask is not None:
                d = d * mask
            d = layer.backward(d)
        return d

    # step-wise inference, unidirectional stacks only

    def initial_state(self, batch):
        if self.bidirectional:
            raise ValueError("step-wise inference needs a unidirectional network")
        return [layer.initial_state(batch) for layer in self.rnn]

    def step(self, x, states):
        a = np.atleast_2d(x)
        new_states = []
        for layer, st in zip(self.rnn, states):
            a, st = layer.step(a, st)
            new_states.append(st)
        p = self.head.params
        return a @ p["W"] + p["b"], new_states


class FeedForward(_ParamContainer):
    """Dense stack for memoryless regressors (MLP / MLNN baselines)."""

    def __init__(self, input_size=1, hidden_sizes=(500,), output_size=2,
                 activation="relu", dropout=0.0, seed=0):
        self.config = dict(input_size=input_size, hidden_sizes=list(hidden_sizes),
                           output_size=output_size, activation=activation,
                           dropout=dropout, seed=seed)
        rng = np.random.default_rng(seed)
        self.dropout = dropout
        sizes = [input_size, *hidden_sizes]
        self.hidden = [Dense(a, b, rng, activation) for a, b in zip(sizes[:-1], sizes[1:])]
        self.head = Dense(sizes[-1], output_size, rng)
        self._masks = []

    def _modules(self):
        return [(f"fc{i}", d) for i, d in enumerate(self.hidden)] + [("head", self.head)]

    def forward(self, X, training=False, rng=None):
        self._masks = []
        a = X
        for layer in self.hidden:
            a, mask = apply_dropout(layer.forward(a), self.dropout, rng, training)
            self._masks.append(mask)
        return self.head.forward(a)

    def backward(self, dY):
        d = self.head.backward(dY)
        for layer, mask in zip(reversed(self.hidden), reversed(self._masks)):
            if mask is not None:
                d = d * mask
            d = layer.backward(d)
        return d

"""Small fully connected networks used for the drift, diffusion, and
initial-condition maps.  Weights are stored as (fan_in, fan_out) matrices so
batches live in rows; biases are (1, fan_out) rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

_ACTIVATIONS = ("tanh", "softplus")


@dataclass
class MLPParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def num_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_mlp(sizes: list[int], rng: np.random.Generator, final_scale: float = 1.0) -> MLPParams:
    """Uniform zero-mean init scaled by 1/sqrt(fan_in); biases start at zero.

    `final_scale` shrinks the last weight matrix, used to start the
    diffusion net in a low-noise regime.
    """
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.uniform(-1.0, 1.0, size=(fan_in, fan_out)) / np.sqrt(fan_in)
        if i == len(sizes) - 2:
            w = w * final_scale
        weights.append(w)
        biases.append(np.zeros((1, fan_out)))
    return MLPParams(weights, biases)


def mlp_forward(params: MLPParams, x: np.ndarray, activation: str = "tanh") -> np.ndarray:
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    act = np.tanh if activation == "tanh" else lambda v: np.logaddexp(0.0, v)
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i != last:
            h = act(h)
    return h


def mlp_forward_tape(weight_nodes, bias_nodes, x: ad.Node, activation: str = "tanh") -> ad.Node:
    """Same forward pass, recorded on the tape of `x`."""
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    act = ad.tanh if activation == "tanh" else ad.softplus
    h = x
    last = len(weight_nodes) - 1
    for i, (w, b) in enumerate(zip(weight_nodes, bias_nodes)):
        h = ad.add(ad.matmul(h, w), b)
        if i != last:
            h = act(h)
    return h

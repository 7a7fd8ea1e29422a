"""Neural SDE generator and its Euler-Maruyama simulation.

The latent state follows ``dZ = mu(t, Z) dt + sigma(t, Z) dW`` with
``Z_0 = xi(a)``, ``a`` standard Gaussian, and the observed path is the
affine readout ``X = Z A + b``.  Time enters the drift and diffusion nets
as an extra input feature normalized to [0, 1].  The diffusion net output
is passed through tanh and scaled by a configurable cap so early training
cannot blow up the state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import MLPParams, init_mlp, mlp_forward, mlp_forward_tape
from .rng import normal_block, stream

CHECKPOINT_FORMAT = "fdmsde-checkpoint-v1"


class SimulationError(RuntimeError):
    """Raised when the simulated state stops being finite."""

    def __init__(self, step: int):
        super().__init__(f"simulation produced a non-finite state at step {step}")
        self.step = step


class CheckpointError(ValueError):
    """Raised for malformed or dimension-mismatched checkpoint files."""


@dataclass
class NeuralSDEConfig:
    d_initial: int = 0  # 0 means "default to d_z"
    d_z: int = 4
    d_x: int = 1
    d_noise: int = 2
    hidden_sizes: list[int] = field(default_factory=lambda: [32])
    horizon: float = 1.0
    num_steps: int = 63
    activation: str = "tanh"
    sigma_cap: float = 1.0

    def __post_init__(self):
        if self.d_initial == 0:
            self.d_initial = self.d_z
        self.validate()

    def validate(self):
        for name in ("d_z", "d_x", "d_noise", "d_initial"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.activation not in ("tanh", "softplus"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be >= 1, got {self.hidden_sizes}")
        if self.sigma_cap <= 0:
            raise ValueError(f"sigma_cap must be positive, got {self.sigma_cap}")

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.num_steps + 1)


@dataclass
class NeuralSDEParams:
    """All learnable parameters.

    The readout matrix is stored as (d_z, d_x), i.e. transposed relative to
    the conventional d_x-by-d_z orientation, so that row-batched states
    multiply it directly.
    """

    xi: MLPParams
    mu: MLPParams
    sigma: MLPParams
    A: np.ndarray
    b: np.ndarray

    def flat(self) -> dict[str, np.ndarray]:
        out = {}
        for net_name in ("xi", "mu", "sigma"):
            net: MLPParams = getattr(self, net_name)
            for i, (w, bias) in enumerate(zip(net.weights, net.biases)):
                out[f"{net_name}.w{i}"] = w
                out[f"{net_name}.b{i}"] = bias
        out["A"] = self.A
        out["b"] = self.b
        return out

    def replace_flat(self, arrays: dict[str, np.ndarray]) -> "NeuralSDEParams":
        def rebuild(net_name):
            net: MLPParams = getattr(self, net_name)
            return MLPParams(
                [arrays[f"{net_name}.w{i}"] for i in range(net.n_layers)],
                [arrays[f"{net_name}.b{i}"] for i in range(net.n_layers)],
            )

        return NeuralSDEParams(rebuild("xi"), rebuild("mu"), rebuild("sigma"), arrays["A"], arrays["b"])

    def num_params(self) -> int:
        return sum(a.size for a in self.flat().values())


@dataclass
class PathsBatch:
    """A batch of sample trajectories on a shared, strictly increasing grid."""

    grid: np.ndarray  # (n_times,)
    values: np.ndarray  # (n_paths, n_times, dim)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"values must be (paths, times, dim), got shape {self.values.shape}")
        if self.grid.ndim != 1 or self.grid.size != self.values.shape[1]:
            raise ValueError(f"grid length {self.grid.size} does not match values time axis {self.values.shape[1]}")
        if self.grid.size >= 2 and not np.all(np.diff(self.grid) > 0):
            raise ValueError("grid must be strictly increasing")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def subset(self, indices) -> "PathsBatch":
        return PathsBatch(self.grid, self.values[np.asarray(indices)])


def init_params(config: NeuralSDEConfig, seed: int) -> NeuralSDEParams:
    xi = init_mlp([config.d_initial] + config.hidden_sizes + [config.d_z], stream(seed, "init-xi"))
    mu = init_mlp([config.d_z + 1] + config.hidden_sizes + [config.d_z], stream(seed, "init-mu"))
    sigma = init_mlp(
        [config.d_z + 1] + config.hidden_sizes + [config.d_z * config.d_noise],
        stream(seed, "init-sigma"),
        final_scale=0.1,
    )
    rng = stream(seed, "init-readout")
    A = rng.uniform(-1.0, 1.0, size=(config.d_z, config.d_x)) / np.sqrt(config.d_z)
    b = np.zeros((1, config.d_x))
    return NeuralSDEParams(xi, mu, sigma, A, b)


def _noise_mixing_matrix(d_z: int, d_noise: int) -> np.ndarray:
    """0/1 matrix contracting a flattened (d_z, d_noise) block against the
    per-noise increments: (sigma_flat * dW_tiled) @ S sums over noise dims."""
    s = np.zeros((d_z * d_noise, d_z))
    for z in range(d_z):
        s[z * d_noise : (z + 1) * d_noise, z] = 1.0
    return s


def draw_noise(config: NeuralSDEConfig, batch: int, seed: int):
    """Initial Gaussian seeds and per-step Brownian increments, addressed by
    (seed, step) counter streams so path blocks parallelize reproducibly."""
    a = normal_block(seed, ("sim-init",), (batch, config.d_initial))
    grid = config.grid()
    dts = np.diff(grid)
    incs = [
        normal_block(seed, ("sim-step", k), (batch, config.d_noise)) * np.sqrt(dt)
        for k, dt in enumerate(dts)
    ]
    return a, incs


def simulate(
    params: NeuralSDEParams,
    config: NeuralSDEConfig,
    batch: int,
    seed: int,
    differentiable: bool = False,
):
    """Sample `batch` paths on the uniform grid.

    With ``differentiable=True`` the whole recursion is recorded on a fresh
    tape (noise as constants, parameters as leaves) and the returned batch
    carries ``tape``, ``leaves`` and ``output_nodes`` attributes.
    """
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    a, incs = draw_noise(config, batch, seed)
    if not differentiable:
        values = _simulate_plain(params, config, a, incs)
        return PathsBatch(config.grid(), values)

    tape = ad.Tape()
    leaves = {name: tape.leaf(arr) for name, arr in params.flat().items()}
    z_nodes = simulate_tape(tape, leaves, params, config, a, incs)
    x_nodes = [readout_node(tape, leaves, z) for z in z_nodes]
    values = np.stack([x.value for x in x_nodes], axis=1)
    out = PathsBatch(config.grid(), values)
    out.tape = tape
    out.leaves = leaves
    out.output_nodes = x_nodes
    return out


def _simulate_plain(params, config, a, incs) -> np.ndarray:
    grid = config.grid()
    dts = np.diff(grid)
    batch = a.shape[0]
    mix = _noise_mixing_matrix(config.d_z, config.d_noise)
    z = mlp_forward(params.xi, a, config.activation)
    outs = [z @ params.A + params.b]
    for k, dt in enumerate(dts):
        t_col = np.full((batch, 1), grid[k] / config.horizon)
        inp = np.concatenate([z, t_col], axis=1)
        drift = mlp_forward(params.mu, inp, config.activation)
        sig = np.tanh(mlp_forward(params.sigma, inp, config.activation)) * config.sigma_cap
        dw_tiled = np.tile(incs[k], (1, config.d_z))
        z = z + drift * dt + (sig * dw_tiled) @ mix
        if not np.all(np.isfinite(z)):
            raise SimulationError(k)
        outs.append(z @ params.A + params.b)
    return np.stack(outs, axis=1)


def _mlp_nodes(leaves: dict, net_name: str, n_layers: int):
    return (
        [leaves[f"{net_name}.w{i}"] for i in range(n_layers)],
        [leaves[f"{net_name}.b{i}"] for i in range(n_layers)],
    )


def simulate_tape(tape: ad.Tape, leaves: dict, params: NeuralSDEParams, config: NeuralSDEConfig, a, incs):
    """Record the Euler-Maruyama recursion; returns the latent-state node at
    every grid point."""
    grid = config.grid()
    dts = np.diff(grid)
    batch = a.shape[0]
    mix = tape.constant(_noise_mixing_matrix(config.d_z, config.d_noise))
    act = config.activation

    xi_w, xi_b = _mlp_nodes(leaves, "xi", params.xi.n_layers)
    mu_w, mu_b = _mlp_nodes(leaves, "mu", params.mu.n_layers)
    sg_w, sg_b = _mlp_nodes(leaves, "sigma", params.sigma.n_layers)

    z = mlp_forward_tape(xi_w, xi_b, tape.constant(a), act)
    z_nodes = [z]
    for k, dt in enumerate(dts):
        t_col = tape.constant(np.full((batch, 1), grid[k] / config.horizon))
        inp = ad.concat([z, t_col], axis=1)
        drift = mlp_forward_tape(mu_w, mu_b, inp, act)
        sig = ad.scale(ad.tanh(mlp_forward_tape(sg_w, sg_b, inp, act)), config.sigma_cap)
        dw_tiled = tape.constant(np.tile(incs[k], (1, config.d_z)))
        step = ad.matmul(ad.mul(sig, dw_tiled), mix)
        z = ad.add(ad.add(z, ad.scale(drift, dt)), step)
        if not np.all(np.isfinite(z.value)):
            raise SimulationError(k)
        z_nodes.append(z)
    return z_nodes


def readout_node(tape: ad.Tape, leaves: dict, z: ad.Node) -> ad.Node:
    return ad.add(ad.matmul(z, leaves["A"]), leaves["b"])


def save_checkpoint(path, params: NeuralSDEParams, config: NeuralSDEConfig):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "d_initial": config.d_initial,
            "d_z": config.d_z,
            "d_x": config.d_x,
            "d_noise": config.d_noise,
            "hidden_sizes": list(config.hidden_sizes),
            "horizon": config.horizon,
            "num_steps": config.num_steps,
            "activation": config.activation,
            "sigma_cap": config.sigma_cap,
        },
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.flat().items()
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def expected_param_shapes(config: NeuralSDEConfig) -> dict[str, tuple]:
    shapes = {}
    specs = {
        "xi": [config.d_initial] + config.hidden_sizes + [config.d_z],
        "mu": [config.d_z + 1] + config.hidden_sizes + [config.d_z],
        "sigma": [config.d_z + 1] + config.hidden_sizes + [config.d_z * config.d_noise],
    }
    for net, sizes in specs.items():
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            shapes[f"{net}.w{i}"] = (fan_in, fan_out)
            shapes[f"{net}.b{i}"] = (1, fan_out)
    shapes["A"] = (config.d_z, config.d_x)
    shapes["b"] = (1, config.d_x)
    return shapes


def load_checkpoint(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: not valid JSON ({err})") from err
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"{path}: format tag {doc.get('format')!r} does not match expected {CHECKPOINT_FORMAT!r}"
        )
    config = NeuralSDEConfig(**doc["config"])
    shapes = expected_param_shapes(config)
    arrays = {}
    for name, shape in shapes.items():
        if name not in doc["params"]:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        entry = doc["params"][name]
        if tuple(entry["shape"]) != shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {tuple(entry['shape'])}, expected {shape}"
            )
        arrays[name] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
    if not all(np.all(np.isfinite(a)) for a in arrays.values()):
        raise CheckpointError(f"{path}: non-finite parameter values")
    template = init_params(config, seed=0)
    return template.replace_flat(arrays), config

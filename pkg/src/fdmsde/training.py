"""The training loop: simulate a batch differentiably, evaluate the kernel
discrepancy estimator against a data batch at freshly sampled timestamp
pairs, and descend it with Adam.

The estimator (scoring module) is half the within-generated kernel mean
minus the generated-vs-data kernel mean, so matching the data minimizes it;
the log records its negation, which rises toward 1/2 as the fit improves."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .rng import stream
from .scoring import ScoreConfig, sample_pairs, score_main_tape
from .sde import (
    NeuralSDEConfig,
    NeuralSDEParams,
    PathsBatch,
    draw_noise,
    init_params,
    readout_node,
    save_checkpoint,
    simulate_tape,
)


class TrainingAborted(RuntimeError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"training aborted at step {step}: {reason}")
        self.step = step


@dataclass
class TrainConfig:
    steps: int = 10000
    batch_size: int = 128
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 50
    score: ScoreConfig = field(default_factory=ScoreConfig)
    sde: NeuralSDEConfig = field(default_factory=NeuralSDEConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")


@dataclass
class TrainLog:
    entries: list[dict] = field(default_factory=list)

    def append(self, step: int, score: float, grad_norm: float, seconds: float):
        if self.entries and step <= self.entries[-1]["step"]:
            raise ValueError("log steps must be strictly increasing")
        self.entries.append(
            {"step": step, "score": score, "grad_norm": grad_norm, "seconds": seconds}
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "score", "grad_norm", "seconds"])
            for e in self.entries:
                writer.writerow([e["step"], repr(e["score"]), repr(e["grad_norm"]), repr(e["seconds"])])


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new params, mutates `state`."""
    for name, p in params.items():
        if name not in grads:
            raise ValueError(f"missing gradient for parameter {name!r}")
        if grads[name].shape != p.shape:
            raise ValueError(
                f"gradient shape {grads[name].shape} does not match parameter {name!r} shape {p.shape}"
            )
    state.t += 1
    t = state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


def training_step_loss(
    params: NeuralSDEParams,
    sde_cfg: NeuralSDEConfig,
    data_values: np.ndarray,
    pairs: np.ndarray,
    a: np.ndarray,
    incs: list[np.ndarray],
    gamma: float,
    with_grads: bool = True,
):
    """Loss of one frozen step: fixed noise, batch, pairs.  The loss is the
    kernel discrepancy estimator itself, minimized when generated paths
    match the data.

    Returns (loss, grads dict) with AD gradients, or (loss, None) when only
    the value is needed (e.g. for finite differencing)."""
    tape = ad.Tape()
    leaves = {name: tape.leaf(arr) for name, arr in params.flat().items()}
    z_nodes = simulate_tape(tape, leaves, params, sde_cfg, a, incs)
    needed = sorted(set(pairs.ravel().tolist()))
    x_nodes = {t: readout_node(tape, leaves, z_nodes[t]) for t in needed}
    loss = score_main_tape(tape, x_nodes, data_values, pairs, gamma)
    if not with_grads:
        return float(loss.value), None
    raw = tape.backward(loss)
    grads = {name: raw[node.index] for name, node in leaves.items()}
    return float(loss.value), grads


def _sample_data_indices(n_paths: int, batch: int, step: int, seed: int) -> np.ndarray:
    """Without-replacement batches, reshuffled every epoch."""
    per_epoch = n_paths // batch
    epoch, pos = divmod(step, per_epoch)
    perm = stream(seed, "data-shuffle", epoch).permutation(n_paths)
    return perm[pos * batch : (pos + 1) * batch]


def fdm_train(
    cfg: TrainConfig,
    data: PathsBatch,
    out_dir=None,
    progress=None,
) -> tuple[NeuralSDEParams, TrainLog]:
    """Run the full training loop (gradient descent on the discrepancy
    estimator; the logged score is its negation and should rise).

    Writes periodic checkpoints into `out_dir` when given.  `progress` is an
    optional callable receiving (step, score) at each logged step.
    """
    b = cfg.batch_size
    if data.n_paths < b:
        raise ValueError(f"data has {data.n_paths} paths, need at least batch_size={b}")
    if data.n_times != cfg.sde.num_steps + 1:
        raise ValueError(
            f"data grid has {data.n_times} points but the model simulates {cfg.sde.num_steps + 1}"
        )
    if not np.isclose(data.grid[-1], cfg.sde.horizon):
        raise ValueError(f"data horizon {data.grid[-1]} does not match model horizon {cfg.sde.horizon}")
    if cfg.score.estimator != "main":
        raise ValueError("training supports the main estimator; others are evaluation-only")

    params = init_params(cfg.sde, cfg.seed)
    flat = params.flat()
    state = AdamState()
    log = TrainLog()
    start = time.perf_counter()
    for step in range(cfg.steps):
        a, incs = draw_noise(cfg.sde, b, _step_seed(cfg.seed, step))
        idx = _sample_data_indices(data.n_paths, b, step, cfg.seed)
        pairs = sample_pairs(data.n_times, b, stream(cfg.seed, "pairs", step), cfg.score)
        loss, grads = training_step_loss(
            params, cfg.sde, data.values[idx], pairs, a, incs, cfg.score.gamma
        )
        if not np.isfinite(loss):
            raise TrainingAborted(step, f"non-finite loss {loss}")
        gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if not np.isfinite(gnorm):
            raise TrainingAborted(step, "non-finite gradient")
        flat = adam_step(
            flat, grads, state, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        )
        params = params.replace_flat(flat)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            log.append(step, -loss, gnorm, time.perf_counter() - start)
            if progress is not None:
                progress(step, -loss)
        if out_dir is not None and ((step + 1) % cfg.checkpoint_every == 0 or step == cfg.steps - 1):
            save_checkpoint(f"{out_dir}/checkpoint.json", params, cfg.sde)
    return params, log


def _step_seed(seed: int, step: int) -> int:
    return int(stream(seed, "sim-seed", step).integers(0, 2**63 - 1))

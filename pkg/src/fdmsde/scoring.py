"""Kernel scoring rule on two-time joint values.

The estimators compare generated and observed paths through the RBF kernel
applied to concatenated path values at sampled timestamp pairs: half the
within-generated kernel mean minus the generated-vs-data kernel mean.
With this sign convention a generator matching the data *minimizes* the
value (it is a discrepancy, reaching -1/2 at a perfect constant-path
match); consumers that want a higher-is-better score negate it, which is
what the trainer and the properness check do.

Three variants are provided: the main paired estimator, the N-observation
concatenated variant, and the adjacent-timestamps variant.  All are plain
functions of arrays; `score_main_tape` records the main estimator on an
autodiff tape for training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .sde import PathsBatch


@dataclass
class ScoreConfig:
    gamma: float = 1.0
    estimator: str = "main"  # main | concat | adjacent
    concat_count: int = 2
    sampler: str = "uniform"  # uniform | weighted
    weights: np.ndarray | None = None  # (n_times, n_times), zero diagonal

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.estimator not in ("main", "concat", "adjacent"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.sampler not in ("uniform", "weighted"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.estimator == "concat" and self.concat_count < 2:
            raise ValueError(f"concat_count must be >= 2, got {self.concat_count}")
        if self.sampler == "weighted":
            if self.weights is None:
                raise ValueError("weighted sampler requires a weights matrix")
            w = np.asarray(self.weights, dtype=np.float64)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ValueError(f"weights must be square, got shape {w.shape}")
            if np.any(w < 0) or np.any(np.diag(w) != 0):
                raise ValueError("weights must be nonnegative with a zero diagonal")
            if not np.isclose(w.sum(), 1.0):
                raise ValueError(f"weights must sum to 1, got {w.sum()}")
            self.weights = w


def rbf_kernel(x, y, gamma: float) -> float:
    """exp(-gamma * ||x - y||^2); equals 1 iff x == y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"rbf_kernel: length mismatch {x.shape} vs {y.shape}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return float(np.exp(-gamma * np.sum((x - y) ** 2)))


def sample_pairs(n_times: int, count: int, rng: np.random.Generator, cfg: ScoreConfig | None = None) -> np.ndarray:
    """`count` independent ordered timestamp-index pairs (i, j), i != j.

    Uniform over all ordered distinct pairs by default; with a weighted
    config, pairs are drawn from the supplied grid-pair weights.
    """
    if n_times < 2:
        raise ValueError(f"need at least 2 grid points to sample pairs, got {n_times}")
    if cfg is not None and cfg.sampler == "weighted":
        w = cfg.weights
        if w.shape[0] != n_times:
            raise ValueError(f"weights are {w.shape[0]}x{w.shape[0]} but the grid has {n_times} points")
        flat = w.ravel()
        idx = rng.choice(flat.size, size=count, p=flat / flat.sum())
        return np.stack(np.unravel_index(idx, w.shape), axis=1)
    first = rng.integers(0, n_times, size=count)
    shift = rng.integers(1, n_times, size=count)
    second = (first + shift) % n_times
    return np.stack([first, second], axis=1)


def _values(batch) -> np.ndarray:
    return batch.values if isinstance(batch, PathsBatch) else np.asarray(batch, dtype=np.float64)


def _check_batches(gen, data, count):
    if gen.shape[0] != data.shape[0]:
        raise ValueError(f"generated and data batches differ in size: {gen.shape[0]} vs {data.shape[0]}")
    if gen.shape[0] < 2:
        raise ValueError(f"need at least 2 paths per batch, got {gen.shape[0]}")
    if count is not None and count != gen.shape[0]:
        raise ValueError(f"need one timestamp tuple per path: {count} tuples for {gen.shape[0]} paths")


def _concat_at(values: np.ndarray, tuples: np.ndarray) -> np.ndarray:
    """C[j, i, :] = concatenated values of path i at the tuple owned by j."""
    # values: (B, T, d); tuples: (B, N) -> (B_j, B_i, N*d)
    gathered = values[:, tuples, :]  # (B_i, B_j, N, d)
    b, _, n, d = gathered.shape
    return gathered.transpose(1, 0, 2, 3).reshape(b, b, n * d)


def _score_from_concat(gen_c: np.ndarray, data_diag: np.ndarray, gamma: float) -> float:
    """Assemble the two double sums from C[j, i, :] and the per-j data rows."""
    b = gen_c.shape[0]
    ref = gen_c[np.arange(b), np.arange(b), :]  # row j of block j
    d1 = gen_c - ref[:, None, :]
    k1 = np.exp(-gamma * np.sum(d1 * d1, axis=2))
    term1 = (k1.sum() - b) / (2.0 * b * (b - 1))
    d2 = gen_c - data_diag[:, None, :]
    k2 = np.exp(-gamma * np.sum(d2 * d2, axis=2))
    term2 = k2.sum() / (b * b)
    return float(term1 - term2)


def score_main(gen, data, pairs: np.ndarray, cfg: ScoreConfig) -> float:
    """The paired empirical estimator: one timestamp pair per data index j,
    used for both the generated-vs-generated and generated-vs-data sums."""
    gen_v, data_v = _values(gen), _values(data)
    pairs = np.asarray(pairs)
    _check_batches(gen_v, data_v, pairs.shape[0])
    gen_c = _concat_at(gen_v, pairs)
    b = gen_v.shape[0]
    data_diag = np.concatenate(
        [data_v[np.arange(b), pairs[:, 0], :], data_v[np.arange(b), pairs[:, 1], :]], axis=1
    )
    return _score_from_concat(gen_c, data_diag, cfg.gamma)


def score_concat(gen, data, tuples: np.ndarray, cfg: ScoreConfig) -> float:
    """N concatenated observations per path instead of a pair."""
    gen_v, data_v = _values(gen), _values(data)
    tuples = np.asarray(tuples)
    _check_batches(gen_v, data_v, tuples.shape[0])
    if tuples.ndim != 2 or tuples.shape[1] < 2:
        raise ValueError(f"timestamp tuples must be (B, N>=2), got shape {tuples.shape}")
    b, n = tuples.shape
    for j in range(b):
        if len(set(tuples[j].tolist())) != n:
            raise ValueError(f"tuple for path {j} has repeated grid indices: {tuples[j].tolist()}")
    gen_c = _concat_at(gen_v, tuples)
    gathered = data_v[:, tuples, :]  # (B_i, B_j, N, d)
    data_diag = gathered[np.arange(b), np.arange(b)].reshape(b, -1)
    return _score_from_concat(gen_c, data_diag, cfg.gamma)


def score_adjacent(gen, data, cfg: ScoreConfig) -> float:
    """Average of the main estimator's sums over every adjacent grid pair."""
    gen_v, data_v = _values(gen), _values(data)
    _check_batches(gen_v, data_v, None)
    m = gen_v.shape[1]
    if m < 2:
        raise ValueError(f"need at least 2 timestamps, got {m}")
    b = gen_v.shape[0]
    total1 = 0.0
    total2 = 0.0
    for t in range(m - 1):
        gc = np.concatenate([gen_v[:, t, :], gen_v[:, t + 1, :]], axis=1)
        dc = np.concatenate([data_v[:, t, :], data_v[:, t + 1, :]], axis=1)
        d1 = gc[None, :, :] - gc[:, None, :]
        k1 = np.exp(-cfg.gamma * np.sum(d1 * d1, axis=2))
        total1 += k1.sum() - b
        d2 = gc[None, :, :] - dc[:, None, :]
        total2 += np.exp(-cfg.gamma * np.sum(d2 * d2, axis=2)).sum()
    term1 = total1 / (2.0 * b * (m - 1) * (b - 1))
    term2 = total2 / (b * b * (m - 1))
    return float(term1 - term2)


def score(gen, data, cfg: ScoreConfig, rng: np.random.Generator) -> float:
    """Dispatch on the configured estimator, sampling timestamps as needed."""
    gen_v = _values(gen)
    b, n_times = gen_v.shape[0], gen_v.shape[1]
    if cfg.estimator == "adjacent":
        return score_adjacent(gen, data, cfg)
    if cfg.estimator == "concat":
        tuples = np.stack(
            [rng.choice(n_times, size=cfg.concat_count, replace=False) for _ in range(b)]
        )
        return score_concat(gen, data, tuples, cfg)
    pairs = sample_pairs(n_times, b, rng, cfg)
    return score_main(gen, data, pairs, cfg)


def expected_rbf_gaussian(mean, cov, z, gamma: float) -> float:
    """E exp(-gamma ||X - z||^2) for X ~ N(mean, cov), in closed form:
    det(I + 2 gamma cov)^(-1/2) exp(-gamma (z-mean)' (I + 2 gamma cov)^(-1) (z-mean))."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    d = mean.size
    if cov.shape != (d, d) or z.size != d:
        raise ValueError(f"inconsistent shapes: mean {mean.shape}, cov {cov.shape}, z {z.shape}")
    if not np.allclose(cov, cov.T):
        raise ValueError("covariance must be symmetric")
    eigs = np.linalg.eigvalsh(cov)
    if eigs.min() < -1e-10 * max(1.0, abs(eigs.max())):
        raise ValueError(f"covariance is not positive semidefinite (min eigenvalue {eigs.min()})")
    m = np.eye(d) + 2.0 * gamma * cov
    diff = z - mean
    quad = diff @ np.linalg.solve(m, diff)
    return float(np.exp(-gamma * quad) / np.sqrt(np.linalg.det(m)))


_EXPAND_CACHE: dict[int, np.ndarray] = {}


def _row_expander(b: int) -> np.ndarray:
    """(b^2, b) 0/1 matrix replicating row j of its operand into the j-th
    block of b rows."""
    if b not in _EXPAND_CACHE:
        _EXPAND_CACHE[b] = np.kron(np.eye(b), np.ones((b, 1)))
    return _EXPAND_CACHE[b]


def score_main_tape(
    tape: ad.Tape,
    x_nodes: dict,
    data_values: np.ndarray,
    pairs: np.ndarray,
    gamma: float,
) -> ad.Node:
    """Record the main estimator on a tape.

    `x_nodes` maps grid index -> (B, d) output node of the simulator;
    `data_values` is the (B, T, d) data batch; `pairs` is (B, 2).

    The double sums are evaluated as one (B^2, 2d) stack: row j*B + i holds
    the concatenated values of generated path i at the pair owned by j.
    """
    b = data_values.shape[0]
    if b < 2:
        raise ValueError(f"need at least 2 paths per batch, got {b}")
    if pairs.shape[0] != b:
        raise ValueError(f"need one pair per data path: {pairs.shape[0]} pairs for {b} paths")
    d = data_values.shape[2]
    i1 = [int(i) for i in pairs[:, 0]]
    i2 = [int(i) for i in pairs[:, 1]]
    left = ad.concat([x_nodes[i] for i in i1], axis=0)  # (B^2, d)
    right = ad.concat([x_nodes[i] for i in i2], axis=0)
    v = ad.concat([left, right], axis=1)  # (B^2, 2d)
    # row j of block j, i.e. generated path j at its own pair
    diag = ad.concat([ad.block(v, slice(j * b + j, j * b + j + 1)) for j in range(b)], axis=0)
    ref = ad.matmul(tape.constant(_row_expander(b)), diag)  # (B^2, 2d)
    ones = tape.constant(np.ones((2 * d, 1)))

    d1 = ad.sub(v, ref)
    k1 = ad.exp(ad.scale(ad.matmul(ad.mul(d1, d1), ones), -gamma))
    # the i == j kernels in the first sum are exactly 1 each
    sum1 = ad.add(ad.asum(k1), tape.constant(np.asarray(-float(b))))

    arange = np.arange(b)
    data_rows = np.concatenate(
        [data_values[arange, pairs[:, 0], :], data_values[arange, pairs[:, 1], :]], axis=1
    )
    data_big = tape.constant(np.repeat(data_rows, b, axis=0))
    d2 = ad.sub(v, data_big)
    k2 = ad.exp(ad.scale(ad.matmul(ad.mul(d2, d2), ones), -gamma))
    sum2 = ad.asum(k2)

    term1 = ad.scale(sum1, 1.0 / (2.0 * b * (b - 1)))
    term2 = ad.scale(sum2, 1.0 / (b * b))
    return ad.sub(term1, term2)

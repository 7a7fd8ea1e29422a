"""Marginal evaluation via two-sample Kolmogorov-Smirnov tests.

Generated batches are compared against held-out batches one timestamp and
one output dimension at a time; the report aggregates the mean KS statistic
and the 5%-level rejection rate over repeated evaluation batches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .rng import stream
from .sde import PathsBatch

# reporting grid used for 64-point paths, scaled proportionally otherwise
_BASE_EVAL_INDICES = (6, 19, 32, 44, 57)
_BASE_GRID_LEN = 64


def default_eval_indices(n_times: int) -> list[int]:
    if n_times < 2:
        raise ValueError(f"need at least 2 timestamps, got {n_times}")
    idx = sorted({round(i * (n_times - 1) / (_BASE_GRID_LEN - 1)) for i in _BASE_EVAL_INDICES})
    return [int(i) for i in idx]


def _kolmogorov_sf(lam: float) -> float:
    """Tail of the Kolmogorov distribution, 2 sum (-1)^(k-1) exp(-2 k^2 lam^2),
    truncated once terms drop below 1e-10."""
    if lam <= 0:
        return 1.0
    total = 0.0
    for k in range(1, 1000):
        term = 2.0 * (-1.0) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam)
        total += term
        if abs(term) < 1e-10:
            break
    return float(min(1.0, max(0.0, total)))


def ks_two_sample(a, b) -> tuple[float, float]:
    """Sup-distance between the two empirical CDFs and its asymptotic p-value
    at effective sample size n_a n_b / (n_a + n_b)."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_two_sample: both samples must be non-empty")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    stat = float(np.max(np.abs(cdf_a - cdf_b)))
    n_eff = a.size * b.size / (a.size + b.size)
    p = _kolmogorov_sf(np.sqrt(n_eff) * stat)
    return stat, p


@dataclass
class KSReport:
    rows: list[dict]  # time_index, dim, mean_ks, rejection_pct
    batch_size: int
    num_batches: int
    eval_indices: list[int]
    metadata: dict = field(default_factory=dict)

    def mean_statistic(self) -> float:
        return float(np.mean([r["mean_ks"] for r in self.rows]))

    def mean_rejection_pct(self) -> float:
        return float(np.mean([r["rejection_pct"] for r in self.rows]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestamp", "dimension", "mean_ks", "rejection_pct"])
            for r in self.rows:
                writer.writerow([r["time_index"], r["dim"], repr(r["mean_ks"]), repr(r["rejection_pct"])])

    def format_table(self) -> str:
        lines = [f"{'t-index':>8} {'dim':>4} {'mean KS':>9} {'reject %':>9}"]
        for r in self.rows:
            lines.append(f"{r['time_index']:>8} {r['dim']:>4} {r['mean_ks']:>9.4f} {r['rejection_pct']:>9.2f}")
        lines.append(
            f"overall: mean KS {self.mean_statistic():.4f}, "
            f"mean rejection {self.mean_rejection_pct():.2f}% "
            f"({self.num_batches} batches of {self.batch_size})"
        )
        return "\n".join(lines)


def marginal_report(
    generator,
    heldout: PathsBatch,
    eval_indices=None,
    batch_size: int = 128,
    num_batches: int = 100,
    seed: int = 0,
    replace: bool = False,
) -> KSReport:
    """KS statistics of generated vs held-out marginals.

    `generator` is either a callable ``(n, seed) -> PathsBatch`` producing
    fresh batches, or a fixed PathsBatch pool sampled per evaluation batch.
    Held-out batches are disjoint unless `replace` declares resampling.
    """
    if eval_indices is None:
        eval_indices = default_eval_indices(heldout.n_times)
    eval_indices = [int(i) for i in eval_indices]
    for i in eval_indices:
        if not 0 <= i < heldout.n_times:
            raise ValueError(f"evaluation index {i} outside grid of {heldout.n_times} points")
    needed = batch_size * num_batches
    if not replace and heldout.n_paths < needed:
        raise ValueError(
            f"held-out pool has {heldout.n_paths} paths but disjoint evaluation needs "
            f"{needed}; pass replace=True to sample with replacement"
        )

    dim = heldout.dim
    stats = np.zeros((num_batches, len(eval_indices), dim))
    reject = np.zeros((num_batches, len(eval_indices), dim))
    order = None
    if not replace:
        order = stream(seed, "eval-order").permutation(heldout.n_paths)
    for b in range(num_batches):
        if callable(generator):
            gen_batch = generator(batch_size, _eval_seed(seed, b))
        else:
            idx = stream(seed, "eval-gen", b).choice(generator.n_paths, size=batch_size, replace=True)
            gen_batch = generator.subset(idx)
        if replace:
            hidx = stream(seed, "eval-held", b).choice(heldout.n_paths, size=batch_size, replace=True)
        else:
            hidx = order[b * batch_size : (b + 1) * batch_size]
        held = heldout.values[hidx]
        for ti, t in enumerate(eval_indices):
            for d in range(dim):
                s, p = ks_two_sample(gen_batch.values[:, t, d], held[:, t, d])
                stats[b, ti, d] = s
                reject[b, ti, d] = 1.0 if p < 0.05 else 0.0

    rows = []
    for ti, t in enumerate(eval_indices):
        for d in range(dim):
            rows.append(
                {
                    "time_index": t,
                    "dim": d,
                    "mean_ks": float(stats[:, ti, d].mean()),
                    "rejection_pct": float(100.0 * reject[:, ti, d].mean()),
                }
            )
    return KSReport(rows, batch_size, num_batches, eval_indices)


def _eval_seed(seed: int, batch_index: int) -> int:
    return int(stream(seed, "eval-batch-seed", batch_index).integers(0, 2**63 - 1))


def joint_scatter_export(gen: PathsBatch, data: PathsBatch, dim_pair, time_indices, path):
    """Tidy CSV of (source, t, value_a, value_b) rows for external plotting."""
    da, db = dim_pair
    for batch, name in ((gen, "generated"), (data, "real")):
        if batch.n_paths and not (0 <= da < batch.dim and 0 <= db < batch.dim):
            raise ValueError(f"dimension pair {dim_pair} invalid for {name} batch of dim {batch.dim}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "t", "value_a", "value_b"])
        for batch, name in ((data, "real"), (gen, "generated")):
            for t in time_indices:
                for i in range(batch.n_paths):
                    writer.writerow(
                        [
                            name,
                            repr(float(batch.grid[t])),
                            repr(float(batch.values[i, t, da])),
                            repr(float(batch.values[i, t, db])),
                        ]
                    )

"""Closed-form reference processes: exact simulators plus analytic two-time
Gaussian joints.  These serve both as synthetic data sources and as oracles
for the statistical checks (properness, unbiasedness, sensitivity)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .rng import stream
from .sde import PathsBatch

KINDS = ("brownian", "ou", "gbm")


@dataclass(frozen=True)
class ReferenceProcess:
    kind: str
    drift: float = 0.0  # brownian drift c / gbm rate r
    scale: float = 1.0  # brownian / ou diffusion s
    rate: float = 1.0  # ou mean-reversion theta
    mean: float = 0.0  # ou long-run mean
    vol: float = 0.2  # gbm volatility v
    x0: float = 1.0  # gbm start

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.kind in ("brownian", "ou") and self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.kind == "ou" and self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if self.kind == "gbm" and (self.vol <= 0 or self.x0 <= 0):
            raise ValueError(f"gbm needs vol > 0 and x0 > 0, got vol={self.vol}, x0={self.x0}")


def brownian(drift: float = 0.0, scale: float = 1.0) -> ReferenceProcess:
    return ReferenceProcess("brownian", drift=drift, scale=scale)


def ou(rate: float = 1.0, mean: float = 0.0, scale: float = 1.0) -> ReferenceProcess:
    return ReferenceProcess("ou", rate=rate, mean=mean, scale=scale)


def gbm(drift: float = 0.0, vol: float = 0.2, x0: float = 1.0) -> ReferenceProcess:
    return ReferenceProcess("gbm", drift=drift, vol=vol, x0=x0)


@dataclass
class GaussianJoint:
    mean: np.ndarray  # (2,)
    cov: np.ndarray  # (2, 2)


def simulate_exact(proc: ReferenceProcess, grid, batch: int, seed: int) -> PathsBatch:
    """Sample with the exact transition law at each grid point (no
    discretization error).  OU paths start from the stationary law."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 1 or (grid.size > 1 and np.any(np.diff(grid) <= 0)):
        raise ValueError("grid must be a strictly increasing 1-D array")
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    dts = np.diff(grid)
    n = grid.size
    xs = np.empty((batch, n))
    init_rng = stream(seed, "proc-init")
    if proc.kind == "brownian":
        xs[:, 0] = proc.drift * grid[0] + proc.scale * np.sqrt(grid[0]) * (
            init_rng.standard_normal(batch) if grid[0] > 0 else 0.0
        )
        for k, dt in enumerate(dts):
            z = stream(seed, "proc-step", k).standard_normal(batch)
            xs[:, k + 1] = xs[:, k] + proc.drift * dt + proc.scale * np.sqrt(dt) * z
    elif proc.kind == "ou":
        stat_sd = proc.scale / np.sqrt(2.0 * proc.rate)
        xs[:, 0] = proc.mean + stat_sd * init_rng.standard_normal(batch)
        for k, dt in enumerate(dts):
            z = stream(seed, "proc-step", k).standard_normal(batch)
            decay = np.exp(-proc.rate * dt)
            trans_sd = proc.scale * np.sqrt((1.0 - decay * decay) / (2.0 * proc.rate))
            xs[:, k + 1] = proc.mean + (xs[:, k] - proc.mean) * decay + trans_sd * z
    else:  # gbm, exact log-normal increments
        xs[:, 0] = proc.x0 * np.exp(
            (proc.drift - 0.5 * proc.vol**2) * grid[0]
            + proc.vol * np.sqrt(grid[0]) * (init_rng.standard_normal(batch) if grid[0] > 0 else 0.0)
        )
        for k, dt in enumerate(dts):
            z = stream(seed, "proc-step", k).standard_normal(batch)
            xs[:, k + 1] = xs[:, k] * np.exp(
                (proc.drift - 0.5 * proc.vol**2) * dt + proc.vol * np.sqrt(dt) * z
            )
    return PathsBatch(grid, xs[:, :, None])


def two_time_joint(proc: ReferenceProcess, t1: float, t2: float) -> GaussianJoint:
    """Exact law of (X_t1, X_t2) for the Gaussian references.

    Brownian starts at 0; OU is taken at stationarity.  GBM is not
    Gaussian -- log-transform the data and use a Brownian reference.
    """
    if t1 < 0 or t2 < 0:
        raise ValueError(f"times must be nonnegative, got {t1}, {t2}")
    if proc.kind == "brownian":
        mean = np.array([proc.drift * t1, proc.drift * t2])
        s2 = proc.scale**2
        cov = s2 * np.array([[t1, min(t1, t2)], [min(t1, t2), t2]])
        return GaussianJoint(mean, cov)
    if proc.kind == "ou":
        var = proc.scale**2 / (2.0 * proc.rate)
        rho = np.exp(-proc.rate * abs(t1 - t2))
        return GaussianJoint(
            np.array([proc.mean, proc.mean]), var * np.array([[1.0, rho], [rho, 1.0]])
        )
    raise ValueError("two_time_joint: gbm is log-normal; log-transform and use a brownian reference")


def perturbed(proc: ReferenceProcess, delta_mu: float, delta_sigma: float) -> ReferenceProcess:
    """Shift the drift by the constant `delta_mu` and the diffusion scale by
    `delta_sigma` (the extremal members of the bounded-perturbation class)."""
    if delta_mu < 0 or delta_sigma < 0:
        raise ValueError("perturbation magnitudes must be nonnegative")
    if proc.kind == "brownian":
        new_scale = proc.scale + delta_sigma
        if new_scale <= 0:
            raise ValueError(f"perturbed scale must stay positive, got {new_scale}")
        return replace(proc, drift=proc.drift + delta_mu, scale=new_scale)
    if proc.kind == "ou":
        new_scale = proc.scale + delta_sigma
        if new_scale <= 0:
            raise ValueError(f"perturbed scale must stay positive, got {new_scale}")
        # a constant drift shift moves the long-run mean by delta_mu / rate
        return replace(proc, mean=proc.mean + delta_mu / proc.rate, scale=new_scale)
    raise ValueError("perturbed: gbm drift is state-dependent; constant shifts are not defined for it")

"""Statistical verification of the scoring rule's guarantees at desk scale:
strict properness (the true process scores strictly higher in expectation),
the concentration bound on the empirical estimator, and Lipschitz
sensitivity to bounded drift/diffusion perturbations."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .processes import ReferenceProcess, perturbed, simulate_exact
from .rng import stream
from .scoring import ScoreConfig, sample_pairs, score_main

# kernel upper bound for the RBF kernel (0 < k <= 1)
K_BOUND = 1.0


def concentration_bound(batch: int, delta: float = 0.05, k_bound: float = K_BOUND) -> float:
    """Deviation bound K sqrt(47 ln(2/delta) / (8B)) at confidence 1 - delta."""
    return k_bound * np.sqrt(47.0 * np.log(2.0 / delta) / (8.0 * batch))


@dataclass
class PropernessResult:
    """Scores are reported in higher-is-better orientation (the negated
    kernel discrepancy estimator), so the true process should win."""

    description: str
    mean_score_candidate: float  # generator p against data from q
    mean_score_true: float  # generator q against data from q
    ci_low: float  # 99% bootstrap CI of (true - candidate)
    ci_high: float
    verdict: str  # PASS / FAIL / CONTROL

    def gap(self) -> float:
        return self.mean_score_true - self.mean_score_candidate


@dataclass
class ConcentrationResult:
    batch_sizes: list[int]
    bounds: list[float]
    violation_fractions: list[float]
    deviation_q99: list[float]
    trials: int
    verdict: str


@dataclass
class SensitivityResult:
    deltas: list[float]
    mean_abs_diffs: list[float]
    slope: float
    r_squared: float
    verdict: str


def _trial_score(gen_proc, data_proc, grid, batch, gamma, seed, labels):
    gen = simulate_exact(gen_proc, grid, batch, int(stream(seed, *labels, "gen").integers(2**63)))
    dat = simulate_exact(data_proc, grid, batch, int(stream(seed, *labels, "data").integers(2**63)))
    pairs = sample_pairs(len(grid), batch, stream(seed, *labels, "pairs"))
    return score_main(gen, dat, pairs, ScoreConfig(gamma=gamma))


def check_properness(
    q: ReferenceProcess,
    p: ReferenceProcess,
    grid,
    batch: int = 256,
    trials: int = 500,
    gamma: float = 1.0,
    seed: int = 0,
) -> PropernessResult:
    """Estimate the expected-score gap between the true process q and a
    candidate p on data drawn from q, with scores oriented so that higher
    is better; PASS when the 99% bootstrap CI of the gap lies strictly
    above zero.  With p == q the run acts as a control and the verdict
    reports whether the CI contains zero."""
    grid = np.asarray(grid, dtype=np.float64)
    s_true = np.empty(trials)
    s_cand = np.empty(trials)
    for t in range(trials):
        # shared data batch and pairs per trial: paired comparison
        dat = simulate_exact(q, grid, batch, int(stream(seed, "prop", t, "data").integers(2**63)))
        pairs = sample_pairs(len(grid), batch, stream(seed, "prop", t, "pairs"))
        cfg = ScoreConfig(gamma=gamma)
        gen_q = simulate_exact(q, grid, batch, int(stream(seed, "prop", t, "gq").integers(2**63)))
        gen_p = simulate_exact(p, grid, batch, int(stream(seed, "prop", t, "gp").integers(2**63)))
        # negate the discrepancy estimator so that higher is better
        s_true[t] = -score_main(gen_q, dat, pairs, cfg)
        s_cand[t] = -score_main(gen_p, dat, pairs, cfg)
    diffs = s_true - s_cand
    boot_rng = stream(seed, "prop-boot")
    boot = np.empty(2000)
    for i in range(boot.size):
        boot[i] = diffs[boot_rng.integers(0, trials, size=trials)].mean()
    lo, hi = np.percentile(boot, [0.5, 99.5])
    control = p == q
    if control:
        verdict = "CONTROL" if lo <= 0.0 <= hi else "FAIL"
    else:
        verdict = "PASS" if lo > 0.0 else "FAIL"
    return PropernessResult(
        f"data={q.kind}{_params_str(q)} candidate={p.kind}{_params_str(p)}",
        float(s_cand.mean()),
        float(s_true.mean()),
        float(lo),
        float(hi),
        verdict,
    )


def _params_str(proc: ReferenceProcess) -> str:
    if proc.kind == "brownian":
        return f"(c={proc.drift}, s={proc.scale})"
    if proc.kind == "ou":
        return f"(rate={proc.rate}, mean={proc.mean}, s={proc.scale})"
    return f"(r={proc.drift}, v={proc.vol}, x0={proc.x0})"


def check_concentration(
    q: ReferenceProcess,
    grid,
    batch_sizes=(32, 128, 512),
    trials: int = 500,
    gamma: float = 1.0,
    delta: float = 0.05,
    seed: int = 0,
) -> ConcentrationResult:
    """Fraction of empirical score deviations exceeding the theoretical
    bound at confidence 1 - delta; the bound guarantees at most delta."""
    grid = np.asarray(grid, dtype=np.float64)
    fractions, bounds, q99 = [], [], []
    for b in batch_sizes:
        if b < 2:
            raise ValueError(f"batch sizes must be >= 2, got {b}")
        scores = np.array(
            [_trial_score(q, q, grid, b, gamma, seed, ("conc", b, t)) for t in range(trials)]
        )
        dev = np.abs(scores - scores.mean())
        bound = concentration_bound(b, delta)
        bounds.append(float(bound))
        fractions.append(float(np.mean(dev > bound)))
        q99.append(float(np.quantile(dev, 0.99)))
    verdict = "PASS" if all(f <= delta for f in fractions) else "FAIL"
    return ConcentrationResult(list(batch_sizes), bounds, fractions, q99, trials, verdict)


def check_sensitivity(
    base: ReferenceProcess,
    deltas=(0.05, 0.1, 0.2, 0.4),
    grid=None,
    batch: int = 256,
    trials: int = 200,
    gamma: float = 1.0,
    seed: int = 0,
) -> SensitivityResult:
    """Mean |score difference| between the base process and a drift-shifted
    copy, against the shift size; the theory predicts a line through the
    origin.  Base and perturbed paths share noise (common random numbers)."""
    if grid is None:
        grid = np.linspace(0.0, 1.0, 65)
    grid = np.asarray(grid, dtype=np.float64)
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas):
        raise ValueError("delta grid must start above 0")
    if sorted(deltas) != deltas:
        raise ValueError("delta grid must be increasing")
    cfg = ScoreConfig(gamma=gamma)
    mean_abs = []
    for d in deltas:
        shifted = perturbed(base, d, 0.0)
        diffs = np.empty(trials)
        for t in range(trials):
            sim_seed = int(stream(seed, "sens", t, "gen").integers(2**63))
            gen_base = simulate_exact(base, grid, batch, sim_seed)
            gen_shift = simulate_exact(shifted, grid, batch, sim_seed)  # coupled noise
            dat = simulate_exact(base, grid, batch, int(stream(seed, "sens", t, "data").integers(2**63)))
            pairs = sample_pairs(len(grid), batch, stream(seed, "sens", t, "pairs"))
            diffs[t] = score_main(gen_base, dat, pairs, cfg) - score_main(gen_shift, dat, pairs, cfg)
        mean_abs.append(float(np.mean(np.abs(diffs))))
    darr = np.array(deltas)
    marr = np.array(mean_abs)
    slope = float(np.sum(darr * marr) / np.sum(darr * darr))
    resid = marr - slope * darr
    r2 = float(1.0 - np.sum(resid**2) / np.sum(marr**2))
    within = np.all(marr <= slope * darr * 1.25)
    verdict = "PASS" if (r2 > 0.9 and within) else "FAIL"
    return SensitivityResult(deltas, mean_abs, slope, r2, verdict)


def properness_to_csv(result: PropernessResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["description", "mean_score_candidate", "mean_score_true", "ci_low", "ci_high", "verdict"])
        w.writerow(
            [
                result.description,
                repr(result.mean_score_candidate),
                repr(result.mean_score_true),
                repr(result.ci_low),
                repr(result.ci_high),
                result.verdict,
            ]
        )


def concentration_to_csv(result: ConcentrationResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch_size", "bound", "violation_fraction", "deviation_q99", "trials", "verdict"])
        for b, bound, frac, q in zip(
            result.batch_sizes, result.bounds, result.violation_fractions, result.deviation_q99
        ):
            w.writerow([b, repr(bound), repr(frac), repr(q), result.trials, result.verdict])


def sensitivity_to_csv(result: SensitivityResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "mean_abs_diff", "slope", "r_squared", "verdict"])
        for d, m in zip(result.deltas, result.mean_abs_diffs):
            w.writerow([repr(d), repr(m), repr(result.slope), repr(result.r_squared), result.verdict])

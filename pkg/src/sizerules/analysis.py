"""Monte Carlo harness comparing simulated runs against the theoretical
predictions: the Gumbel law of the rescaled connectivity time, the mean
connectivity round, the extinction race between slow sizes, trajectory
concentration, quadratic scaling of degenerate rules, and the
isolated-vertex domination property of the lexicographic rule.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import rules as _rules
from .dynamics import LimitConstants, Trajectory, expected_tcon, theoretical_cdf
from .rules import RuleError, RuleSpec, resolve, signature
from .simulator import RunRecord, simulate


class AnalysisError(ValueError):
    """Invalid analysis input (too few samples, mismatched processes, ...)."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Reproducible description of a batch of simulation runs.

    ``rule`` is a plain selector mapping ({"name": ..., "K": ..., "ell": ...}
    or {"file": ...}) so worker processes can rebuild the rule. Snapshots are
    taken at rounds round(t * n) for each multiplier t; if
    ``max_round_multiplier`` is set, runs stop at round(mult * n) instead of
    running to connectivity.
    """

    rule: Mapping
    n: int
    runs: int
    base_seed: int = 0
    snapshot_multipliers: tuple = ()
    giant_epsilon: float = 0.05
    max_round_multiplier: "float | None" = None
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise AnalysisError(f"need runs >= 1, got {self.runs}")
        if self.n < 1:
            raise AnalysisError(f"need n >= 1, got {self.n}")
        if any(t <= 0 for t in self.snapshot_multipliers):
            raise AnalysisError("snapshot multipliers must be positive")

    def snapshot_rounds(self) -> list:
        return sorted({int(round(t * self.n)) for t in self.snapshot_multipliers})

    def max_rounds(self) -> "int | None":
        if self.max_round_multiplier is None:
            return None
        return int(round(self.max_round_multiplier * self.n))


def _simulate_one(selector, n, seed, snapshot_rounds, max_rounds, giant_epsilon):
    rule = resolve(selector)
    return simulate(
        rule,
        n,
        seed,
        snapshot_plan=snapshot_rounds,
        max_rounds=max_rounds,
        giant_epsilon=giant_epsilon,
    )


def run_experiment(cfg: ExperimentConfig) -> list:
    """Execute cfg.runs independent simulations with seeds base_seed + i.

    Deterministic given the config: results are ordered by run index, and
    each run's stream depends only on its own seed, never on scheduling.
    """
    rule = resolve(cfg.rule)  # validate the selector up front
    del rule
    seeds = [cfg.base_seed + i for i in range(cfg.runs)]
    snaps = cfg.snapshot_rounds()
    max_rounds = cfg.max_rounds()
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [
                pool.submit(
                    _simulate_one, dict(cfg.rule), cfg.n, s, snaps, max_rounds, cfg.giant_epsilon
                )
                for s in seeds
            ]
            return [f.result() for f in futures]
    return [
        _simulate_one(dict(cfg.rule), cfg.n, s, snaps, max_rounds, cfg.giant_epsilon)
        for s in seeds
    ]


# ---------------------------------------------------------------------------
# Rescaling and goodness of fit


def rescale_tcon(t_con, ext: int, n: int):
    """T' = ext * T_con / n - log n, the scale on which the Gumbel limit lives."""
    return ext * np.asarray(t_con, dtype=float) / n - math.log(n)


def unrescale_tcon(t_prime: float, ext: int, n: int) -> int:
    """Inverse of rescale_tcon, rounded back to the integer round."""
    return int(round((t_prime + math.log(n)) * n / ext))


def ks_distance(samples: np.ndarray, cdf) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float))
    m = len(x)
    f = np.asarray(cdf(x), dtype=float)
    upper = np.max(np.arange(1, m + 1) / m - f)
    lower = np.max(f - np.arange(0, m) / m)
    return float(max(upper, lower))


def ks_two_sample_onesided_critical(m1: int, m2: int, alpha: float) -> float:
    """Large-sample one-sided two-sample Kolmogorov-Smirnov critical value."""
    return math.sqrt(-math.log(alpha) / 2.0) * math.sqrt((m1 + m2) / (m1 * m2))


def wilson_interval(successes: float, trials: int, z: float = 3.0) -> tuple:
    """Wilson score interval (center, halfwidth) for a binomial proportion."""
    if trials <= 0:
        raise AnalysisError("wilson_interval needs trials >= 1")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    halfwidth = (
        z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    )
    return center, halfwidth


@dataclass(frozen=True)
class GumbelReport:
    rescaled_samples: list
    ks_statistic: float
    mean_tcon: float
    predicted_mean: float
    relative_error: float
    empirical_p0: float
    predicted_p0: float
    binomial_se_p0: float


def gumbel_comparison(samples: Sequence[int], consts: LimitConstants, n: int) -> GumbelReport:
    """Compare connectivity rounds against the Gumbel limit law.

    ``samples`` are raw T_con rounds. Also reports the empirical probability
    of connecting by the c=0 round, n*log(n)/ext, against its prediction.
    """
    if len(samples) < 100:
        raise AnalysisError(f"need at least 100 samples, got {len(samples)}")
    if not consts.converged:
        raise AnalysisError("limit constants did not converge")
    samples = np.asarray(samples, dtype=np.int64)
    rescaled = rescale_tcon(samples, consts.ext, n)
    ks = ks_distance(rescaled, lambda c: theoretical_cdf(consts, c))
    mean_tcon = float(np.mean(samples))
    predicted = expected_tcon(consts, n)
    p0_emp = float(np.mean(rescaled <= 0.0))
    p0_pred = float(theoretical_cdf(consts, 0.0))
    se = math.sqrt(p0_pred * (1 - p0_pred) / len(samples))
    return GumbelReport(
        rescaled_samples=[float(v) for v in rescaled],
        ks_statistic=ks,
        mean_tcon=mean_tcon,
        predicted_mean=predicted,
        relative_error=abs(mean_tcon - predicted) / predicted,
        empirical_p0=p0_emp,
        predicted_p0=p0_pred,
        binomial_se_p0=se,
    )


@dataclass(frozen=True)
class SpeciesReport:
    """Empirical extinction-race frequencies vs the predicted d_k / sum d_i."""

    counts: dict
    frequencies: dict
    predicted: dict
    wilson: dict  # k -> (center, halfwidth) at z = 3
    none_frequency: float
    fast_frequency: float
    runs: int


def last_species_analysis(records: Sequence[RunRecord], consts: LimitConstants) -> SpeciesReport:
    """Which size vanished last, with ties counted half each."""
    runs = len(records)
    if runs == 0:
        raise AnalysisError("empty run table")
    sig_slow = set(consts.slow)
    counts: dict = {}
    none_count = 0.0
    fast_count = 0.0
    for rec in records:
        last = rec.last_sizes
        if not last:
            none_count += 1.0
            continue
        w = 1.0 / len(last)
        for k in last:
            counts[k] = counts.get(k, 0.0) + w
            if k not in sig_slow:
                fast_count += w
    freqs = {k: counts[k] / runs for k in sorted(counts)}
    predicted = {k: consts.d[k] / sum(consts.d.values()) for k in consts.slow}
    wilson = {k: wilson_interval(counts[k], runs) for k in sorted(counts)}
    return SpeciesReport(
        counts={k: counts[k] for k in sorted(counts)},
        frequencies=freqs,
        predicted=predicted,
        wilson=wilson,
        none_frequency=none_count / runs,
        fast_frequency=fast_count / runs,
        runs=runs,
    )


@dataclass(frozen=True)
class TrajectoryReport:
    """Mean over runs of max_k |Y_k(t*n)/n - z_k(t)| per snapshot time."""

    errors: dict  # t -> mean max-abs error over sizes 1..K
    omega_errors: dict  # t -> mean |omega-vertex fraction - z_omega(t)|
    per_size: dict  # t -> {k: mean abs error}
    runs: int


def trajectory_validation(
    records: Sequence[RunRecord],
    trajectory: Trajectory,
    n: int,
    multipliers: Sequence[float],
) -> TrajectoryReport:
    """Check concentration of Y_k(t*n)/n around the trajectory z_k(t)."""
    if not records:
        raise AnalysisError("empty run table")
    K = len(records[0].t_k)
    rounds = {t: int(round(t * n)) for t in multipliers}
    z_at = {}
    for t in multipliers:
        try:
            z_at[t] = trajectory.at(float(t))
        except ValueError as exc:
            raise AnalysisError(f"snapshot time {t} not on trajectory grid") from exc
    errors = {}
    omega_errors = {}
    per_size = {}
    for t in multipliers:
        target = rounds[t]
        per_run = []
        per_run_omega = []
        sums = np.zeros(K)
        for rec in records:
            snap = next((s for s in rec.snapshots if s.round == target), None)
            if snap is None:
                raise AnalysisError(
                    f"run seeded {rec.seed} has no snapshot at round {target}"
                )
            y = np.asarray(snap.y, dtype=float)
            diffs = np.abs(y / n - z_at[t][:K])
            per_run.append(float(np.max(diffs)))
            sums += diffs
            # y already counts vertices per size, so omega vertices = n - sum(y)
            omega_frac = 1.0 - float(y.sum()) / n
            per_run_omega.append(abs(omega_frac - float(z_at[t][K])))
        errors[float(t)] = float(np.mean(per_run))
        omega_errors[float(t)] = float(np.mean(per_run_omega))
        per_size[float(t)] = {k + 1: float(sums[k] / len(records)) for k in range(K)}
    return TrajectoryReport(errors=errors, omega_errors=omega_errors, per_size=per_size, runs=len(records))


@dataclass(frozen=True)
class ScalingReport:
    """Median connectivity rounds of a degenerate rule across n, with the
    fitted log-log exponent."""

    medians: dict
    exponent: float
    timeouts: dict
    runs_per_n: int


def degenerate_scaling(
    selector: Mapping,
    ns: Sequence[int],
    runs: int,
    base_seed: int = 0,
    workers: int = 1,
) -> ScalingReport:
    rule = resolve(selector)
    if not signature(rule).degenerate:
        raise AnalysisError(f"rule {rule.name!r} is not degenerate")
    if len(ns) < 2:
        raise AnalysisError("need at least two values of n to fit an exponent")
    medians = {}
    timeouts = {}
    for n in ns:
        cfg = ExperimentConfig(rule=dict(selector), n=int(n), runs=runs, base_seed=base_seed, workers=workers)
        records = run_experiment(cfg)
        done = [r.t_con for r in records if r.t_con is not None]
        timeouts[int(n)] = runs - len(done)
        if not done:
            raise AnalysisError(f"all runs timed out at n={n}")
        medians[int(n)] = float(np.median(done))
    xs = np.log(np.asarray(sorted(medians), dtype=float))
    ys = np.log(np.asarray([medians[n] for n in sorted(medians)]))
    exponent = float(np.polyfit(xs, ys, 1)[0])
    return ScalingReport(medians=medians, exponent=exponent, timeouts=timeouts, runs_per_n=runs)


@dataclass(frozen=True)
class DominationReport:
    """One-sided comparison of isolated-vertex counts at fixed rounds.

    The greedy lexicographic rule should keep stochastically fewer isolated
    vertices than any other process on the same ell, so the signed margin
    max_mu(F_other(mu) - F_lex(mu)) should stay at sampling-noise level.
    """

    checkpoints: tuple
    margins: dict  # round -> one-sided sup of F_other - F_lex
    critical_value: float
    mean_y1: dict  # round -> (lex mean, other mean)
    runs: int


def _y1_at_checkpoints(records, checkpoints):
    out = {c: [] for c in checkpoints}
    for rec in records:
        for snap in rec.snapshots:
            if snap.round in out:
                out[snap.round].append(snap.y[0])
    return out


def one_sided_ecdf_margin(reference: Sequence[int], other: Sequence[int]) -> float:
    """max over mu of (F_other(mu) - F_reference(mu)), >= 0 by convention."""
    ref = np.sort(np.asarray(reference, dtype=float))
    oth = np.sort(np.asarray(other, dtype=float))
    grid = np.unique(np.concatenate([ref, oth]))
    f_ref = np.searchsorted(ref, grid, side="right") / len(ref)
    f_oth = np.searchsorted(oth, grid, side="right") / len(oth)
    return float(max(0.0, np.max(f_oth - f_ref)))


def domination_check(
    lex_selector: Mapping,
    other_selector: Mapping,
    n: int,
    checkpoint_multipliers: Sequence[float],
    runs: int,
    base_seed: int = 0,
    workers: int = 1,
    alpha: float = 0.01,
) -> DominationReport:
    """Compare Y_1 distributions of the lexicographic process and another
    process at fixed rounds; both must draw the same number of vertices."""
    rule_lex = resolve(lex_selector)
    rule_other = resolve(other_selector)
    if rule_lex.ell != rule_other.ell:
        raise AnalysisError(
            f"processes sample different ell: {rule_lex.ell} vs {rule_other.ell}"
        )
    checkpoints = sorted({int(round(t * n)) for t in checkpoint_multipliers})
    mult = max(checkpoint_multipliers)
    cfg_lex = ExperimentConfig(
        rule=dict(lex_selector),
        n=n,
        runs=runs,
        base_seed=base_seed,
        snapshot_multipliers=tuple(checkpoint_multipliers),
        max_round_multiplier=mult,
        workers=workers,
    )
    cfg_other = ExperimentConfig(
        rule=dict(other_selector),
        n=n,
        runs=runs,
        base_seed=base_seed + runs,
        snapshot_multipliers=tuple(checkpoint_multipliers),
        max_round_multiplier=mult,
        workers=workers,
    )
    y1_lex = _y1_at_checkpoints(run_experiment(cfg_lex), checkpoints)
    y1_other = _y1_at_checkpoints(run_experiment(cfg_other), checkpoints)
    margins = {}
    means = {}
    for c in checkpoints:
        margins[c] = one_sided_ecdf_margin(y1_lex[c], y1_other[c])
        means[c] = (float(np.mean(y1_lex[c])), float(np.mean(y1_other[c])))
    return DominationReport(
        checkpoints=tuple(checkpoints),
        margins=margins,
        critical_value=ks_two_sample_onesided_critical(runs, runs, alpha),
        mean_y1=means,
        runs=runs,
    )


# ---------------------------------------------------------------------------
# Aggregate report


@dataclass(frozen=True)
class ComparisonReport:
    """Everything an experiment produced, next to its predictions."""

    rescaled_samples: list
    ks_statistic: "float | None"
    mean_tcon: "float | None"
    predicted_mean: "float | None"
    relative_error: "float | None"
    last_species_freq: "dict | None"
    trajectory_errors: "dict | None"
    timeouts: int
    runs: int


def build_comparison_report(
    records: Sequence[RunRecord],
    consts: "LimitConstants | None",
    n: int,
    trajectory: "Trajectory | None" = None,
    multipliers: Sequence[float] = (),
) -> ComparisonReport:
    timeouts = sum(1 for r in records if r.status == "timeout")
    connected = [r.t_con for r in records if r.t_con is not None]
    gumbel = None
    species = None
    if consts is not None and len(connected) >= 100:
        gumbel = gumbel_comparison(connected, consts, n)
        species = last_species_analysis(
            [r for r in records if r.t_con is not None], consts
        )
    traj_report = None
    if trajectory is not None and multipliers:
        traj_report = trajectory_validation(records, trajectory, n, multipliers)
    return ComparisonReport(
        rescaled_samples=gumbel.rescaled_samples if gumbel else [],
        ks_statistic=gumbel.ks_statistic if gumbel else None,
        mean_tcon=gumbel.mean_tcon if gumbel else None,
        predicted_mean=gumbel.predicted_mean if gumbel else None,
        relative_error=gumbel.relative_error if gumbel else None,
        last_species_freq=(
            {
                "frequencies": species.frequencies,
                "predicted": species.predicted,
                "wilson": {k: list(v) for k, v in species.wilson.items()},
                "none_frequency": species.none_frequency,
                "fast_frequency": species.fast_frequency,
            }
            if species
            else None
        ),
        trajectory_errors=traj_report.errors if traj_report else None,
        timeouts=timeouts,
        runs=len(records),
    )


def report_to_dict(report) -> dict:
    """JSON-ready view of any of the report dataclasses."""
    return asdict(report)

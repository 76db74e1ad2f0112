"""Post-selection protocols and the estimators used to report them."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from postselect_lab.data import Dataset, SplitPlan
from postselect_lab.learners import HONEST, LearnerFamily, evaluate_error, fit_honest
from postselect_lab.seeding import derive_seed

PSUVS = "PSUVS"
PSUTS = "PSUTS"

# positions of the five-number ranked report, as exact fractions (numerator, denominator)
PERCENTILE_POSITIONS = ((0, 4), (1, 4), (2, 4), (3, 4), (4, 4))
PERCENTILE_KEYS = ("p0", "p25", "p50", "p75", "p100")

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Order-preserving map; results never depend on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ErrorSample:
    theta_id: int
    descriptor: dict
    err_val: float
    err_test: float | None = None

    def __post_init__(self) -> None:
        for name in ("err_val", "err_test"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class EstimateReport:
    n: int
    mean: float
    sample_std: float | None
    percentiles: tuple[float, float, float, float, float]

    def to_dict(self) -> dict:
        out = {"n": self.n, "mean": self.mean, "sample_std": self.sample_std}
        out.update(zip(PERCENTILE_KEYS, self.percentiles))
        return out

    def summary_line(self, label: str = "errors") -> str:
        std = "n/a" if self.sample_std is None else f"{self.sample_std:.4f}"
        pct = " ".join(f"{k}={v:.4f}" for k, v in zip(PERCENTILE_KEYS, self.percentiles))
        return f"{label}: n={self.n} mean={self.mean:.4f} std={std} {pct}"


def min_mse_estimate(errors: Sequence[tuple[float, float]]) -> float:
    """Probability-weighted mean, the minimiser of sum_i P_i (e - e_i)^2."""
    if not errors:
        raise ValueError("empty error list")
    values = np.array([float(v) for v, _ in errors])
    probs = np.array([float(p) for _, p in errors])
    if (probs < 0).any():
        raise ValueError("probabilities must be non-negative")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities are not normalized")
    return float(np.dot(values, probs))


def _nearest_rank(sorted_values: Sequence[float], num: int, den: int) -> float:
    n = len(sorted_values)
    rank = max(1, -(-num * n // den))
    return float(sorted_values[rank - 1])


def estimate_report(errors: Sequence[float]) -> EstimateReport:
    """Mean, sample standard deviation and nearest-rank five-point summary."""
    values = [float(e) for e in errors]
    if not values:
        raise ValueError("empty error list")
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise ValueError("error values must lie in [0, 1]")
    arr = np.array(values)
    n = len(values)
    std = float(np.std(arr, ddof=1)) if n >= 2 else None
    ordered = sorted(values)
    pct = tuple(_nearest_rank(ordered, a, b) for a, b in PERCENTILE_POSITIONS)
    return EstimateReport(n=n, mean=float(arr.mean()), sample_std=std, percentiles=pct)


@dataclass(frozen=True)
class PostSelectionOutcome:
    mode: str
    m: int
    luckiest_ids: tuple[int, ...]
    luckiest_val_err: float
    luckiest_test_err: float | None
    report: EstimateReport
    test_report: EstimateReport | None
    samples: tuple[ErrorSample, ...] = field(repr=False)

    @property
    def inflation_gap(self) -> float | None:
        if self.luckiest_test_err is None:
            return None
        return self.luckiest_test_err - self.luckiest_val_err

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "m": self.m,
            "luckiest_ids": list(self.luckiest_ids),
            "luckiest_val_err": self.luckiest_val_err,
            "luckiest_test_err": self.luckiest_test_err,
            "inflation_gap": self.inflation_gap,
            "report": self.report.to_dict(),
            "test_report": None if self.test_report is None else self.test_report.to_dict(),
            "trials": [
                {"theta_id": s.theta_id, "descriptor": s.descriptor, "err_val": s.err_val, "err_test": s.err_test}
                for s in self.samples
            ],
        }


def post_select(samples: Sequence[ErrorSample], mode: str = PSUVS, m: int = 1) -> PostSelectionOutcome:
    """Rank trials and pick the luckiest ``m``, keeping full reports over all of them.

    PSUVS ranks by validation error. PSUTS ranks by test error, which is the
    same as treating T as a second validation set, so its reported
    ``luckiest_val_err`` is the test error used for selection.
    """
    if mode not in (PSUVS, PSUTS):
        raise ValueError(f"mode must be {PSUVS} or {PSUTS}")
    if not samples:
        raise ValueError("no trials to select from")
    if m < 1:
        raise ValueError("m must be at least 1")
    if m > len(samples):
        raise ValueError(f"m > n ({m} > {len(samples)})")
    has_test = all(s.err_test is not None for s in samples)
    if mode == PSUTS and not has_test:
        raise ValueError("PSUTS requested but the test set is withheld")

    ordered = tuple(sorted(samples, key=lambda s: s.theta_id))
    key = (lambda s: (s.err_val, s.theta_id)) if mode == PSUVS else (lambda s: (s.err_test, s.theta_id))
    ranked = sorted(ordered, key=key)
    best = ranked[0]
    selected_err = best.err_val if mode == PSUVS else best.err_test
    return PostSelectionOutcome(
        mode=mode,
        m=m,
        luckiest_ids=tuple(s.theta_id for s in ranked[:m]),
        luckiest_val_err=float(selected_err),
        luckiest_test_err=best.err_test,
        report=estimate_report([s.err_val for s in ordered]),
        test_report=estimate_report([s.err_test for s in ordered]) if has_test else None,
        samples=ordered,
    )


def _run_trial(family: LearnerFamily, dataset: Dataset, split: SplitPlan, seed: int, theta_id: int) -> ErrorSample:
    learner = family.instantiate(seed)
    model = fit_honest(learner, dataset, split.fit_idx)
    return ErrorSample(
        theta_id=theta_id,
        descriptor=learner.to_dict(),
        err_val=evaluate_error(model, dataset, split.val_idx),
        err_test=evaluate_error(model, dataset, split.test_idx) if split.test_idx else None,
    )


@dataclass(frozen=True)
class LostLuckVerdict:
    mean_val_err: float
    mean_test_err: float
    luckiest_val_err: float
    luckiest_test_err: float
    test_standard_error: float
    tolerance_se: float
    # |luckiest test error - mean validation error| within tolerance: luck is lost, the average predicts
    lost_luck_holds: bool
    # luckiest validation error strictly below the mean: the post-selected figure under-estimates
    underestimates: bool
    # luckiest validation error carried over to T within tolerance (expected False)
    luck_transfers: bool

    @property
    def passed(self) -> bool:
        return self.lost_luck_holds and self.underestimates

    def to_dict(self) -> dict:
        return {
            "mean_val_err": self.mean_val_err,
            "mean_test_err": self.mean_test_err,
            "luckiest_val_err": self.luckiest_val_err,
            "luckiest_test_err": self.luckiest_test_err,
            "gap_to_mean_val": self.luckiest_test_err - self.mean_val_err,
            "inflation_gap": self.luckiest_test_err - self.luckiest_val_err,
            "test_standard_error": self.test_standard_error,
            "tolerance_se": self.tolerance_se,
            "lost_luck_holds": self.lost_luck_holds,
            "underestimates": self.underestimates,
            "luck_transfers": self.luck_transfers,
            "passed": self.passed,
        }


def lost_luck_experiment(
    dataset: Dataset,
    split: SplitPlan,
    learner_family: LearnerFamily,
    n: int,
    master_seed: int,
    tolerance_se: float = 3.0,
    workers: int = 1,
) -> tuple[PostSelectionOutcome, LostLuckVerdict]:
    """Train ``n`` seeds of one family, post-select on V, and check what survives on T.

    The tolerance unit is the standard error of one model's error rate on T,
    ``sqrt(e (1 - e) / |T|)`` with ``e`` the mean test error over all trials.
    """
    if not split.test_idx:
        raise ValueError("empty test set")
    if learner_family.mode != HONEST:
        raise ValueError("lost-luck experiment takes honest learner families only")
    if n < 2:
        raise ValueError("n >= 2 required")

    def trial(i: int) -> ErrorSample:
        return _run_trial(learner_family, dataset, split, derive_seed(master_seed, "lost-luck", i), i)

    samples = parallel_map(trial, range(n), workers)
    outcome = post_select(samples, PSUVS, 1)
    mean_v = outcome.report.mean
    mean_t = outcome.test_report.mean
    se = math.sqrt(mean_t * (1.0 - mean_t) / len(split.test_idx))
    lt, lv = outcome.luckiest_test_err, outcome.luckiest_val_err
    verdict = LostLuckVerdict(
        mean_val_err=mean_v,
        mean_test_err=mean_t,
        luckiest_val_err=lv,
        luckiest_test_err=lt,
        test_standard_error=se,
        tolerance_se=tolerance_se,
        lost_luck_holds=abs(lt - mean_v) <= tolerance_se * se,
        underestimates=lv < mean_v,
        luck_transfers=abs(lt - lv) <= tolerance_se * se,
    )
    return outcome, verdict


@dataclass(frozen=True)
class AllNetworksReport:
    architectures: tuple[LearnerFamily, ...]
    report: EstimateReport
    per_architecture: tuple[EstimateReport, ...]
    test_report: EstimateReport | None
    samples: tuple[ErrorSample, ...] = field(repr=False)

    @property
    def architecture_spread(self) -> float:
        """Range of per-architecture mean validation errors."""
        means = [r.mean for r in self.per_architecture]
        return max(means) - min(means)

    def to_dict(self) -> dict:
        return {
            "report": self.report.to_dict(),
            "test_report": None if self.test_report is None else self.test_report.to_dict(),
            "architecture_spread": self.architecture_spread,
            "per_architecture": [
                {"architecture": a.to_dict(), "report": r.to_dict()}
                for a, r in zip(self.architectures, self.per_architecture)
            ],
            "trials": [
                {"theta_id": s.theta_id, "descriptor": s.descriptor, "err_val": s.err_val, "err_test": s.err_test}
                for s in self.samples
            ],
        }


def report_all_networks(
    architectures: Sequence[LearnerFamily],
    weights_per_arch: int,
    dataset: Dataset,
    split: SplitPlan,
    master_seed: int,
    workers: int = 1,
) -> AllNetworksReport:
    """Train every (architecture, seed) pair and report over all k*n of them."""
    if not architectures:
        raise ValueError("k >= 1 architectures required")
    if weights_per_arch < 1:
        raise ValueError("n >= 1 seeds per architecture required")
    k, n = len(architectures), weights_per_arch
    for a in architectures:
        if a.mode != HONEST:
            raise ValueError("report_all_networks takes honest learner families only")

    def trial(flat: int) -> ErrorSample:
        i, j = divmod(flat, n)
        seed = derive_seed(master_seed, "report-all", i, j)
        return _run_trial(architectures[i], dataset, split, seed, flat)

    samples = parallel_map(trial, range(k * n), workers)
    per_arch = tuple(estimate_report([s.err_val for s in samples[i * n : (i + 1) * n]]) for i in range(k))
    has_test = bool(split.test_idx)
    return AllNetworksReport(
        architectures=tuple(architectures),
        report=estimate_report([s.err_val for s in samples]),
        per_architecture=per_arch,
        test_report=estimate_report([s.err_test for s in samples]) if has_test else None,
        samples=tuple(samples),
    )

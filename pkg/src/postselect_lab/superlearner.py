"""Super Learner weighting by exhaustive simplex search, and its capture by a lucky learner.

Candidates are classifiers, so the ensemble is a weighted plurality vote:
each candidate adds its weight to the label it predicts and the heaviest
label wins (lowest label on ties). Weights live on a regular grid over the
unit simplex; they are kept as integer counts of ``grid_step`` internally so
votes and risk comparisons are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from postselect_lab.crossval import (
    Plan,
    _check_test,
    chance_error,
    chance_tolerance,
    resolve_universe,
    validation_units,
)
from postselect_lab.data import Dataset, NestedFoldPlan
from postselect_lab.learners import (
    MISCONDUCT,
    LearnerFamily,
    ResourceLedger,
    TrainedModel,
    fit_learner,
    predict_many,
)
from postselect_lab.protocols import parallel_map
from postselect_lab.seeding import derive_seed

DEFAULT_BUDGET = 5_000_000
# grid points scored per vectorised batch
GRID_CHUNK = 512


def grid_steps(grid_step: float) -> int:
    if not grid_step > 0:
        raise ValueError(f"grid_step {grid_step} does not divide 1 evenly")
    steps = int(round(1.0 / grid_step))
    if steps < 1 or abs(steps * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid_step {grid_step} does not divide 1 evenly")
    return steps


def simplex_grid_size(num_candidates: int, steps: int) -> int:
    return math.comb(steps + num_candidates - 1, num_candidates - 1)


def iter_simplex(num_candidates: int, steps: int) -> Iterator[tuple[int, ...]]:
    """Integer compositions of ``steps`` into ``num_candidates`` parts, lexicographically descending."""
    if num_candidates == 1:
        yield (steps,)
        return
    for first in range(steps, -1, -1):
        for rest in iter_simplex(num_candidates - 1, steps - first):
            yield (first, *rest)


@dataclass(frozen=True)
class SuperLearnerResult:
    candidates: tuple[LearnerFamily, ...]
    weights: tuple[float, ...]
    cv_risk: float
    grid_step: float
    grid_size: int
    candidate_risks: tuple[float, ...]
    scheme: str
    withheld_test_error: float | None = None
    ledgers: tuple[dict, ...] = ()
    models: tuple[tuple[TrainedModel, ...], ...] = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "candidates": [c.to_dict() for c in self.candidates],
            "weights": list(self.weights),
            "cv_risk": self.cv_risk,
            "grid_step": self.grid_step,
            "grid_size": self.grid_size,
            "candidate_risks": list(self.candidate_risks),
            "scheme": self.scheme,
            "withheld_test_error": self.withheld_test_error,
            "ledgers": list(self.ledgers),
        }


def _vote(preds: np.ndarray, weight_counts: np.ndarray, num_labels: int) -> np.ndarray:
    """Ensemble labels for each weight row. preds: (C, N); weight_counts: (G, C) -> (G, N)."""
    onehot = (preds[:, :, None] == np.arange(num_labels)[None, None, :]).astype(np.int64)
    scores = np.tensordot(weight_counts, onehot, axes=([1], [0]))
    return np.argmax(scores, axis=2)


def super_learn(
    dataset: Dataset,
    folds: Plan,
    candidates: Sequence[LearnerFamily],
    grid_step: float,
    seed: int,
    universe: Sequence[int] | None = None,
    withheld_test: Sequence[int] | None = None,
    budget: int = DEFAULT_BUDGET,
    workers: int = 1,
) -> SuperLearnerResult:
    """Pick the simplex weighting of candidates with the lowest cross-validated risk.

    Risk is the fold-averaged error of the weighted vote. Among equal-risk
    weightings the most concentrated one wins (largest single weight), then
    the lexicographically largest weight vector. Works with both plain and
    nested fold plans; with a nested plan every cell is one validation unit.
    """
    candidates = tuple(candidates)
    if len(candidates) < 2:
        raise ValueError("fewer than 2 candidates")
    steps = grid_steps(grid_step)
    C = len(candidates)
    size = simplex_grid_size(C, steps)
    if size * C > budget:
        raise ValueError(f"budget exceeded: {size} grid points x {C} candidates > {budget}")

    units = validation_units(dataset, folds, universe)
    test = _check_test(resolve_universe(dataset, folds, universe), withheld_test, dataset)
    L = dataset.num_labels

    def fit_unit(u: int):
        unit = units[u]
        models = []
        for c, family in enumerate(candidates):
            learner = family.instantiate(derive_seed(seed, "superlearner", u, c))
            val = unit.val_idx if family.mode == MISCONDUCT else None
            models.append(fit_learner(learner, dataset, unit.fit_idx, val))
        X_v = dataset.features[list(unit.val_idx)]
        val_preds = np.stack([predict_many(m, X_v) for m in models])
        test_preds = np.stack([predict_many(m, dataset.features[list(test)]) for m in models]) if test else None
        return tuple(models), val_preds, test_preds

    fitted = parallel_map(fit_unit, range(len(units)), workers)
    preds = np.concatenate([f[1] for f in fitted], axis=1)
    truth = np.concatenate([dataset.labels[list(u.val_idx)] for u in units])
    unit_of = np.concatenate([np.full(len(u.val_idx), i) for i, u in enumerate(units)])
    membership = (unit_of[:, None] == np.arange(len(units))[None, :]).astype(np.int64)
    unit_sizes = membership.sum(axis=0).astype(np.float64)

    grid = np.array(list(iter_simplex(C, steps)), dtype=np.int64)
    risks = np.empty(len(grid))
    for start in range(0, len(grid), GRID_CHUNK):
        block = grid[start : start + GRID_CHUNK]
        wrong = (_vote(preds, block, L) != truth[None, :]).astype(np.int64)
        unit_err = (wrong @ membership) / unit_sizes[None, :]
        risks[start : start + GRID_CHUNK] = unit_err.mean(axis=1)

    # grid is already in descending lexicographic order, so position breaks the final tie
    order = np.lexsort((np.arange(len(grid)), -grid.max(axis=1), risks))
    best = int(order[0])
    best_counts = grid[best]
    vertex_rows = [int(np.flatnonzero((grid[:, c] == steps))[0]) for c in range(C)]

    test_error = None
    if test:
        test_truth = dataset.labels[list(test)]
        errs = [float(np.mean(_vote(f[2], best_counts[None, :], L)[0] != test_truth)) for f in fitted]
        test_error = math.fsum(errs) / len(errs)

    scheme = "nested-cv" if isinstance(folds, NestedFoldPlan) else "input-cv"
    return SuperLearnerResult(
        candidates=candidates,
        weights=tuple(float(w) / steps for w in best_counts),
        cv_risk=float(risks[best]),
        grid_step=float(grid_step),
        grid_size=int(len(grid)),
        candidate_risks=tuple(float(risks[r]) for r in vertex_rows),
        scheme=scheme,
        withheld_test_error=test_error,
        ledgers=tuple(ResourceLedger.total([f[0][c].ledger for f in fitted]) for c in range(C)),
        models=tuple(f[0] for f in fitted),
    )


@dataclass(frozen=True)
class CaptureVerdict:
    status: str
    captured: bool
    zero_risk: bool
    test_near_chance: bool
    chance: float
    tolerance: float
    misconduct_weight: float

    @property
    def passed(self) -> bool:
        # a non-captured run is reported, not failed
        if not self.captured:
            return True
        return self.zero_risk and self.test_near_chance

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "captured": self.captured,
            "zero_risk": self.zero_risk,
            "test_near_chance": self.test_near_chance,
            "chance": self.chance,
            "tolerance": self.tolerance,
            "misconduct_weight": self.misconduct_weight,
            "passed": self.passed,
        }


def adversarial_injection(
    dataset: Dataset,
    folds: Plan,
    honest_candidates: Sequence[LearnerFamily],
    misconduct_family: LearnerFamily,
    grid_step: float,
    withheld_test: Sequence[int],
    seed: int,
    universe: Sequence[int] | None = None,
    budget: int = DEFAULT_BUDGET,
    workers: int = 1,
) -> tuple[SuperLearnerResult, CaptureVerdict]:
    """Run the Super Learner with a misconduct learner placed first among the candidates."""
    if misconduct_family.mode != MISCONDUCT:
        raise ValueError("misconduct_family must be nnwt or pgnn")
    if withheld_test is None or len(withheld_test) == 0:
        raise ValueError("empty withheld test set")
    for h in honest_candidates:
        if h.mode == MISCONDUCT:
            raise ValueError(f"{h.name} is not an honest candidate")
    result = super_learn(
        dataset,
        folds,
        [misconduct_family, *honest_candidates],
        grid_step,
        seed,
        universe=universe,
        withheld_test=withheld_test,
        budget=budget,
        workers=workers,
    )
    chance = chance_error(dataset.num_labels)
    tol = chance_tolerance(dataset.num_labels, len(set(withheld_test)))
    captured = result.weights[0] == 1.0
    verdict = CaptureVerdict(
        status="capture" if captured else "no capture",
        captured=captured,
        zero_risk=result.cv_risk == 0.0,
        test_near_chance=abs(result.withheld_test_error - chance) <= tol,
        chance=chance,
        tolerance=tol,
        misconduct_weight=result.weights[0],
    )
    return result, verdict

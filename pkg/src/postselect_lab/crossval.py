"""Fold-based cross-validation and the misconduct audit built on it.

A plan (FoldPlan or NestedFoldPlan) indexes positions ``0..source_size-1``.
Those positions are mapped onto dataset indices through ``universe``,
which defaults to the first ``source_size`` samples. Anything outside the
universe, in particular a withheld test set, is never passed to a fit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

from postselect_lab.data import Dataset, FoldPlan, NestedFoldPlan
from postselect_lab.learners import (
    MISCONDUCT,
    LearnerFamily,
    ResourceLedger,
    TrainedModel,
    evaluate_error,
    fit_learner,
)
from postselect_lab.protocols import parallel_map
from postselect_lab.seeding import derive_seed

Plan = FoldPlan | NestedFoldPlan

HONEST_TOLERANCE = 0.1
CHANCE_TOLERANCE_SE = 3.0


@dataclass(frozen=True)
class ValidationUnit:
    """One fold (or nested cell): dataset indices to fit on and to validate on."""

    label: str
    fit_idx: tuple[int, ...]
    val_idx: tuple[int, ...]


def resolve_universe(dataset: Dataset, plan: Plan, universe: Sequence[int] | None) -> tuple[int, ...]:
    if universe is None:
        if plan.source_size > len(dataset):
            raise ValueError("plan is larger than the dataset")
        return tuple(range(plan.source_size))
    universe = tuple(int(u) for u in universe)
    if len(universe) != plan.source_size:
        raise ValueError("universe size must equal the plan's source size")
    if len(set(universe)) != len(universe) or min(universe) < 0 or max(universe) >= len(dataset):
        raise ValueError("universe must be distinct indices into the dataset")
    return universe


def validation_units(dataset: Dataset, plan: Plan, universe: Sequence[int] | None = None) -> list[ValidationUnit]:
    """Fit/validation index pairs for every fold or nested cell, in plan order."""
    uni = resolve_universe(dataset, plan, universe)
    units = []
    if isinstance(plan, NestedFoldPlan):
        labelled = [(f"cell[{i},{j}]", cell) for i, j, cell in plan.iter_cells()]
    elif isinstance(plan, FoldPlan):
        labelled = [(f"fold[{v}]", fold) for v, fold in enumerate(plan.folds)]
    else:
        raise ValueError("invalid fold plan")
    for label, positions in labelled:
        held = set(positions)
        units.append(
            ValidationUnit(
                label=label,
                fit_idx=tuple(sorted(uni[p] for p in range(plan.source_size) if p not in held)),
                val_idx=tuple(sorted(uni[p] for p in positions)),
            )
        )
    return units


@dataclass(frozen=True)
class CvResult:
    family: LearnerFamily
    scheme: str
    unit_labels: tuple[str, ...]
    fold_errors: tuple[float, ...]
    per_fold_ledgers: tuple[ResourceLedger, ...]
    withheld_test_error: float | None = None
    fold_test_errors: tuple[float, ...] | None = None
    models: tuple[TrainedModel, ...] = field(default=(), repr=False, compare=False)

    @property
    def cv_error(self) -> float:
        return math.fsum(self.fold_errors) / len(self.fold_errors)

    def to_dict(self) -> dict:
        return {
            "family": self.family.to_dict(),
            "scheme": self.scheme,
            "fold_errors": list(self.fold_errors),
            "units": list(self.unit_labels),
            "cv_error": self.cv_error,
            "withheld_test_error": self.withheld_test_error,
            "fold_test_errors": None if self.fold_test_errors is None else list(self.fold_test_errors),
            "per_fold_ledgers": [lg.to_dict() for lg in self.per_fold_ledgers],
            "ledger_total": ResourceLedger.total(self.per_fold_ledgers),
        }


def _scheme(plan: Plan) -> str:
    if isinstance(plan, NestedFoldPlan):
        return f"nested-{plan.n}x{plan.k}"
    return "loocv" if plan.is_loocv else f"{plan.n}-fold"


def _check_test(universe: tuple[int, ...], withheld_test: Sequence[int] | None, dataset: Dataset) -> tuple[int, ...] | None:
    if withheld_test is None:
        return None
    test = tuple(sorted(int(t) for t in withheld_test))
    if not test:
        raise ValueError("empty withheld test set")
    if set(test) & set(universe):
        raise ValueError("withheld test set overlaps fold data")
    if test[0] < 0 or test[-1] >= len(dataset):
        raise ValueError("withheld test indices out of range")
    return test


def _run(
    dataset: Dataset,
    plan: Plan,
    family: LearnerFamily,
    seed: int,
    universe: Sequence[int] | None,
    withheld_test: Sequence[int] | None,
    workers: int,
) -> CvResult:
    units = validation_units(dataset, plan, universe)
    uni = resolve_universe(dataset, plan, universe)
    test = _check_test(uni, withheld_test, dataset)
    misconduct = family.mode == MISCONDUCT

    def work(u: int):
        unit = units[u]
        learner = family.instantiate(derive_seed(seed, "cv-unit", u))
        # the fold's V goes to misconduct learners only; T never reaches a fit
        model = fit_learner(learner, dataset, unit.fit_idx, unit.val_idx if misconduct else None)
        err_v = evaluate_error(model, dataset, unit.val_idx)
        err_t = evaluate_error(model, dataset, test) if test else None
        return model, err_v, err_t

    results = parallel_map(work, range(len(units)), workers)
    models = tuple(r[0] for r in results)
    test_errs = tuple(r[2] for r in results) if test else None
    return CvResult(
        family=family,
        scheme=_scheme(plan),
        unit_labels=tuple(u.label for u in units),
        fold_errors=tuple(r[1] for r in results),
        per_fold_ledgers=tuple(m.ledger for m in models),
        withheld_test_error=math.fsum(test_errs) / len(test_errs) if test_errs else None,
        fold_test_errors=test_errs,
        models=models,
    )


def cross_validate(
    dataset: Dataset,
    folds: FoldPlan,
    learner_family: LearnerFamily,
    seed: int,
    universe: Sequence[int] | None = None,
    withheld_test: Sequence[int] | None = None,
    workers: int = 1,
) -> CvResult:
    """n-fold (or leave-one-out) cross-validation.

    The reported withheld-test error is the mean over the per-fold models,
    i.e. the test error of the whole cross-validated system.
    """
    if not isinstance(folds, FoldPlan):
        raise ValueError("invalid fold plan")
    return _run(dataset, folds, learner_family, seed, universe, withheld_test, workers)


def nested_cross_validate(
    dataset: Dataset,
    plan: NestedFoldPlan,
    learner_family: LearnerFamily,
    seed: int,
    universe: Sequence[int] | None = None,
    withheld_test: Sequence[int] | None = None,
    workers: int = 1,
) -> CvResult:
    """One model per input/output cell, fit on everything outside the cell."""
    if not isinstance(plan, NestedFoldPlan):
        raise ValueError("invalid nested fold plan")
    return _run(dataset, plan, learner_family, seed, universe, withheld_test, workers)


def chance_error(num_labels: int) -> float:
    return 1.0 - 1.0 / num_labels


def chance_tolerance(num_labels: int, test_size: int, n_se: float = CHANCE_TOLERANCE_SE) -> float:
    p = chance_error(num_labels)
    return n_se * math.sqrt(p * (1.0 - p) / test_size)


@dataclass(frozen=True)
class AuditEntry:
    result: CvResult
    passed: bool
    expectation: str

    @property
    def gap(self) -> float:
        return self.result.withheld_test_error - self.result.cv_error

    def verdict_line(self) -> str:
        return json.dumps(
            {
                "family": self.result.family.label,
                "cv_error": round(self.result.cv_error, 12),
                "test_error": round(self.result.withheld_test_error, 12),
                "gap": round(self.gap, 12),
                "verdict": "PASS" if self.passed else "FAIL",
            },
            sort_keys=True,
        )

    def to_dict(self) -> dict:
        out = self.result.to_dict()
        out.update({"gap": self.gap, "passed": self.passed, "expectation": self.expectation})
        return out


@dataclass(frozen=True)
class AuditReport:
    entries: tuple[AuditEntry, ...]
    chance: float
    chance_tolerance: float
    honest_tolerance: float
    test_size: int

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "chance": self.chance,
            "chance_tolerance": self.chance_tolerance,
            "honest_tolerance": self.honest_tolerance,
            "test_size": self.test_size,
            "passed": self.passed,
            "families": [e.to_dict() for e in self.entries],
        }


def cv_misconduct_audit(
    dataset: Dataset,
    plan: Plan,
    families: Sequence[LearnerFamily],
    withheld_test: Sequence[int],
    seed: int,
    universe: Sequence[int] | None = None,
    honest_tolerance: float = HONEST_TOLERANCE,
    workers: int = 1,
) -> AuditReport:
    """Cross-validate each family and confront its CV error with a withheld test.

    Misconduct families pass when their CV error is exactly zero and their
    test error sits at chance; honest families pass when CV error and test
    error agree within ``honest_tolerance``.
    """
    if not families:
        raise ValueError("no families to audit")
    if withheld_test is None or len(withheld_test) == 0:
        raise ValueError("empty withheld test set")
    test_size = len(set(withheld_test))
    chance = chance_error(dataset.num_labels)
    tol = chance_tolerance(dataset.num_labels, test_size)
    entries = []
    for f_i, family in enumerate(families):
        result = _run(dataset, plan, family, derive_seed(seed, "audit", f_i), universe, withheld_test, workers)
        if family.mode == MISCONDUCT:
            passed = result.cv_error == 0.0 and abs(result.withheld_test_error - chance) <= tol
            expectation = "cv_error == 0 and test_error at chance"
        else:
            passed = abs(result.cv_error - result.withheld_test_error) <= honest_tolerance
            expectation = "cv_error matches test_error"
        entries.append(AuditEntry(result, bool(passed), expectation))
    return AuditReport(tuple(entries), chance, tol, honest_tolerance, test_size)


def holdout_universe(d_total: int, test_idx: Sequence[int]) -> tuple[int, ...]:
    """Dataset indices left for folding once ``test_idx`` is withheld."""
    held = set(int(t) for t in test_idx)
    return tuple(i for i in range(d_total) if i not in held)


def chance_gap_floor(num_labels: int, test_size: int) -> float:
    """Lower bound on test-minus-CV error expected from a zero-CV learner on noise labels."""
    return chance_error(num_labels) - chance_tolerance(num_labels, test_size)


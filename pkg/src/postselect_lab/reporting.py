"""Canonical JSON and CSV serialisation of every result type."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import is_dataclass
from pathlib import Path
from typing import Any

import numpy as np

from postselect_lab.crossval import AuditReport, CvResult
from postselect_lab.learners import ResourceLedger
from postselect_lab.protocols import (
    PERCENTILE_KEYS,
    AllNetworksReport,
    EstimateReport,
    PostSelectionOutcome,
)
from postselect_lab.superlearner import SuperLearnerResult

SIGNIFICANT_DIGITS = 12


class LuckiestOnlyRefused(ValueError):
    """Raised when asked for a report that shows only the post-selected trial."""


def canonical(obj: Any) -> Any:
    """Plain JSON-ready structure with floats rounded to 12 significant digits."""
    if hasattr(obj, "to_dict") and not isinstance(obj, dict):
        return canonical(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        x = float(f"{x:.{SIGNIFICANT_DIGITS}g}")
        return 0.0 if x == 0 else x
    if obj is None or isinstance(obj, str):
        return obj
    if is_dataclass(obj):
        raise TypeError(f"{type(obj).__name__} has no to_dict()")
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj: Any) -> str:
    return json.dumps(canonical(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def format_cell(v: Any) -> str:
    if v is None:
        return ""
    c = canonical(v)
    return repr(c) if isinstance(c, float) else str(c)


def _trial_rows(samples, report: EstimateReport, test_report: EstimateReport | None, extra: dict) -> list[list[str]]:
    rows = [["trial", s.theta_id, s.err_val, s.err_test] for s in samples]
    tr = test_report.to_dict() if test_report is not None else {}
    for key, value in report.to_dict().items():
        rows.append(["summary", key, value, tr.get(key)])
    for key, (v, t) in extra.items():
        rows.append(["summary", key, v, t])
    return rows


def csv_table(outcome: Any) -> tuple[list[str], list[list[Any]]]:
    """Header and rows for the CSV form of a result."""
    if isinstance(outcome, EstimateReport):
        header = ["n", "mean", "sample_std", *PERCENTILE_KEYS]
        return header, [[outcome.to_dict()[k] for k in header]]
    if isinstance(outcome, PostSelectionOutcome):
        extra = {
            "luckiest_id": (outcome.luckiest_ids[0], None),
            "luckiest": (outcome.luckiest_val_err, outcome.luckiest_test_err),
            "inflation_gap": (None, outcome.inflation_gap),
        }
        return ["row_type", "key", "err_val", "err_test"], _trial_rows(
            outcome.samples, outcome.report, outcome.test_report, extra
        )
    if isinstance(outcome, AllNetworksReport):
        extra = {f"arch{i}_mean": (r.mean, None) for i, r in enumerate(outcome.per_architecture)}
        extra["architecture_spread"] = (outcome.architecture_spread, None)
        return ["row_type", "key", "err_val", "err_test"], _trial_rows(
            outcome.samples, outcome.report, outcome.test_report, extra
        )
    if isinstance(outcome, CvResult):
        header = ["family", "unit", "val_error", "test_error", "guess_count", "distance_evals", "stored_samples", "fit_time"]
        return header, _cv_rows(outcome)
    if isinstance(outcome, AuditReport):
        header = ["family", "unit", "val_error", "test_error", "guess_count", "distance_evals", "stored_samples", "fit_time"]
        rows = []
        for entry in outcome.entries:
            rows.extend(_cv_rows(entry.result))
        return header, rows
    if isinstance(outcome, SuperLearnerResult):
        header = ["candidate", "weight", "candidate_cv_risk", "guess_count", "distance_evals", "stored_samples", "fit_time"]
        rows = [
            [c.label, w, r, lg["guess_count"], lg["distance_evals"], lg["stored_samples"], lg["fit_time"]]
            for c, w, r, lg in zip(outcome.candidates, outcome.weights, outcome.candidate_risks, outcome.ledgers)
        ]
        rows.append(["ensemble", 1.0, outcome.cv_risk, None, None, None, None])
        return header, rows
    raise TypeError(f"no CSV layout for {type(outcome).__name__}")


def _cv_rows(result: CvResult) -> list[list[Any]]:
    rows = []
    test_errs = result.fold_test_errors or (None,) * len(result.fold_errors)
    for label, e, t, lg in zip(result.unit_labels, result.fold_errors, test_errs, result.per_fold_ledgers):
        d = lg.to_dict()
        rows.append([result.family.label, label, e, t, d["guess_count"], d["distance_evals"], d["stored_samples"], d["fit_time"]])
    tot = ResourceLedger.total(result.per_fold_ledgers)
    rows.append(
        [result.family.label, "mean", result.cv_error, result.withheld_test_error,
         tot["guess_count"], tot["distance_evals"], tot["stored_samples"], tot["fit_time"]]
    )
    return rows


def dumps_csv(outcome: Any) -> str:
    header, rows = csv_table(outcome)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def emit_report(outcome: Any, fmt: str, path: str | Path, luckiest_only: bool = False) -> Path:
    """Write ``outcome`` as canonical JSON or CSV and return the path.

    Luckiest-only reports are refused: every trial-level report carries the
    full estimate report over all trials.
    """
    if luckiest_only:
        raise LuckiestOnlyRefused("refusing to emit a luckiest-only report; all trials must be reported")
    if fmt == "json":
        text = dumps(outcome)
    elif fmt == "csv":
        text = dumps_csv(outcome)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"unwritable path {path}: {exc}") from exc
    return path

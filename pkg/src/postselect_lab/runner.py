"""Executes one configured protocol and packages its report, CSV and summary."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from postselect_lab import reporting
from postselect_lab.config import ExperimentConfig
from postselect_lab.crossval import cv_misconduct_audit, holdout_universe
from postselect_lab.data import Dataset, generate_synthetic, make_folds, make_nested_folds, make_split
from postselect_lab.learners import MISCONDUCT
from postselect_lab.protocols import PSUVS, lost_luck_experiment, post_select, report_all_networks
from postselect_lab.seeding import derive_seed, rng_for
from postselect_lab.superlearner import adversarial_injection, super_learn

# share of lost-luck repetitions that must land within tolerance
LOST_LUCK_PASS_SHARE = 0.95


@dataclass
class RunResult:
    name: str
    payload: dict
    summary: list[str]
    passed: bool
    csv_text: str | None = None
    misconduct_view: list[str] = field(default_factory=list)
    extra_files: dict[str, str] = field(default_factory=dict)


def _dataset(cfg: ExperimentConfig, size: int, rep: int = 0) -> Dataset:
    ds = cfg.dataset
    return generate_synthetic(ds.generator, size, ds.dim, ds.num_labels, derive_seed(cfg.master_seed, "dataset", rep))


def _holdout(cfg: ExperimentConfig) -> tuple[Dataset, tuple[int, ...], tuple[int, ...]]:
    total = cfg.dataset.d + cfg.split.test_size
    dataset = _dataset(cfg, total)
    perm = rng_for(cfg.master_seed, "holdout").permutation(total)
    test = tuple(sorted(int(i) for i in perm[: cfg.split.test_size]))
    return dataset, test, holdout_universe(total, test)


def run_gen_data(cfg: ExperimentConfig) -> RunResult:
    dataset = _dataset(cfg, cfg.dataset.d)
    split = make_split(dataset, cfg.split.fractions, derive_seed(cfg.master_seed, "split", 0))
    folds = make_folds(len(dataset), cfg.split.folds, derive_seed(cfg.master_seed, "folds"))
    plans: dict[str, Any] = {"split": split.to_dict(), "folds": folds.to_dict()}
    if cfg.split.folds * cfg.split.output_folds <= len(dataset):
        nested = make_nested_folds(len(dataset), cfg.split.folds, cfg.split.output_folds, derive_seed(cfg.master_seed, "nested"))
        plans["nested"] = nested.to_dict()
    csv_buf = dataset.csv_text()
    payload = {"config": cfg.provenance_dict(), "manifest": dataset.manifest(), "plans": plans}
    summary = [
        f"dataset: {cfg.dataset.generator} d={len(dataset)} dim={dataset.dim} num_labels={dataset.num_labels}",
        f"split: |F|={len(split.fit_idx)} |V|={len(split.val_idx)} |T|={len(split.test_idx)}"
        + (" (trainer possession: no test withheld)" if split.trainer_possession else ""),
    ]
    return RunResult(
        "gen-data",
        payload,
        summary,
        True,
        extra_files={
            "dataset.csv": csv_buf,
            "dataset.json": reporting.dumps(dataset.manifest()),
            "plans.json": reporting.dumps(plans),
        },
    )


def run_lost_luck(cfg: ExperimentConfig) -> RunResult:
    family = cfg.learners[0].family()
    reps = []
    outcomes = []
    for rep in range(cfg.repetitions):
        dataset = _dataset(cfg, cfg.dataset.d, rep)
        split = make_split(dataset, cfg.split.fractions, derive_seed(cfg.master_seed, "split", rep))
        outcome, verdict = lost_luck_experiment(
            dataset,
            split,
            family,
            cfg.trials,
            derive_seed(cfg.master_seed, "trials", rep),
            tolerance_se=cfg.tolerance_se,
            workers=cfg.threads,
        )
        top = post_select(outcome.samples, PSUVS, cfg.top_m) if cfg.top_m > 1 else outcome
        entry = outcome.to_dict()
        entry["top_m_ids"] = list(top.luckiest_ids)
        if cfg.repetitions > 1:
            # per-trial rows only for single runs; the full reports stay in every entry
            entry.pop("trials")
        reps.append({"repetition": rep, "outcome": entry, "verdict": verdict.to_dict()})
        outcomes.append((outcome, verdict))

    holds = sum(v.lost_luck_holds for _, v in outcomes)
    under = sum(v.underestimates for _, v in outcomes)
    transfers = sum(v.luck_transfers for _, v in outcomes)
    required = math.ceil(LOST_LUCK_PASS_SHARE * cfg.repetitions)
    passed = holds >= required and under == cfg.repetitions
    verdict_summary = {
        "repetitions": cfg.repetitions,
        "lost_luck_holds": holds,
        "lost_luck_required": required,
        "underestimates": under,
        "luck_transfers": transfers,
        "passed": passed,
    }
    payload = {"config": cfg.provenance_dict(), "repetitions": reps, "verdict": verdict_summary}

    first, v0 = outcomes[0]
    summary = [
        first.report.summary_line("V errors (all trials)"),
        first.test_report.summary_line("T errors (all trials)"),
        f"luckiest on V: theta_id={first.luckiest_ids[0]} V={first.luckiest_val_err:.4f} "
        f"T={first.luckiest_test_err:.4f} inflation_gap={first.inflation_gap:.4f}",
        f"lost luck: |luckiest T - mean V| = {abs(v0.luckiest_test_err - v0.mean_val_err):.4f} "
        f"(tolerance {cfg.tolerance_se:g} x SE {v0.test_standard_error:.4f})",
        f"verdict: lost-luck holds {holds}/{cfg.repetitions} (need {required}), "
        f"under-estimates {under}/{cfg.repetitions} -> {'PASS' if passed else 'FAIL'}",
    ]
    view = [
        "MISCONDUCT VIEW (luckiest only; hides "
        f"{first.report.n - 1} of {first.report.n} trials): error = {first.luckiest_val_err:.4f}",
        f"HONEST VIEW (all trials): mean V error = {first.report.mean:.4f}, "
        f"luckiest on a new test = {first.luckiest_test_err:.4f}",
    ]
    if cfg.repetitions == 1:
        csv_text = reporting.dumps_csv(first)
    else:
        csv_text = _rows_csv(
            ["repetition", "luckiest_val_err", "luckiest_test_err", "mean_val_err", "mean_test_err",
             "test_standard_error", "lost_luck_holds", "underestimates"],
            [[r["repetition"], r["verdict"]["luckiest_val_err"], r["verdict"]["luckiest_test_err"],
              r["verdict"]["mean_val_err"], r["verdict"]["mean_test_err"], r["verdict"]["test_standard_error"],
              r["verdict"]["lost_luck_holds"], r["verdict"]["underestimates"]] for r in reps],
        )
    return RunResult("lost-luck", payload, summary, passed, csv_text, view)


def _rows_csv(header: list[str], rows: list[list[Any]]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(reporting.format_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _run_audit(cfg: ExperimentConfig, nested: bool) -> RunResult:
    dataset, test, universe = _holdout(cfg)
    seed = derive_seed(cfg.master_seed, "plan")
    if nested:
        plan = make_nested_folds(len(universe), cfg.split.folds, cfg.split.output_folds, seed)
    else:
        plan = make_folds(len(universe), cfg.split.folds, seed)
    audit = cv_misconduct_audit(
        dataset,
        plan,
        [s.family() for s in cfg.learners],
        test,
        derive_seed(cfg.master_seed, "audit"),
        universe=universe,
        honest_tolerance=cfg.honest_tolerance,
        workers=cfg.threads,
    )
    name = "nested-cv-audit" if nested else "cv-audit"
    payload = {"config": cfg.provenance_dict(), "audit": audit.to_dict(), "verdict_lines": [e.verdict_line() for e in audit.entries]}
    summary = [f"{name}: |D|={len(universe)} |T|={len(test)} chance={audit.chance:.4f} tolerance={audit.chance_tolerance:.4f}"]
    for e in audit.entries:
        r = e.result
        summary.append(
            f"{r.family.label}: cv_error={r.cv_error:.4f} test_error={r.withheld_test_error:.4f} "
            f"gap={e.gap:.4f} guesses={sum(lg.guess_count for lg in r.per_fold_ledgers)} "
            f"verdict {'PASS' if e.passed else 'FAIL'}"
        )
    summary.extend(e.verdict_line() for e in audit.entries)
    view = [
        f"MISCONDUCT VIEW: {e.result.family.label} cross-validated error = {e.result.cv_error:.4f}"
        for e in audit.entries if e.result.family.mode == MISCONDUCT
    ]
    return RunResult(name, payload, summary, audit.passed, reporting.dumps_csv(audit), view)


def run_superlearner(cfg: ExperimentConfig) -> RunResult:
    dataset, test, universe = _holdout(cfg)
    seed = derive_seed(cfg.master_seed, "plan")
    if cfg.nested:
        plan = make_nested_folds(len(universe), cfg.split.folds, cfg.split.output_folds, seed)
    else:
        plan = make_folds(len(universe), cfg.split.folds, seed)
    families = [s.family() for s in cfg.learners]
    misconduct = [f for f in families if f.mode == MISCONDUCT]
    honest = [f for f in families if f.mode != MISCONDUCT]
    sl_seed = derive_seed(cfg.master_seed, "superlearner")
    verdict = None
    if misconduct:
        result, verdict = adversarial_injection(
            dataset, plan, honest, misconduct[0], cfg.grid_step, test, sl_seed, universe=universe, workers=cfg.threads
        )
    else:
        result = super_learn(dataset, plan, honest, cfg.grid_step, sl_seed, universe=universe, withheld_test=test, workers=cfg.threads)
    payload = {"config": cfg.provenance_dict(), "result": result.to_dict(), "verdict": None if verdict is None else verdict.to_dict()}
    weights = " ".join(f"{c.label}={w:.2f}" for c, w in zip(result.candidates, result.weights))
    summary = [
        f"superlearner ({result.scheme}, grid_step={result.grid_step:g}, {result.grid_size} grid points)",
        f"weights: {weights}",
        f"cv_risk={result.cv_risk:.4f} withheld_test_error={result.withheld_test_error:.4f}",
        "candidate cv risks: " + " ".join(f"{c.label}={r:.4f}" for c, r in zip(result.candidates, result.candidate_risks)),
    ]
    passed = True
    if verdict is not None:
        passed = verdict.passed
        summary.append(
            f"verdict: {verdict.status} (weight {verdict.misconduct_weight:.2f}), zero_risk={verdict.zero_risk}, "
            f"test near chance={verdict.test_near_chance} -> {'PASS' if passed else 'FAIL'}"
        )
    view = [f"MISCONDUCT VIEW: super learner cross-validated risk = {result.cv_risk:.4f}"]
    return RunResult("superlearner", payload, summary, passed, reporting.dumps_csv(result), view)


def run_report(cfg: ExperimentConfig) -> RunResult:
    dataset = _dataset(cfg, cfg.dataset.d)
    split = make_split(dataset, cfg.split.fractions, derive_seed(cfg.master_seed, "split", 0))
    families = [s.family() for s in cfg.learners]
    rep = report_all_networks(families, cfg.trials, dataset, split, derive_seed(cfg.master_seed, "trials", 0), workers=cfg.threads)
    payload = {"config": cfg.provenance_dict(), "result": rep.to_dict()}
    summary = [rep.report.summary_line(f"V errors over all {rep.report.n} networks")]
    if rep.test_report is not None:
        summary.append(rep.test_report.summary_line("T errors over all networks"))
    for fam, r in zip(rep.architectures, rep.per_architecture):
        summary.append(r.summary_line(f"  {fam.label}"))
    summary.append(f"architecture spread of mean V error: {rep.architecture_spread:.4f}")
    best = min(rep.samples, key=lambda s: (s.err_val, s.theta_id))
    view = [
        f"MISCONDUCT VIEW (luckiest only; hides {rep.report.n - 1} networks): error = {best.err_val:.4f}",
        f"HONEST VIEW: mean V error = {rep.report.mean:.4f}",
    ]
    return RunResult("report", payload, summary, True, reporting.dumps_csv(rep), view)


RUNNERS: dict[str, Callable[[ExperimentConfig], RunResult]] = {
    "gen-data": run_gen_data,
    "lost-luck": run_lost_luck,
    "cv-audit": lambda cfg: _run_audit(cfg, nested=False),
    "nested-cv-audit": lambda cfg: _run_audit(cfg, nested=True),
    "superlearner": run_superlearner,
    "report": run_report,
}


def run(cfg: ExperimentConfig) -> RunResult:
    cfg.validate()
    return RUNNERS[cfg.protocol](cfg)


def write_outputs(result: RunResult, out_dir: str | Path, csv: bool) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / f"{result.name}.json"]
    written[0].write_text(reporting.dumps(result.payload))
    if csv and result.csv_text is not None:
        p = out / f"{result.name}.csv"
        p.write_text(result.csv_text)
        written.append(p)
    for fname, text in result.extra_files.items():
        p = out / fname
        p.write_text(text)
        written.append(p)
    return written


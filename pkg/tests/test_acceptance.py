"""Acceptance gate: one printed PASS/FAIL line per criterion, with counts and runtime."""

import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from postselect_lab import (
    ErrorSample,
    LearnerFamily,
    cross_validate,
    generate_synthetic,
    make_folds,
    make_nested_folds,
    min_mse_estimate,
    nested_cross_validate,
    post_select,
)
from postselect_lab.config import ExperimentConfig
from postselect_lab.crossval import holdout_universe
from postselect_lab.protocols import PSUVS
from postselect_lab.runner import run
from postselect_lab.superlearner import adversarial_injection

ROOT = Path(__file__).resolve().parent.parent
LOST_LUCK_CONFIG = ROOT / "configs" / "lost_luck.json"
CHANCE_TOL = 3 * math.sqrt(0.25 / 200)
GENERATORS = ("pure-noise-labels", "gaussian-clusters", "labeled-grid")


def report(capsys, name, passed, detail, elapsed, limit):
    ok = passed and elapsed < limit
    with capsys.disabled():
        print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail}; {elapsed:.1f}s, limit {limit:g}s)")
    return ok


def noise_holdout(seed, d=300, test_size=200):
    ds = generate_synthetic("pure-noise-labels", d + test_size, 2, 2, seed)
    perm = np.random.default_rng(seed).permutation(d + test_size)
    test = tuple(sorted(int(i) for i in perm[:test_size]))
    return ds, test, holdout_universe(len(ds), test)


def test_zero_validation_error(capsys):
    rng = np.random.default_rng(1001)
    start = time.perf_counter()
    hits = 0
    for case in range(100):
        kind = GENERATORS[case % 3]
        d = int(rng.integers(20, 201))
        ds = generate_synthetic(kind, d, int(rng.integers(1, 4)), int(rng.integers(2, 5)), int(rng.integers(2**31)))
        plan = make_folds(d, int(rng.integers(2, 11)), int(rng.integers(2**31)))
        seed = int(rng.integers(2**31))
        nnwt = cross_validate(ds, plan, LearnerFamily("nnwt"), seed).cv_error
        pgnn = cross_validate(ds, plan, LearnerFamily("pgnn"), seed).cv_error
        hits += nnwt == 0.0 and pgnn == 0.0
    elapsed = time.perf_counter() - start
    assert report(capsys, "zero-validation-error", hits == 100, f"{hits}/100 instances zero", elapsed, 10)


def test_nested_zero(capsys):
    rng = np.random.default_rng(2002)
    start = time.perf_counter()
    hits = 0
    for case in range(50):
        n, k = int(rng.choice([2, 3])), int(rng.choice([2, 3]))
        d = int(rng.integers(30, 201))
        ds = generate_synthetic(GENERATORS[case % 3], d, 2, int(rng.integers(2, 5)), int(rng.integers(2**31)))
        plan = make_nested_folds(d, n, k, int(rng.integers(2**31)))
        seed = int(rng.integers(2**31))
        nnwt = nested_cross_validate(ds, plan, LearnerFamily("nnwt"), seed).cv_error
        pgnn = nested_cross_validate(ds, plan, LearnerFamily("pgnn"), seed).cv_error
        hits += nnwt == 0.0 and pgnn == 0.0
    elapsed = time.perf_counter() - start
    assert report(capsys, "nested-zero", hits == 50, f"{hits}/50 nested plans zero", elapsed, 10)


def test_misconduct_gap(capsys):
    start = time.perf_counter()
    hits = 0
    for seed in range(50):
        ds, test, uni = noise_holdout(seed)
        res = cross_validate(ds, make_folds(300, 5, seed), LearnerFamily("nnwt"), seed, universe=uni, withheld_test=test)
        hits += res.cv_error == 0.0 and abs(res.withheld_test_error - 0.5) <= CHANCE_TOL
    elapsed = time.perf_counter() - start
    assert report(capsys, "misconduct-gap", hits >= 45, f"{hits}/50 seeds with cv 0 and test within {CHANCE_TOL:.3f} of 0.5", elapsed, 30)


def test_lost_luck(capsys):
    cfg = ExperimentConfig.load(LOST_LUCK_CONFIG)
    assert cfg.repetitions == 100 and cfg.trials == 1000
    start = time.perf_counter()
    verdict = run(cfg).payload["verdict"]
    elapsed = time.perf_counter() - start
    holds, under = verdict["lost_luck_holds"], verdict["underestimates"]
    ok = holds >= 95 and under == 100
    assert report(capsys, "lost-luck", ok, f"{holds}/100 within 3 SE, {under}/100 strict under-estimates", elapsed, 300)


def scan_argmin(values, probs, grid):
    # the objective is sum_i P_i (e - e_i)^2, expanded and evaluated at every grid point
    a = probs.sum()
    b = probs @ values
    c = probs @ values**2
    return grid[np.argmin(a * grid * grid - 2 * b * grid + c)]


def test_min_mse_estimator(capsys):
    rng = np.random.default_rng(3003)
    grid = np.arange(1_000_001) / 1_000_000
    start = time.perf_counter()
    hits = 0
    for _ in range(1000):
        size = int(rng.integers(1, 21))
        values = rng.random(size)
        raw = rng.random(size) + 1e-3
        probs = raw / raw.sum()
        est = min_mse_estimate(list(zip(values.tolist(), probs.tolist())))
        hits += abs(est - scan_argmin(values, probs, grid)) <= 1e-6
    elapsed = time.perf_counter() - start
    assert report(capsys, "min-mse-estimator", hits == 1000, f"{hits}/1000 match the grid argmin", elapsed, 30)


def test_super_learner_capture(capsys):
    honest = [LearnerFamily("1nn"), LearnerFamily("random-prototype", {"prototypes": 5}), LearnerFamily("constant")]
    start = time.perf_counter()
    captured = near = 0
    for seed in range(20):
        ds, test, uni = noise_holdout(100 + seed)
        res, verdict = adversarial_injection(
            ds, make_folds(300, 5, seed), honest, LearnerFamily("nnwt"), 0.1, test, seed, universe=uni
        )
        captured += res.weights[0] == 1.0 and res.cv_risk == 0.0
        near += abs(res.withheld_test_error - 0.5) <= CHANCE_TOL
    elapsed = time.perf_counter() - start
    ok = captured == 20 and near == 20
    assert report(capsys, "super-learner-capture", ok, f"{captured}/20 captured at risk 0, {near}/20 test near chance", elapsed, 60)


def test_honest_consistency(capsys):
    start = time.perf_counter()
    hits = 0
    for seed in range(50):
        ds = generate_synthetic("gaussian-clusters", 500, 2, 3, seed)
        perm = np.random.default_rng(seed).permutation(500)
        test = tuple(sorted(int(i) for i in perm[:200]))
        uni = holdout_universe(500, test)
        res = cross_validate(ds, make_folds(300, 5, seed), LearnerFamily("1nn"), seed, universe=uni, withheld_test=test)
        hits += abs(res.cv_error - res.withheld_test_error) <= 0.1
    elapsed = time.perf_counter() - start
    assert report(capsys, "honest-consistency", hits >= 45, f"{hits}/50 runs with |cv - test| <= 0.1", elapsed, 30)


def test_thread_determinism(capsys, tmp_path):
    start = time.perf_counter()
    outputs = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        proc = subprocess.run(
            [sys.executable, "-m", "postselect_lab", "lost-luck", "--config", str(LOST_LUCK_CONFIG),
             "--out", str(out), "--threads", str(threads)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outputs.append((out / "lost-luck.json").read_bytes())
    elapsed = time.perf_counter() - start
    same = outputs[0] == outputs[1]
    json.loads(outputs[0])
    assert report(capsys, "thread-determinism", same, f"1 vs 8 threads byte-identical={same}, {len(outputs[0])} bytes", elapsed, 600)


def test_order_statistics(capsys):
    n, reps = 1000, 200
    rng = np.random.default_rng(4004)
    start = time.perf_counter()
    lv, lt = [], []
    for _ in range(reps):
        val, tst = rng.random(n), rng.random(n)
        out = post_select([ErrorSample(i, {}, float(v), float(t)) for i, (v, t) in enumerate(zip(val, tst))], PSUVS, 1)
        lv.append(out.luckiest_val_err)
        lt.append(out.luckiest_test_err)
    lv, lt = np.array(lv), np.array(lt)
    # sigma-hat is the standard error of each mean, estimated from the repetitions
    se_v = lv.std(ddof=1) / math.sqrt(reps)
    se_t = lt.std(ddof=1) / math.sqrt(reps)
    ok_v = abs(lv.mean() - 1 / (n + 1)) <= 3 * se_v
    ok_t = abs(lt.mean() - 0.5) <= 3 * se_t
    elapsed = time.perf_counter() - start
    detail = f"mean luckiest V {lv.mean():.5f} vs {1 / (n + 1):.5f}, mean luckiest T {lt.mean():.4f} vs 0.5"
    assert report(capsys, "order-statistics", ok_v and ok_t, detail, elapsed, 60)

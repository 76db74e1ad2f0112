import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force_1nn, chance_band
from postselect_lab import (
    LearnerFamily,
    cross_validate,
    cv_misconduct_audit,
    generate_synthetic,
    make_folds,
    make_nested_folds,
    nested_cross_validate,
)
from postselect_lab.crossval import holdout_universe, validation_units


def holdout(kind, d, test_size, num_labels, seed):
    ds = generate_synthetic(kind, d + test_size, 2, num_labels, seed)
    perm = np.random.default_rng(seed).permutation(d + test_size)
    test = tuple(sorted(int(i) for i in perm[:test_size]))
    return ds, test, holdout_universe(len(ds), test)


def loocv_oracle(ds):
    X, y = ds.features.tolist(), ds.labels.tolist()
    wrong = 0
    for i in range(len(X)):
        rest_X = X[:i] + X[i + 1 :]
        rest_y = y[:i] + y[i + 1 :]
        wrong += brute_force_1nn(rest_X, rest_y, X[i]) != y[i]
    return wrong / len(X)


class TestCrossValidate:
    def test_loocv_1nn_on_clusters(self, clusters60):
        res = cross_validate(clusters60, make_folds(60, 60, 0), LearnerFamily("1nn"), 0)
        assert res.scheme == "loocv" and len(res.fold_errors) == 60
        assert res.cv_error <= 0.05

    def test_loocv_1nn_matches_brute_force(self):
        ds = generate_synthetic("pure-noise-labels", 40, 2, 2, 3)
        res = cross_validate(ds, make_folds(40, 40, 1), LearnerFamily("1nn"), 0)
        assert res.cv_error == pytest.approx(loocv_oracle(ds), abs=1e-12)

    def test_cv_error_is_mean_of_folds(self, noise300):
        res = cross_validate(noise300, make_folds(300, 7, 2), LearnerFamily("1nn"), 0)
        assert res.cv_error == pytest.approx(sum(res.fold_errors) / 7, abs=1e-15)
        # unequal folds: the plain fold average is not the pooled error
        assert len({len(f) for f in make_folds(300, 7, 2).folds}) == 2

    def test_nnwt_zero_and_constant_half(self, noise300):
        plan = make_folds(300, 5, 4)
        assert cross_validate(noise300, plan, LearnerFamily("nnwt"), 1).cv_error == 0.0
        const = cross_validate(noise300, plan, LearnerFamily("constant", {"label": 0}), 1)
        lo, hi = chance_band(2, 300)
        assert lo <= const.cv_error <= hi

    def test_two_fold_minimum(self, noise300):
        assert len(cross_validate(noise300, make_folds(300, 2, 0), LearnerFamily("1nn"), 0).fold_errors) == 2

    def test_rejects_nested_plan(self, noise300):
        with pytest.raises(ValueError, match="invalid fold plan"):
            cross_validate(noise300, make_nested_folds(300, 2, 2, 0), LearnerFamily("1nn"), 0)

    def test_ledgers_per_fold(self, noise300):
        res = cross_validate(noise300, make_folds(300, 5, 0), LearnerFamily("pgnn"), 0)
        assert len(res.per_fold_ledgers) == 5
        # every pgnn prediction on a non-identical V point is a guess
        for lg in res.per_fold_ledgers:
            assert lg.guess_count >= 60 and lg.frozen
        assert res.to_dict()["ledger_total"]["guess_count"] == sum(lg.guess_count for lg in res.per_fold_ledgers)

    def test_honest_fit_never_sees_validation(self, noise300):
        res = cross_validate(noise300, make_folds(300, 5, 0), LearnerFamily("1nn"), 0)
        assert not any(m.saw_validation for m in res.models)
        res = cross_validate(noise300, make_folds(300, 5, 0), LearnerFamily("nnwt"), 0)
        assert all(m.saw_validation for m in res.models)

    def test_withheld_test_checks(self):
        ds, test, uni = holdout("pure-noise-labels", 100, 50, 2, 0)
        plan = make_folds(100, 5, 0)
        with pytest.raises(ValueError, match="empty withheld test set"):
            cross_validate(ds, plan, LearnerFamily("1nn"), 0, universe=uni, withheld_test=[])
        with pytest.raises(ValueError, match="overlaps"):
            cross_validate(ds, plan, LearnerFamily("1nn"), 0, universe=uni, withheld_test=[uni[0]])

    def test_deterministic_across_workers(self, noise300):
        plan = make_folds(300, 5, 0)
        a = cross_validate(noise300, plan, LearnerFamily("random-prototype"), 3, workers=1)
        b = cross_validate(noise300, plan, LearnerFamily("random-prototype"), 3, workers=3)
        assert a.to_dict() == b.to_dict()


class TestNested:
    @pytest.mark.parametrize("family", ["nnwt", "pgnn"])
    def test_all_cells_zero(self, noise300, family):
        res = nested_cross_validate(noise300, make_nested_folds(300, 3, 2, 5), LearnerFamily(family), 0)
        assert res.fold_errors == (0.0,) * 6 and res.scheme == "nested-3x2"

    def test_honest_1nn_near_chance_on_noise(self, noise300):
        res = nested_cross_validate(noise300, make_nested_folds(300, 3, 2, 5), LearnerFamily("1nn"), 0)
        lo, hi = chance_band(2, 300)
        assert lo <= res.cv_error <= hi

    def test_units_cover_every_sample_once(self):
        ds = generate_synthetic("pure-noise-labels", 40, 2, 2, 0)
        plan = make_nested_folds(40, 2, 2, 0)
        units = validation_units(ds, plan)
        assert len(units) == 4
        assert sorted(i for u in units for i in u.val_idx) == list(range(40))
        for u in units:
            assert set(u.fit_idx).isdisjoint(u.val_idx) and len(u.fit_idx) + len(u.val_idx) == 40

    def test_rejects_plain_plan(self, noise300):
        with pytest.raises(ValueError, match="invalid nested fold plan"):
            nested_cross_validate(noise300, make_folds(300, 5, 0), LearnerFamily("1nn"), 0)

    @given(st.integers(2, 3), st.integers(2, 3), st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_zero_for_any_grid(self, n, k, seed):
        ds = generate_synthetic("pure-noise-labels", 60, 2, 3, seed)
        res = nested_cross_validate(ds, make_nested_folds(60, n, k, seed), LearnerFamily("nnwt"), seed)
        assert res.cv_error == 0.0


class TestAudit:
    def test_noise_audit(self):
        ds, test, uni = holdout("pure-noise-labels", 300, 200, 2, 7)
        fams = [LearnerFamily("nnwt"), LearnerFamily("pgnn"), LearnerFamily("1nn")]
        rep = cv_misconduct_audit(ds, make_folds(300, 5, 0), fams, test, 0, universe=uni)
        nnwt, pgnn, nn = rep.entries
        assert nnwt.result.cv_error == 0.0 and pgnn.result.cv_error == 0.0
        assert rep.chance_tolerance == pytest.approx(3 * math.sqrt(0.25 / 200))
        assert nnwt.passed and pgnn.passed and nn.passed
        assert nnwt.gap > 0.3

    def test_verdict_line_is_one_json_object(self):
        ds, test, uni = holdout("pure-noise-labels", 100, 50, 2, 1)
        rep = cv_misconduct_audit(ds, make_folds(100, 4, 0), [LearnerFamily("pgnn")], test, 0, universe=uni)
        line = rep.entries[0].verdict_line()
        assert "\n" not in line and '"family": "pgnn"' in line and '"verdict"' in line

    def test_inf_threshold_is_plain_1nn(self):
        ds, test, uni = holdout("gaussian-clusters", 120, 60, 2, 2)
        plan = make_folds(120, 4, 0)
        a = cross_validate(ds, plan, LearnerFamily("nnwt", {"threshold": math.inf}), 0, universe=uni, withheld_test=test)
        b = cross_validate(ds, plan, LearnerFamily("1nn"), 0, universe=uni, withheld_test=test)
        assert a.fold_errors == b.fold_errors and a.withheld_test_error == b.withheld_test_error
        assert all(lg.guess_count == 0 for lg in a.per_fold_ledgers)

    def test_requires_test(self, noise300):
        with pytest.raises(ValueError, match="empty withheld test set"):
            cv_misconduct_audit(noise300, make_folds(300, 5, 0), [LearnerFamily("nnwt")], [], 0)

    def test_honest_consistency_on_clusters(self):
        agree = 0
        for seed in range(10):
            ds, test, uni = holdout("gaussian-clusters", 200, 100, 3, seed)
            rep = cv_misconduct_audit(ds, make_folds(200, 5, seed), [LearnerFamily("1nn")], test, seed, universe=uni)
            agree += rep.entries[0].passed
        assert agree >= 9

    def test_honest_cv_mean_tracks_test_mean(self):
        cv, te = [], []
        for seed in range(50):
            ds, test, uni = holdout("gaussian-clusters", 150, 100, 3, 100 + seed)
            # two prototypes for three classes keep the error well above zero, so there is something to estimate
            res = cross_validate(ds, make_folds(150, 5, seed), LearnerFamily("random-prototype", {"prototypes": 2}),
                                 seed, universe=uni, withheld_test=test)
            cv.append(res.cv_error)
            te.append(res.withheld_test_error)
        diff = np.array(cv) - np.array(te)
        assert abs(diff.mean()) <= 3 * diff.std(ddof=1) / math.sqrt(50)

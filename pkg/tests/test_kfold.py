"""
Tests for stratified fold assignment and k-fold evaluation.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from src.errors import ParameterError, StratificationError
from src.evaluation.kfold import FOLD_COLUMNS, assign_folds, kfold_eval
from tests.conftest import tiny_train_config


def _stub(attack_type: str, i: int) -> SimpleNamespace:
    return SimpleNamespace(id=f"{attack_type}-{i}", attack_type=attack_type, cls_label=int(attack_type != "none"))


def _balanced(per_type: int) -> list:
    return [_stub(t, i) for t in ("none", "print", "replay", "mask") for i in range(per_type)]


# =============================================================================
# Fold assignment
# =============================================================================

class TestAssignFolds:
    def test_two_folds_get_one_of_each_type(self):
        samples = _balanced(2)
        folds = assign_folds(samples, k=2, seed=0)
        for f in (0, 1):
            types = sorted(s.attack_type for s, g in zip(samples, folds) if g == f)
            assert types == ["mask", "none", "print", "replay"]

    def test_every_sample_gets_a_fold(self):
        folds = assign_folds(_balanced(5), k=4, seed=3)
        assert folds.min() >= 0 and folds.max() <= 3
        assert sorted(np.bincount(folds, minlength=4)) == [5, 5, 5, 5]

    def test_deterministic_under_seed(self):
        samples = _balanced(6)
        np.testing.assert_array_equal(assign_folds(samples, 3, seed=9), assign_folds(samples, 3, seed=9))

    def test_seed_changes_assignment(self):
        samples = _balanced(10)
        assert not np.array_equal(assign_folds(samples, 2, seed=1), assign_folds(samples, 2, seed=2))

    def test_k_below_two(self):
        with pytest.raises(ParameterError):
            assign_folds(_balanced(2), k=1, seed=0)

    def test_fold_without_spoofs(self):
        samples = [_stub("none", i) for i in range(4)] + [_stub("print", 0)]
        with pytest.raises(StratificationError):
            assign_folds(samples, k=2, seed=0)


# =============================================================================
# K-fold evaluation
# =============================================================================

class TestKFoldEval:
    def test_report_table_and_aggregates(self, tiny_samples):
        report = kfold_eval(tiny_samples, tiny_train_config(), k=2)
        assert list(report.folds.columns) == FOLD_COLUMNS
        assert report.folds["fold"].tolist() == [1, 2]
        assert len(report.reports) == 2
        assert abs(report.eer[0] - report.folds["eer"].mean()) < 1e-9
        assert abs(report.hter[0] - report.folds["hter"].mean()) < 1e-9
        assert report.eer[1] == pytest.approx(report.folds["eer"].std(ddof=1), abs=1e-12)
        assert ((report.folds["eer"] >= 0) & (report.folds["eer"] <= 1)).all()

    def test_parallel_folds_match_sequential(self, tiny_samples):
        config = tiny_train_config()
        sequential = kfold_eval(tiny_samples, config, k=2, jobs=1)
        parallel = kfold_eval(tiny_samples, config, k=2, jobs=2)
        np.testing.assert_array_equal(sequential.folds.to_numpy(), parallel.folds.to_numpy())

    def test_explicit_folds_are_used(self, tiny_samples):
        folds = assign_folds(tiny_samples, 2, seed=5)
        config = tiny_train_config(epochs=0)
        a = kfold_eval(tiny_samples, config, k=2, folds=folds)
        b = kfold_eval(tiny_samples, config, k=2, folds=folds)
        np.testing.assert_array_equal(a.folds.to_numpy(), b.folds.to_numpy())

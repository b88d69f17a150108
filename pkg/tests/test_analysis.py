import csv
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distkg.analysis import (energy_curve, mean_cosine_distance, mode_importance,
                             oversmoothing_profile, write_profile_csv)


class TestEnergy:
    def test_two_modes(self):
        assert energy_curve([0.4, 0.3, 0.2, 0.1]).at(2) == pytest.approx(0.7, abs=1e-15)

    def test_order_does_not_matter(self):
        assert energy_curve([0.1, 0.3, 0.4, 0.2]).at(2) == pytest.approx(0.7, abs=1e-15)

    def test_uniform(self):
        report = energy_curve(np.full((5, 100), 0.37))
        assert abs(report.at(20) - 0.2) < 1e-9
        np.testing.assert_allclose(report.mean_energy, np.arange(1, 101) / 100, atol=1e-12)

    def test_near_one_hot(self):
        assert energy_curve([0.9, 1e-9, 1e-9]).at(1) == pytest.approx(1.0, abs=1e-8)

    def test_all_zero_rows_excluded(self, caplog):
        with caplog.at_level(logging.WARNING):
            report = energy_curve([[0.0, 0.0], [0.3, 0.1]])
        assert report.n_excluded == 1
        assert report.at(1) == pytest.approx(0.75)
        assert "excluded" in caplog.text

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100))
    def test_monotone_and_scale_invariant(self, seed, c):
        a = np.random.default_rng(seed).random((8, 12))
        report = energy_curve(a)
        assert np.all(np.diff(report.mean_energy) >= 0)
        assert abs(report.at(12) - 1.0) < 1e-9
        np.testing.assert_allclose(energy_curve(a * c).mean_energy, report.mean_energy, rtol=1e-12)

    def test_csv(self, tmp_path):
        energy_curve(np.full((2, 4), 0.5)).write_csv(tmp_path / "e.csv")
        rows = list(csv.DictReader(open(tmp_path / "e.csv")))
        assert [r["meets_085"] for r in rows] == ["0", "0", "0", "1"]
        assert float(rows[1]["mean_energy"]) == 0.5


class TestImportance:
    def test_uniform(self):
        imp = mode_importance(np.full((3, 4), 0.1), np.full((2, 4, 4), 0.5)).importance
        np.testing.assert_allclose(imp, 0.2)
        assert imp.shape == (2, 4)

    def test_zero_transition(self):
        assert np.all(mode_importance(np.random.rand(3, 4), np.zeros((1, 4, 4))).importance == 0)

    def test_two_entities_by_hand(self):
        a = np.array([[0.2, 0.6], [0.4, 1.0]])
        P = np.array([[[0.5, -0.1], [0.3, 0.3]]])
        # mean a = [0.3, 0.8]; row sums = [0.4, 0.6]
        np.testing.assert_allclose(mode_importance(a, P).importance, [[0.12, 0.48]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mode_importance(np.ones((2, 3)), np.ones((1, 4, 4)))

    def test_csv(self, tmp_path):
        mode_importance(np.ones((1, 2)), np.ones((3, 2, 2))).write_csv(tmp_path / "i.csv")
        rows = list(csv.reader(open(tmp_path / "i.csv")))
        assert rows[0] == ["relation_id", "k", "importance"]
        assert len(rows) == 1 + 3 * 2


class TestOversmoothing:
    def test_identical_rows(self):
        assert mean_cosine_distance(np.tile([1.0, 2.0, 3.0], (5, 1)))[0] == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal(self):
        assert mean_cosine_distance(np.eye(4))[0] == 1.0

    def test_antipodal(self):
        assert mean_cosine_distance(np.array([[1.0, 1.0], [-1.0, -1.0]]))[0] == pytest.approx(2.0)

    def test_zero_rows_skipped(self):
        value, skipped = mean_cosine_distance(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]))
        assert skipped == 2 and value == 1.0

    def test_sampled_pairs_for_large_graphs(self):
        x = np.random.default_rng(0).normal(size=(400, 5))
        a, _ = mean_cosine_distance(x, seed=1)
        b, _ = mean_cosine_distance(x, seed=1)
        assert a == b
        i, j = np.triu_indices(400, 1)
        n = np.linalg.norm(x, axis=1)
        exact = np.mean(1 - np.einsum("ij,ij->i", x[i], x[j]) / (n[i] * n[j]))
        assert a == pytest.approx(exact, abs=0.02)

    def test_profile_and_csv(self, tmp_path):
        prof = oversmoothing_profile([np.eye(3), np.ones((3, 3))])
        assert prof == pytest.approx([1.0, 0.0], abs=1e-15)
        write_profile_csv(prof, tmp_path / "o.csv")
        assert open(tmp_path / "o.csv").read().splitlines()[0] == "layer,mad"

    def test_needs_two_entities(self):
        with pytest.raises(ValueError):
            mean_cosine_distance(np.ones((1, 3)))

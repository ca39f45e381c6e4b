"""Ensemble statistics and sweep accounting over a tiny trained-ish net."""

import numpy as np
import pytest

from conftest import build_tiny_net
from splitdrop.engine import mc_ensemble, split
from splitdrop.pipeline import (EnsembleStats, accuracy_rows, balanced_accuracy,
                                decide_rows, iq_to_features, known_accuracy_curve,
                                lambda_grid, mc_statistics, shift_rows)
from splitdrop.probcore import correct_rows, normalize_rows
from splitdrop.rngutil import derive_rng


class TestFeatures:
    def test_iq_to_features_layout(self):
        iq = np.array([[1 + 2j, 3 - 4j]], dtype=np.complex64)
        f = iq_to_features(iq)
        assert f.shape == (1, 2, 2)
        assert f.dtype == np.float32
        np.testing.assert_array_equal(f[0, 0], [1, 3])
        np.testing.assert_array_equal(f[0, 1], [2, -4])

    def test_shift_rows_matches_roll(self):
        rng = derive_rng(0, "x")
        iq = rng.standard_normal((4, 16)) + 1j * rng.standard_normal((4, 16))
        shifts = np.array([0, 3, -5, 15])
        out = shift_rows(iq, shifts)
        for i, s in enumerate(shifts):
            assert np.array_equal(out[i], np.roll(iq[i], s))


class TestLambdaGrid:
    def test_default_grid(self):
        g = lambda_grid(0.05)
        assert g[0] == 0.0 and g[-1] == 1.0
        assert len(g) == 21

    def test_bad_step(self):
        with pytest.raises(ValueError):
            lambda_grid(0.0)


class TestDecideRows:
    def test_strict_threshold(self):
        s = np.array([[0.5, 0.5], [0.7, 0.3]])
        is_known, cats, peaks = decide_rows(s, 0.5)
        assert is_known.tolist() == [True, True]  # peak == lambda is known
        is_known, _, _ = decide_rows(s, 0.6)
        assert is_known.tolist() == [False, True]
        assert cats.tolist() == [0, 0]


class TestMcStatistics:
    @pytest.fixture(scope="class")
    def setup(self):
        net = build_tiny_net()
        sn = split(net)
        iq = (derive_rng(1, "iq").standard_normal((5, 16))
              + 1j * derive_rng(2, "iq").standard_normal((5, 16))).astype(np.complex64)
        x = np.empty((5, 2, 16), dtype=np.float32)
        x[:, 0] = iq.real
        x[:, 1] = iq.imag
        return sn, x

    def test_raw_matches_explicit_member_mean(self, setup):
        sn, x = setup
        K, seed = 7, 13
        pairs = [(0.5, 0.92)]
        stats = mc_statistics(sn, x, K, seed, pairs, batch_size=3)
        members = mc_ensemble(sn, x, K, seed)  # (K, B, C)
        expect = np.zeros((5, 3))
        for k in range(K):
            expect += normalize_rows(members[k])
        np.testing.assert_allclose(stats.raw, expect / K, atol=1e-12)

    def test_corrected_matches_explicit(self, setup):
        sn, x = setup
        stats = mc_statistics(sn, x, 5, 3, [(0.4, 0.8)], batch_size=2)
        members = mc_ensemble(sn, x, 5, 3)
        expect = np.zeros((5, 3))
        for k in range(5):
            expect += correct_rows(normalize_rows(members[k]), 0.4, 0.8)
        np.testing.assert_allclose(stats.corrected[(0.4, 0.8)], expect / 5, atol=1e-12)

    def test_identity_pair_bitwise_equals_raw(self, setup):
        sn, x = setup
        stats = mc_statistics(sn, x, 6, 4, [(0.0, 1.0), (0.5, 0.92)])
        assert np.array_equal(stats.raw, stats.corrected[(0.0, 1.0)])

    def test_rows_sum_to_one(self, setup):
        sn, x = setup
        stats = mc_statistics(sn, x, 4, 9, [(0.5, 0.92)])
        np.testing.assert_allclose(stats.raw.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(stats.corrected[(0.5, 0.92)].sum(axis=1), 1.0,
                                   atol=1e-12)


class TestAccuracyRows:
    def make_stats(self):
        # hand-built averaged distributions: 2 known, 1 unknown, 1 random
        raw = np.array([
            [0.9, 0.05, 0.05],   # known tx 10, correct, confident
            [0.2, 0.5, 0.3],     # known tx 11, predicted class 1 -> tx 11, right
            [0.6, 0.2, 0.2],     # unknown, confidently wrong
            [0.34, 0.33, 0.33],  # random, flat
        ])
        corrected = {(0.5, 0.92): np.array([
            [1.0, 0.0, 0.0],
            [0.2, 0.5, 0.3],
            [0.6, 0.2, 0.2],
            [1 / 3, 1 / 3, 1 / 3],
        ])}
        stats = EnsembleStats(raw=raw, corrected=corrected, K=1)
        labels = np.array([10, 11, 99, -1])
        tags = ["known", "known", "unknown", "random"]
        return stats, labels, tags, [10, 11, 12]

    def test_hand_computed_accuracies(self):
        stats, labels, tags, known_ids = self.make_stats()
        rows = accuracy_rows(stats, labels, tags, known_ids, np.array([0.0, 0.55]))
        get = {(r.algorithm, r.lam, r.signal_type): r.accuracy for r in rows
               if r.algorithm == "average"}
        assert get[("average", 0.0, "known")] == 1.0     # both correct, none rejected
        assert get[("average", 0.0, "unknown")] == 0.0
        assert get[("average", 0.0, "random")] == 0.0
        # at 0.55: record 1 peak 0.5 < 0.55 rejected -> known acc 0.5;
        # unknown peak 0.6 still accepted -> 0; random peak 0.34 rejected -> 1
        assert get[("average", 0.55, "known")] == 0.5
        assert get[("average", 0.55, "unknown")] == 0.0
        assert get[("average", 0.55, "random")] == 1.0

    def test_balanced_and_known_curves(self):
        stats, labels, tags, known_ids = self.make_stats()
        rows = accuracy_rows(stats, labels, tags, known_ids, np.array([0.0, 0.55]))
        bal = balanced_accuracy(rows, "average")
        assert bal[0.0] == pytest.approx((1.0 + 0.0 + 0.0) / 3)
        assert bal[0.55] == pytest.approx((0.5 + 0.0 + 1.0) / 3)
        known = known_accuracy_curve(rows, "corrected", (0.5, 0.92))
        assert known[0.55] == 0.5  # corrected member 0 has peak 1.0

    def test_row_counts(self):
        stats, labels, tags, known_ids = self.make_stats()
        lambdas = np.array([0.0, 0.5, 1.0])
        rows = accuracy_rows(stats, labels, tags, known_ids, lambdas)
        # 2 rules x 3 lambdas x 3 signal types
        assert len(rows) == 2 * 3 * 3
        assert {r.n_records for r in rows if r.signal_type == "known"} == {2}

import itertools
import time

import numpy as np
import pytest

from mlego.merge import (
    CgsPayload,
    MergeError,
    VbPayload,
    merge_cgs,
    merge_count,
    merge_vb,
    merged_vb_model,
)

H = "hash"


def vb_payload(lam, n, eta=0.01):
    lam = np.asarray(lam, dtype=float)
    return VbPayload(lam, n, int(round(float((lam - eta).sum()))), H)


def cgs_payload(counts, n):
    counts = np.asarray(counts, dtype=float)
    return CgsPayload(counts, n, int(counts.sum()), H)


class TestMergeVb:
    def test_single_model_identity(self):
        lam = np.array([[1.5, 0.01], [0.01, 2.5]])
        p = vb_payload(lam, 10)
        out = merge_vb([p], eta=0.01)
        assert np.array_equal(out.lam, lam)
        assert out.n_docs == 10

    def test_all_prior_stays_prior(self):
        eta = 0.05
        p1 = VbPayload(np.full((2, 3), eta), 4, 0, H)
        p2 = VbPayload(np.full((2, 3), eta), 4, 0, H)
        out = merge_vb([p1, p2], eta=eta)
        np.testing.assert_allclose(out.lam, eta, atol=1e-15)

    def test_equal_sizes_match_summation_oracle(self):
        eta = 0.01
        rng = np.random.default_rng(3)
        lams = [eta + rng.random((3, 4)) for _ in range(2)]
        out = merge_vb([vb_payload(l, 20, eta) for l in lams], eta=eta)
        oracle = np.full((3, 4), eta)
        for l in lams:
            oracle = oracle + (l - eta)  # equal docs: weights are all one
        np.testing.assert_allclose(out.lam, oracle, atol=1e-12)

    def test_document_count_weights(self):
        eta = 0.01
        big = eta + np.array([[10.0, 0.0]])
        small = eta + np.array([[0.0, 4.0]])
        out = merge_vb([vb_payload(big, 100, eta), vb_payload(small, 25, eta)],
                       eta=eta)
        oracle = eta + 1.0 * (big - eta) + 0.25 * (small - eta)
        np.testing.assert_allclose(out.lam, oracle, atol=1e-12)

    def test_order_independent_exactly(self):
        eta = 0.01
        rng = np.random.default_rng(9)
        payloads = [vb_payload(eta + rng.random((2, 3)), n, eta)
                    for n in (7, 19, 19, 4)]
        results = [
            merge_vb(list(perm), eta=eta).lam
            for perm in itertools.permutations(payloads)
        ]
        for r in results[1:]:
            assert np.array_equal(results[0], r)

    def test_mismatched_shapes_rejected(self):
        a = vb_payload(np.full((2, 3), 0.5), 5)
        b = vb_payload(np.full((2, 4), 0.5), 5)
        with pytest.raises(MergeError):
            merge_vb([a, b], eta=0.01)

    def test_empty_set_rejected(self):
        with pytest.raises(MergeError):
            merge_vb([], eta=0.01)


class TestMergeCgs:
    def test_single_model_identity(self):
        counts = np.array([[3.0, 1.0], [0.0, 2.0]])
        merged, model = merge_cgs([cgs_payload(counts, 5)], beta0=0.01, decay=1.0)
        assert np.array_equal(merged, counts)

    def test_two_models_half_decay(self):
        # larger model keeps weight 1; smaller gets one decay step
        small = np.array([[1.0, 0.0], [0.0, 1.0]])
        large = np.array([[4.0, 2.0], [2.0, 4.0]])
        merged, _ = merge_cgs(
            [cgs_payload(small, 2), cgs_payload(large, 12)],
            beta0=0.01, decay=0.5,
        )
        np.testing.assert_allclose(merged, 0.5 * small + large, atol=1e-12)

    def test_no_decay_sum_is_order_independent(self):
        rng = np.random.default_rng(1)
        payloads = [cgs_payload(rng.integers(0, 5, (2, 4)), n)
                    for n in (3, 3, 8)]
        results = [
            merge_cgs(list(perm), beta0=0.1, decay=1.0)[0]
            for perm in itertools.permutations(payloads)
        ]
        for r in results[1:]:
            assert np.array_equal(results[0], r)

    def test_conservation_with_no_decay(self):
        rng = np.random.default_rng(2)
        payloads = [cgs_payload(rng.integers(0, 9, (3, 5)), 10) for _ in range(4)]
        merged, _ = merge_cgs(payloads, beta0=0.01, decay=1.0)
        total = sum(p.delta_n_kv.sum() for p in payloads)
        assert merged.sum() == pytest.approx(total, abs=1e-6)

    def test_merged_model_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        payloads = [cgs_payload(rng.integers(0, 9, (3, 5)), 10) for _ in range(3)]
        _, model = merge_cgs(payloads, beta0=0.01, decay=0.7)
        np.testing.assert_allclose(model.phi.sum(axis=1), 1.0, atol=1e-9)
        assert model.merges == 2

    @pytest.mark.parametrize("decay", [0.0, -0.5, 1.5])
    def test_bad_decay_rejected(self, decay):
        with pytest.raises(MergeError):
            merge_cgs([cgs_payload(np.ones((1, 2)), 3)], beta0=0.1, decay=decay)

    def test_negative_counts_rejected(self):
        with pytest.raises(MergeError):
            merge_cgs([CgsPayload(np.array([[-1.0, 2.0]]), 3, 1, H)],
                      beta0=0.1, decay=1.0)

    def test_runtime_scales_linearly(self):
        """Doubling the model count less than 2.5x-es the merge time."""
        rng = np.random.default_rng(0)
        k, v = 50, 2000
        def run(m):
            payloads = [cgs_payload(rng.random((k, v)), 10) for _ in range(m)]
            t0 = time.perf_counter()
            for _ in range(3):
                merge_cgs(payloads, beta0=0.01, decay=1.0)
            return (time.perf_counter() - t0) / 3
        run(4)  # warm allocations
        t_m = min(run(8), run(8))
        t_2m = min(run(16), run(16))
        assert t_2m / t_m < 2.5


class TestMergeCount:
    def test_single_full_coverage_needs_no_merge(self):
        assert merge_count(1, has_uncovered=False) == 0

    def test_single_partial_coverage_merges_once(self):
        assert merge_count(1, has_uncovered=True) == 1

    def test_three_models_full_coverage(self):
        assert merge_count(3, has_uncovered=False) == 2

    def test_empty_plan_trains_once_without_merging(self):
        assert merge_count(0, has_uncovered=True) == 0


class TestMergedVbModel:
    def test_rows_stochastic(self):
        payload = vb_payload(0.01 + np.random.default_rng(0).random((3, 4)), 5)
        model = merged_vb_model(payload, merges=2)
        np.testing.assert_allclose(model.phi.sum(axis=1), 1.0, atol=1e-9)
        assert model.provenance == "merged"

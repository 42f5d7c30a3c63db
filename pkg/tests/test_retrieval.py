"""Hamming index and retrieval metrics against enumeration oracles."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dkph.codes import BinaryCode
from dkph.exceptions import ShapeError
from dkph.retrieval import CodeIndex, hamming, map_at_k, pr_curve, query_topk


def random_bits(rng, n, k):
    return np.where(rng.random((n, k)) > 0.5, 1, -1).astype(np.int8)


def oracle_hamming(a, b):
    return sum(1 for x, y in zip(a, b) if x != y)


def oracle_ap_at_k(rel_in_rank_order, k):
    """Average precision via exact rational arithmetic."""
    rel = list(rel_in_rank_order)
    r_total = sum(rel)
    if r_total == 0:
        return None
    hits = 0
    total = Fraction(0)
    for j, r in enumerate(rel[:k], start=1):
        if r:
            hits += 1
            total += Fraction(hits, j)
    return total / min(r_total, k)


class TestHamming:
    def test_identical_codes(self):
        a = BinaryCode(np.array([1, -1, 1, 1, -1, 1, -1, -1], dtype=np.int8))
        assert hamming(a, a) == 0

    def test_complement_is_k(self):
        for k in (1, 8, 13, 64):
            bits = np.where(np.random.default_rng(k).random(k) > 0.5, 1, -1).astype(np.int8)
            assert hamming(BinaryCode(bits), BinaryCode(-bits)) == k

    def test_hand_case_k8(self):
        a = BinaryCode(np.array([1, 1, -1, -1, 1, -1, 1, 1], dtype=np.int8))
        b = BinaryCode(np.array([1, -1, -1, 1, 1, -1, -1, 1], dtype=np.int8))
        assert hamming(a, b) == 3
        assert oracle_hamming(a.bits, b.bits) == 3

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            hamming(BinaryCode(np.ones(8, dtype=np.int8)),
                    BinaryCode(np.ones(16, dtype=np.int8)))

    @given(st.integers(1, 40), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_metric_properties(self, k, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (BinaryCode(row) for row in random_bits(rng, 3, k))
        assert hamming(a, b) == hamming(b, a)
        assert hamming(a, a) == 0
        assert (hamming(a, b) == 0) == np.array_equal(a.bits, b.bits)
        assert hamming(a, c) <= hamming(a, b) + hamming(b, c)
        assert hamming(a, b) == oracle_hamming(a.bits, b.bits)


class TestQueryTopk:
    def test_exact_match_ranks_first(self):
        rng = np.random.default_rng(0)
        bits = random_bits(rng, 10, 16)
        idx = CodeIndex.from_bits(bits)
        out = query_topk(idx, BinaryCode(bits[4]), k=3)
        assert out.ids[0] == 4
        assert out.distances[0] == 0

    def test_k_equals_n_is_a_permutation(self):
        rng = np.random.default_rng(1)
        bits = random_bits(rng, 12, 8)
        idx = CodeIndex.from_bits(bits)
        out = query_topk(idx, BinaryCode(bits[0]), k=12)
        assert sorted(out.ids.tolist()) == list(range(12))
        assert np.all(np.diff(out.distances) >= 0)

    def test_matches_exhaustive_sort_oracle(self):
        rng = np.random.default_rng(2)
        bits = random_bits(rng, 5, 8)
        q = BinaryCode(random_bits(rng, 1, 8)[0])
        idx = CodeIndex.from_bits(bits)
        out = query_topk(idx, q, k=5)
        oracle = sorted(
            (oracle_hamming(q.bits, bits[i]), i) for i in range(5)
        )
        assert [(d, i) for i, d in zip(out.ids.tolist(), out.distances.tolist())] == oracle

    def test_ties_break_by_ascending_id(self):
        bits = np.ones((4, 8), dtype=np.int8)  # all identical: full tie
        idx = CodeIndex.from_bits(bits)
        out = query_topk(idx, BinaryCode(bits[0]), k=4)
        assert out.ids.tolist() == [0, 1, 2, 3]

    def test_k_larger_than_database_rejected(self):
        idx = CodeIndex.from_bits(np.ones((3, 8), dtype=np.int8))
        with pytest.raises(ValueError):
            query_topk(idx, BinaryCode(np.ones(8, dtype=np.int8)), k=4)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            CodeIndex.from_bits(np.ones((2, 8), dtype=np.int8), ids=[1, 1])


def index_with_ranks(query, rel_pattern, k_bits=16):
    """Database where item i sits at Hamming distance i+1 from the query,
    labeled 1 when rel_pattern[i] else 0 (query label is 1)."""
    rows = []
    for i in range(len(rel_pattern)):
        bits = query.copy()
        bits[: i + 1] *= -1
        rows.append(bits)
    labels = [1 if r else 0 for r in rel_pattern]
    return CodeIndex.from_bits(np.array(rows), ids=100 + np.arange(len(rows)), labels=labels)


class TestMapAtK:
    def test_all_topk_relevant_is_one(self):
        q = np.ones(16, dtype=np.int8)
        idx = index_with_ranks(q, [1, 1, 1, 1, 1, 1])
        out = map_at_k(q[None, :], [1], idx, k=3)
        assert out.value == pytest.approx(1.0)

    def test_no_relevant_in_topk_is_zero(self):
        q = np.ones(16, dtype=np.int8)
        idx = index_with_ranks(q, [0, 0, 0, 1, 1])
        out = map_at_k(q[None, :], [1], idx, k=3)
        assert out.value == 0.0

    def test_hand_case_ranks_one_and_three(self):
        # relevant at ranks 1 and 3, R = 2, k = 5 -> (1 + 2/3) / 2
        q = np.ones(16, dtype=np.int8)
        idx = index_with_ranks(q, [1, 0, 1, 0, 0, 0])
        out = map_at_k(q[None, :], [1], idx, k=5)
        assert out.value == pytest.approx(5.0 / 6.0, abs=1e-12)

    def test_queries_with_no_relevant_items_are_skipped_and_counted(self):
        q = np.ones(16, dtype=np.int8)
        idx = index_with_ranks(q, [1, 0, 1])
        queries = np.stack([q, q])
        out = map_at_k(queries, [1, 7], idx, k=2)  # label 7 has no matches
        assert out.evaluated == 1 and out.skipped == 1

    def test_database_permutation_invariance(self):
        rng = np.random.default_rng(3)
        bits = random_bits(rng, 20, 12)
        labels = rng.integers(0, 3, 20)
        queries = random_bits(rng, 6, 12)
        qlabels = rng.integers(0, 3, 6)
        idx = CodeIndex.from_bits(bits, ids=np.arange(20), labels=labels)
        base = map_at_k(queries, qlabels, idx, k=5).value
        perm = rng.permutation(20)
        idx_p = CodeIndex.from_bits(bits[perm], ids=np.arange(20)[perm], labels=labels[perm])
        assert map_at_k(queries, qlabels, idx_p, k=5).value == pytest.approx(base, abs=1e-12)

    def test_self_exclusion_drops_trivial_hit(self):
        rng = np.random.default_rng(4)
        bits = random_bits(rng, 8, 12)
        labels = np.zeros(8, dtype=int)
        idx = CodeIndex.from_bits(bits, ids=np.arange(8), labels=labels)
        with_self = map_at_k(bits[:1], [0], idx, k=3, query_ids=None)
        without = map_at_k(bits[:1], [0], idx, k=3, query_ids=np.array([0]))
        assert with_self.value == pytest.approx(1.0)  # rank-1 self hit
        assert without.evaluated == 1

    def test_moving_a_relevant_item_up_never_decreases_ap(self):
        rng = np.random.default_rng(5)
        q = np.ones(16, dtype=np.int8)
        for _ in range(50):
            pattern = (rng.random(10) > 0.6).astype(int).tolist()
            if sum(pattern) in (0, 10):
                continue
            base = map_at_k(q[None, :], [1], index_with_ranks(q, pattern), k=6).value
            # swap a relevant item with the irrelevant one directly above it
            for pos in range(1, 10):
                if pattern[pos] == 1 and pattern[pos - 1] == 0:
                    swapped = list(pattern)
                    swapped[pos - 1], swapped[pos] = 1, 0
                    better = map_at_k(q[None, :], [1],
                                      index_with_ranks(q, swapped), k=6).value
                    assert better >= base - 1e-12
                    break

    def test_matches_rational_oracle_on_random_databases(self):
        rng = np.random.default_rng(6)
        q = np.ones(16, dtype=np.int8)
        for _ in range(50):
            pattern = (rng.random(8) > 0.5).astype(int).tolist()
            if sum(pattern) == 0:
                continue
            k = int(rng.integers(1, 9))
            got = map_at_k(q[None, :], [1], index_with_ranks(q, pattern), k=k).value
            want = oracle_ap_at_k(pattern, k)
            assert abs(got - float(want)) < 1e-12


class TestPrCurve:
    def oracle_points(self, dists_rel, k_bits):
        """Exhaustive enumeration of the sweep for one query set."""
        points = []
        for radius in range(k_bits + 1):
            recalls, precisions = [], []
            for dists, rel in dists_rel:
                ret = [d <= radius for d in dists]
                hits = sum(1 for r, in_ret in zip(rel, ret) if r and in_ret)
                recalls.append(hits / sum(rel))
                if any(ret):
                    precisions.append(hits / sum(ret))
            if precisions:
                points.append((float(np.mean(recalls)), float(np.mean(precisions))))
        return points

    def test_full_radius_reaches_recall_one(self):
        rng = np.random.default_rng(7)
        bits = random_bits(rng, 15, 8)
        labels = rng.integers(0, 2, 15)
        idx = CodeIndex.from_bits(bits, labels=labels)
        points = pr_curve(random_bits(rng, 4, 8), rng.integers(0, 2, 4), idx)
        assert points[-1][0] == pytest.approx(1.0)

    def test_radius_zero_without_duplicates_gives_no_point(self):
        q = np.ones(8, dtype=np.int8)[None, :]
        bits = -np.ones((3, 8), dtype=np.int8)
        bits[1, 0] = 1
        bits[2, :2] = 1
        idx = CodeIndex.from_bits(bits, labels=[1, 1, 0])
        points = pr_curve(q, [1], idx)
        # distances are 8, 7, 6: radii 0..5 retrieve nothing and are skipped
        assert len(points) == 3

    def test_recall_monotone_nondecreasing(self):
        rng = np.random.default_rng(8)
        bits = random_bits(rng, 25, 12)
        labels = rng.integers(0, 3, 25)
        idx = CodeIndex.from_bits(bits, labels=labels)
        points = pr_curve(random_bits(rng, 5, 12), rng.integers(0, 3, 5), idx)
        recalls = [p[0] for p in points]
        assert all(b >= a - 1e-12 for a, b in zip(recalls, recalls[1:]))

    def test_four_item_hand_example_matches_enumeration_oracle(self):
        q = np.ones(8, dtype=np.int8)
        rows, dists = [], [0, 2, 3, 5]
        for d in dists:
            bits = q.copy()
            bits[:d] *= -1
            rows.append(bits)
        labels = [1, 0, 1, 1]
        idx = CodeIndex.from_bits(np.array(rows), labels=labels)
        got = pr_curve(q[None, :], [1], idx)
        rel = [lab == 1 for lab in labels]
        want = self.oracle_points([(dists, rel)], 8)
        assert got == pytest.approx(want, abs=1e-12)

    def test_matches_enumeration_oracle_on_random_databases(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            bits = random_bits(rng, 12, 10)
            labels = rng.integers(0, 2, 12)
            queries = random_bits(rng, 3, 10)
            qlabels = rng.integers(0, 2, 3)
            idx = CodeIndex.from_bits(bits, labels=labels)
            got = pr_curve(queries, qlabels, idx)

            pairs = []
            for qi in range(3):
                dists = [oracle_hamming(queries[qi], bits[i]) for i in range(12)]
                rel = [labels[i] == qlabels[qi] for i in range(12)]
                if sum(rel):
                    pairs.append((dists, rel))
            want = self.oracle_points(pairs, 10)
            assert got == pytest.approx(want, abs=1e-12)

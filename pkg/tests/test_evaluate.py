import itertools
import logging

import numpy as np
import pytest

import evaluate
from core import ContractViolation, DegenerateInputError

# Five database items and three queries laid out by hand.
DB_EMB = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [0.8, 0.6]])
DB_POS = np.array([[0.0, 0.0], [100.0, 0.0], [200.0, 0.0], [300.0, 0.0], [10.0, 0.0]])
Q_EMB = np.array([[1.0, 0.0], [0.6, 0.8], [-0.6, 0.8]])
Q_POS = np.array([[0.0, 5.0], [300.0, 0.0], [1000.0, 1000.0]])


def enumerate_recall(n, threshold=25.0):
    """Exhaustive: for each query, sort (distance, index) pairs and look at the first n."""
    hits = 0
    for q, qp in zip(Q_EMB, Q_POS):
        ranked = sorted((float(np.sum((e - q) ** 2)), i) for i, e in enumerate(DB_EMB))
        if any(np.hypot(*(DB_POS[i] - qp)) <= threshold for _, i in ranked[:n]):
            hits += 1
    return hits / len(Q_EMB)


class TestRecall:

    def test_hand_layout(self):
        curve = evaluate.recall_at_n(DB_EMB, DB_POS, Q_EMB, Q_POS, [1, 2, 5])
        assert curve.recalls == pytest.approx([1 / 3, 1 / 3, 2 / 3])
        for n in (1, 2, 3, 4, 5):
            assert evaluate.recall_at_n(DB_EMB, DB_POS, Q_EMB, Q_POS, [n]).at(n) == enumerate_recall(n)

    def test_exact_match_counts_at_one(self):
        curve = evaluate.recall_at_n(DB_EMB[:1], DB_POS[:1], DB_EMB[:1], DB_POS[:1], [1])
        assert curve.at(1) == 1.0

    def test_nothing_within_threshold(self):
        curve = evaluate.recall_at_n(DB_EMB, DB_POS, Q_EMB, DB_POS[:3] + 500.0, [1, 5, 10])
        assert curve.recalls == [0.0, 0.0, 0.0]

    def test_no_hit_stays_missed_beyond_database_size(self):
        curve = evaluate.recall_at_n(DB_EMB[:2], DB_POS[:2], Q_EMB[:1], [[1000.0, 0.0]], [1, 2, 3, 50])
        assert curve.recalls == [0.0, 0.0, 0.0, 0.0]

    def test_small_database_counts_hits_once(self):
        curve = evaluate.recall_at_n(DB_EMB[:2], DB_POS[:2], Q_EMB[:2], [[0.0, 0.0], [1000.0, 0.0]], [1, 5])
        assert curve.recalls == [0.5, 0.5]

    def test_nondecreasing(self, rng):
        db = rng.standard_normal((40, 3))
        q = rng.standard_normal((15, 3))
        curve = evaluate.recall_at_n(db, rng.uniform(0, 200, (40, 2)), q, rng.uniform(0, 200, (15, 2)),
                                     [1, 2, 5, 10, 20, 40])
        assert all(a <= b for a, b in zip(curve.recalls, curve.recalls[1:]))

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            evaluate.recall_at_n(DB_EMB, DB_POS, np.ones((2, 3)), Q_POS[:2], [1])

    def test_as_dict(self):
        curve = evaluate.recall_at_n(DB_EMB, DB_POS, Q_EMB, Q_POS, [5, 1])
        assert curve.n_values == [1, 5]
        assert curve.as_dict() == {'1': pytest.approx(1 / 3), '5': pytest.approx(2 / 3)}


class TestRanking:

    def test_ties_go_to_lowest_id(self):
        db = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        order = evaluate.rank_database(db, np.array([[1.0, 0.0]]), db_ids=[7, 3, 1])
        assert order[0].tolist() == [1, 0, 2]

    def test_top_k(self):
        order = evaluate.rank_database(DB_EMB, Q_EMB, top_k=2)
        assert order.shape == (3, 2)
        assert order[1].tolist() == [4, 1]


class TestMeanAveragePrecision:

    def test_first(self):
        assert evaluate.average_precision(['a', 'x', 'y'], {'a'}) == 1.0

    @pytest.mark.parametrize("k", [1, 2, 5])
    def test_kth(self, k):
        ranking = ['x{}'.format(i) for i in range(k - 1)] + ['a'] + ['z']
        assert evaluate.average_precision(ranking, {'a'}) == pytest.approx(1.0 / k)

    def test_hand_value(self):
        assert evaluate.mean_average_precision([['x', 'a', 'y', 'b']], [{'a', 'b'}]) == 0.5

    def test_missing_relevant_counts_zero(self):
        assert evaluate.average_precision(['a', 'x'], {'a', 'b'}) == 0.5

    def test_perfect_ordering(self, rng):
        rankings, relevance = [], []
        for _ in range(10):
            relevant = set(rng.choice(20, size=int(rng.integers(1, 6)), replace=False).tolist())
            rest = [i for i in range(20) if i not in relevant]
            rankings.append(sorted(relevant) + rest)
            relevance.append(relevant)
        assert evaluate.mean_average_precision(rankings, relevance) == 1.0

    def test_empty_relevance_is_excluded(self, caplog):
        with caplog.at_level(logging.WARNING):
            value = evaluate.mean_average_precision([['a', 'b'], ['a', 'b']], [set(), {'b'}])
        assert value == 0.5
        assert "query 0" in caplog.text

    def test_all_empty(self):
        with pytest.raises(ContractViolation):
            evaluate.mean_average_precision([['a']], [set()])


class TestPca:

    def test_matches_covariance_eigendecomposition(self, rng):
        x = rng.standard_normal((50, 8)) * np.array([5.0, 4.0, 3.0, 2.5, 1.0, 0.5, 0.2, 0.1])
        projection, reduced = evaluate.pca_reduce(x, 4)
        values, vectors = np.linalg.eigh(np.cov(x, rowvar=False))
        oracle = vectors[:, ::-1][:, :4].T
        for got, want in zip(projection.components, oracle):
            sign = np.sign(got @ want)
            np.testing.assert_allclose(sign * got, want, atol=1e-8)
        np.testing.assert_allclose(projection.mean, x.mean(axis=0), atol=1e-12)
        assert reduced.shape == (50, 4)
        np.testing.assert_allclose(np.linalg.norm(reduced, axis=1), 1.0, atol=1e-12)

    def test_full_dimension_is_orthonormal(self, rng):
        projection, _ = evaluate.pca_reduce(rng.standard_normal((30, 6)), 6)
        np.testing.assert_allclose(projection.components.T @ projection.components, np.eye(6), atol=1e-10)
        np.testing.assert_allclose(projection.components @ projection.components.T, np.eye(6), atol=1e-10)

    def test_exact_plane(self, rng):
        x = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 5)) + rng.standard_normal(5)
        projection, _ = evaluate.pca_reduce(x, 2)
        np.testing.assert_allclose(projection.reconstruct(x), x, atol=1e-10)

    def test_rank_deficient(self, rng):
        x = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 5))
        with pytest.raises(DegenerateInputError, match="rank 2"):
            evaluate.pca_reduce(x, 3)

    @pytest.mark.parametrize("rows,target", [(10, 0), (10, 7), (4, 4)])
    def test_preconditions(self, rng, rows, target):
        with pytest.raises(ContractViolation):
            evaluate.pca_reduce(rng.standard_normal((rows, 6)), target)


class TestEvaluateEmbeddings:

    def test_metrics_and_top_k(self):
        metrics, top = evaluate.evaluate_embeddings(
            DB_EMB, DB_POS, np.array([0, 1, 2, 3, 0]), Q_EMB, Q_POS, np.array([0, 3, 2]),
            n_values=[1, 5], top_k=3)
        assert metrics['dim'] == 2
        assert metrics['recall'] == {'1': pytest.approx(1 / 3), '5': pytest.approx(2 / 3)}
        # q0 ranks 0 then 4 (both place 0); q1 finds place 3 last; q2 finds place 2 second.
        expected = np.mean([1.0, 1 / 5, 1 / 2])
        assert metrics['map'] == pytest.approx(expected)
        assert top.shape == (3, 3)

    def test_pca_sweep(self, rng):
        db = rng.standard_normal((60, 6))
        q = db[:10] + 0.01 * rng.standard_normal((10, 6))
        rows = evaluate.pca_sweep(db, rng.uniform(0, 1000, (60, 2)), np.arange(60), q,
                                  np.zeros((10, 2)), np.arange(10), [4, 2], [1, 5])
        assert [r['dim'] for r in rows] == [4, 2]
        for r in rows:
            assert set(r['recall']) == {'1', '5'}
            assert 0.0 <= r['map'] <= 1.0


def test_squared_distances_match_pairs():
    d2 = evaluate.squared_distances(DB_EMB, Q_EMB)
    for (i, q), (j, e) in itertools.product(enumerate(Q_EMB), enumerate(DB_EMB)):
        assert d2[i, j] == pytest.approx(float(np.sum((q - e) ** 2)), abs=1e-15)

"""
Localization and retrieval metrics: recall@N under the distance rule, mean
average precision and PCA dimension reduction.

Rankings are exact brute force by squared embedding distance, ties broken
by the lowest image id.
"""
from dataclasses import dataclass
from typing import List

import colorlog
import numpy as np
from sklearn.decomposition import PCA

from core import ContractViolation, DegenerateInputError, l2_normalize_rows

logger = colorlog.getLogger(__name__)

DEFAULT_N_VALUES = (1, 5, 10, 20)
DEFAULT_THRESHOLD_M = 25.0


@dataclass(frozen=True)
class RecallCurve:
    n_values: List[int]
    recalls: List[float]
    distance_threshold_m: float = DEFAULT_THRESHOLD_M

    def at(self, n):
        return self.recalls[self.n_values.index(n)]

    def as_dict(self):
        return {str(n): r for n, r in zip(self.n_values, self.recalls)}


def _check_pair(db, queries):
    db = np.asarray(db, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if db.ndim != 2 or queries.ndim != 2 or db.shape[0] == 0 or queries.shape[0] == 0:
        raise ContractViolation("database and queries must be nonempty 2-D arrays")
    if db.shape[1] != queries.shape[1]:
        raise ContractViolation("dimension mismatch: database {} vs queries {}".format(
            db.shape[1], queries.shape[1]))
    return db, queries


def squared_distances(db, queries):
    db, queries = _check_pair(db, queries)
    rows = []
    for q in queries:
        diff = db - q
        rows.append(np.einsum('ij,ij->i', diff, diff))
    return np.vstack(rows)


def rank_database(db_embeddings, query_embeddings, db_ids=None, top_k=None):
    """Row i lists database indices for query i, nearest first."""
    d2 = squared_distances(db_embeddings, query_embeddings)
    ids = np.arange(d2.shape[1]) if db_ids is None else np.asarray(db_ids)
    order = np.vstack([np.lexsort((ids, row)) for row in d2])
    return order if top_k is None else order[:, :top_k]


def recall_at_n(db_embeddings, db_positions, query_embeddings, query_positions,
                n_values=DEFAULT_N_VALUES, threshold_m=DEFAULT_THRESHOLD_M, db_ids=None):
    n_values = sorted(int(n) for n in n_values)
    if not n_values or n_values[0] < 1:
        raise ContractViolation("n_values must be positive integers")
    order = rank_database(db_embeddings, query_embeddings, db_ids)
    db_positions = np.asarray(db_positions, dtype=np.float64)
    query_positions = np.asarray(query_positions, dtype=np.float64)
    if db_positions.shape[0] != order.shape[1] or query_positions.shape[0] != order.shape[0]:
        raise ContractViolation("positions do not match the embeddings")
    geo = np.linalg.norm(db_positions[order] - query_positions[:, None, :], axis=2)
    hit = geo <= threshold_m
    # N beyond the database size looks at every item, never past it.
    recalls = [float(np.mean(hit[:, :n].any(axis=1))) for n in n_values]
    return RecallCurve(n_values, recalls, threshold_m)


def average_precision(ranking, relevant):
    hits = 0
    total = 0.0
    for rank, item in enumerate(ranking, start=1):
        if item in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def mean_average_precision(rankings, relevance):
    scores = []
    for i, (ranking, relevant) in enumerate(zip(rankings, relevance)):
        relevant = set(relevant)
        if not relevant:
            logger.warning("query {} has no relevant items and is left out of mAP".format(i))
            continue
        scores.append(average_precision(list(ranking), relevant))
    if not scores:
        raise ContractViolation("no query has a relevant item")
    return float(np.mean(scores))


@dataclass(frozen=True, eq=False)
class PcaProjection:
    mean: np.ndarray
    components: np.ndarray

    @property
    def target_dim(self):
        return self.components.shape[0]

    def project(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def transform(self, x):
        return l2_normalize_rows(self.project(x))

    def reconstruct(self, x):
        return self.project(x) @ self.components + self.mean


def pca_reduce(db_embeddings, target_dim):
    db = np.asarray(db_embeddings, dtype=np.float64)
    if target_dim < 1 or target_dim > db.shape[1]:
        raise ContractViolation("target_dim must lie in [1, {}], got {}".format(db.shape[1], target_dim))
    if db.shape[0] <= target_dim:
        raise ContractViolation("need more than {} database rows, got {}".format(target_dim, db.shape[0]))
    rank = int(np.linalg.matrix_rank(db - db.mean(axis=0)))
    if rank < target_dim:
        raise DegenerateInputError("covariance has rank {}, below target_dim {}".format(rank, target_dim))
    pca = PCA(n_components=target_dim, svd_solver='full').fit(db)
    projection = PcaProjection(mean=pca.mean_.copy(), components=pca.components_.copy())
    return projection, projection.transform(db)


def place_relevance(db_place_ids, query_place_ids):
    return [set(np.flatnonzero(db_place_ids == place).tolist()) for place in query_place_ids]


def evaluate_embeddings(db_embeddings, db_positions, db_place_ids, query_embeddings,
                        query_positions, query_place_ids, n_values=DEFAULT_N_VALUES,
                        threshold_m=DEFAULT_THRESHOLD_M, db_ids=None, top_k=25):
    """Recall curve, place-id mAP and the top-K rankings (as database indices)."""
    curve = recall_at_n(db_embeddings, db_positions, query_embeddings, query_positions,
                        n_values, threshold_m, db_ids)
    order = rank_database(db_embeddings, query_embeddings, db_ids)
    relevance = place_relevance(np.asarray(db_place_ids), np.asarray(query_place_ids))
    mean_ap = mean_average_precision(order, relevance)
    return {
        'recall': curve.as_dict(),
        'map': mean_ap,
        'dim': int(np.asarray(db_embeddings).shape[1]),
    }, order[:, :top_k]


def pca_sweep(db_embeddings, db_positions, db_place_ids, query_embeddings, query_positions,
              query_place_ids, dims, n_values=DEFAULT_N_VALUES, threshold_m=DEFAULT_THRESHOLD_M,
              db_ids=None):
    rows = []
    for dim in dims:
        projection, reduced = pca_reduce(db_embeddings, dim)
        metrics, _ = evaluate_embeddings(reduced, db_positions, db_place_ids,
                                         projection.transform(query_embeddings), query_positions,
                                         query_place_ids, n_values, threshold_m, db_ids)
        logger.info("dim {}: recall@{} {:.4f}, mAP {:.4f}".format(
            dim, n_values[0], metrics['recall'][str(n_values[0])], metrics['map']))
        rows.append(metrics)
    return rows

"""
Training tuple mining: the positive is the nearest neighbour in the current
embedding among geographically close database images, the negatives are
the hardest geographically far ones.
"""
import csv
import io
from dataclasses import dataclass

import colorlog
import numpy as np

from core import ContractViolation, MiningError, TrainingTuple


logger = colorlog.getLogger(__name__)


@dataclass(frozen=True)
class MiningConfig:
    r_pos: float = 10.0
    r_neg: float = 25.0
    n_neg: int = 10
    remine_every: int = 1

    def __post_init__(self):
        if not 0 < self.r_pos < self.r_neg:
            raise ContractViolation("need 0 < r_pos < r_neg, got {} and {}".format(self.r_pos, self.r_neg))
        if self.n_neg < 1 or self.remine_every < 1:
            raise ContractViolation("n_neg and remine_every must be >= 1")


def _nearest(d2, ids, candidates, count):
    """Indices of the `count` candidates nearest in embedding, ties to the lowest id."""
    order = np.lexsort((ids[candidates], d2[candidates]))
    return candidates[order[:count]]


def mine_tuples(dataset, model, cfg, split='queries_train'):
    queries = sorted(dataset.split(split), key=lambda d: d.image_id)
    if not queries:
        raise MiningError("split {} has no queries".format(split))
    database = dataset.database
    db_ids = dataset.ids('database')
    db_pos = dataset.positions('database')
    db_emb = model.embed_batch(dataset.features('database'))
    q_emb = model.embed_batch(np.vstack([q.features for q in queries]))

    tuples = []
    for query, emb in zip(queries, q_emb):
        geo = np.hypot(db_pos[:, 0] - query.x, db_pos[:, 1] - query.y)
        diff = db_emb - emb
        d2 = np.einsum('ij,ij->i', diff, diff)
        near = np.flatnonzero(geo <= cfg.r_pos)
        if near.size == 0:
            logger.warning("query {} has no database image within {} m, skipped".format(
                query.image_id, cfg.r_pos))
            continue
        far = np.flatnonzero(geo > cfg.r_neg)
        if far.size < cfg.n_neg:
            raise ContractViolation("query {} has {} images beyond {} m, needs {}".format(
                query.image_id, far.size, cfg.r_neg, cfg.n_neg))
        positive = _nearest(d2, db_ids, near, 1)[0]
        negatives = _nearest(d2, db_ids, far, cfg.n_neg)
        t = TrainingTuple(query, database[positive], [database[i] for i in negatives])
        t.check(cfg.r_pos, cfg.r_neg)
        tuples.append(t)
    if not tuples:
        raise MiningError("no query in {} has a positive within {} m".format(split, cfg.r_pos))
    logger.debug("mined {} tuples from {} queries".format(len(tuples), len(queries)))
    return tuples


def write_tuples_csv(tuples, path):
    n_neg = max(len(t.negatives) for t in tuples) if tuples else 0
    with io.open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['query_id', 'positive_id'] + ['neg_id_{}'.format(i + 1) for i in range(n_neg)])
        for t in tuples:
            writer.writerow([t.query.image_id, t.positive.image_id] + [n.image_id for n in t.negatives])

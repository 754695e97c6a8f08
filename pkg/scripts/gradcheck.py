"""
Central finite-difference oracle for the analytic gradients in losses.
"""
from dataclasses import dataclass
from typing import Tuple

import colorlog
import numpy as np

import losses
from core import (ContractViolation, KernelKind, LossFamily, LossGrad, NonFiniteError,
                  as_matrix, as_vector, l2_normalize)

logger = colorlog.getLogger(__name__)

DEFAULT_EPS = 1e-5
RELATIVE_FLOOR = 1e-8
# Nonzero analytic coordinates below this are not resolvable by central
# differences at eps=1e-5 to a 1e-6 relative tolerance.
RESOLVABLE_GRADIENT = 1e-4


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    worst_coordinate: Tuple[str, int]
    trials: int
    eps: float

    def merge(self, other):
        worst = self if self.max_relative_error >= other.max_relative_error else other
        return GradCheckReport(worst.max_relative_error, worst.worst_coordinate,
                               self.trials + other.trials, self.eps)

    def as_dict(self):
        return {
            'max_relative_error': self.max_relative_error,
            'worst_coordinate': {'tensor': self.worst_coordinate[0],
                                 'index': self.worst_coordinate[1]},
            'trials': self.trials,
            'eps': self.eps,
        }


def _sq_dist_rows(a, rows):
    diff = rows - a
    return np.einsum('ij,ij->i', diff, diff)


def finite_difference_gradients(spec, q, p, negs, eps=DEFAULT_EPS):
    """Central differences of the tuple loss, all shifted tuples evaluated in one batch per tensor."""
    if not 1e-7 <= eps <= 1e-3:
        raise ContractViolation("eps must lie in [1e-7, 1e-3], got {}".format(eps))
    q = as_vector(q, 'q')
    p = as_vector(p, 'p')
    negs = as_matrix(negs, q.shape[0], 'negatives')
    dim, n_neg = q.shape[0], negs.shape[0]
    dp2 = _sq_dist_rows(q, p[None, :])
    dn2 = _sq_dist_rows(q, negs)

    base = losses.tuple_loss_values(spec, dp2, dn2[None, :])[0]
    if not np.isfinite(base):
        raise NonFiniteError("loss is not finite at the given tuple")

    def central(name, shifted_dp2, shifted_dn2):
        # Rows hold every +eps shift, then every -eps shift, one per coordinate.
        values = losses.tuple_loss_values(spec, shifted_dp2, shifted_dn2)
        up, down = values[:values.shape[0] // 2], values[values.shape[0] // 2:]
        bad = np.flatnonzero(~(np.isfinite(up) & np.isfinite(down)))
        if bad.size:
            raise NonFiniteError("non-finite loss at a shifted {}[{}]".format(name, bad[0]))
        return (up - down) / (2.0 * eps)

    shifts = np.vstack([eps * np.eye(dim), -eps * np.eye(dim)])

    moved_q = q + shifts
    d_query = central('query', _sq_dist_rows(p, moved_q),
                      np.stack([_sq_dist_rows(n, moved_q) for n in negs], axis=1))

    d_positive = central('positive', _sq_dist_rows(q, p + shifts), np.tile(dn2, (2 * dim, 1)))

    # Row (sign, j, i) moves coordinate i of negative j.
    shifted_dn2 = np.tile(dn2, (2, n_neg, dim, 1))
    for j in range(n_neg):
        moved = _sq_dist_rows(q, negs[j] + shifts).reshape(2, dim)
        shifted_dn2[:, j, :, j] = moved
    d_negatives = central('negatives', np.full(2 * n_neg * dim, dp2[0]),
                          shifted_dn2.reshape(2 * n_neg * dim, n_neg))

    return LossGrad(float(base), d_query, d_positive, d_negatives.reshape(n_neg, dim))


def compare(analytic, numeric, eps=DEFAULT_EPS):
    worst = 0.0
    where = ('query', 0)
    for (name, a), (_, n) in zip(analytic.arrays(), numeric.arrays()):
        if a.shape != n.shape:
            raise ContractViolation("shape mismatch for {}: {} vs {}".format(name, a.shape, n.shape))
        if a.size == 0:
            continue
        a = a.reshape(-1)
        n = n.reshape(-1)
        rel = np.abs(a - n) / np.maximum(RELATIVE_FLOOR, np.maximum(np.abs(a), np.abs(n)))
        i = int(np.argmax(rel))
        if rel[i] > worst:
            worst = float(rel[i])
            where = (name, i)
    return GradCheckReport(worst, where, 1, eps)


def _near_kink(spec, q, p, negs, eps):
    margin = 10.0 * eps
    dp2 = float((q - p) @ (q - p))
    dn2 = np.sum((negs - q) ** 2, axis=1)
    if spec.family == LossFamily.TRIPLET:
        return bool(np.any(np.abs(spec.margin_m + dp2 - dn2) < margin))
    if spec.family == LossFamily.CONTRASTIVE:
        return bool(np.any(np.abs(np.sqrt(dn2) - spec.margin_tau) < margin) or np.any(dn2 == 0.0))
    if spec.kernel == KernelKind.EXPONENTIAL:
        return dp2 < margin ** 2 or bool(np.any(dn2 < margin ** 2))
    return False


def _unresolvable(grad):
    for _, a in grad.arrays():
        mag = np.abs(a)
        if np.any((mag > 0.0) & (mag < RESOLVABLE_GRADIENT)):
            return True
    return False


def sample_tuple(spec, rng, dim, n_neg, eps=DEFAULT_EPS, max_draws=1000):
    """Draw a normalized tuple away from kinks, spreading distances over [0.2, 2]."""
    for _ in range(max_draws):
        q = l2_normalize(rng.standard_normal(dim))

        def around():
            r = rng.standard_normal(dim)
            r = l2_normalize(r - (r @ q) * q)
            theta = rng.uniform(0.2, 3.0)
            return l2_normalize(np.cos(theta) * q + np.sin(theta) * r)

        p = around()
        negs = np.vstack([around() for _ in range(n_neg)])
        if _near_kink(spec, q, p, negs, eps):
            continue
        if _unresolvable(losses.tuple_loss(spec, q, p, negs)):
            continue
        return q, p, negs
    raise ContractViolation("could not draw a tuple away from kinks in {} attempts".format(max_draws))


def run_trials(spec, dim=32, negatives=(1, 5, 10), trials=100, eps=DEFAULT_EPS, seed=0):
    """Check `trials` random tuples, cycling the negative count through `negatives`."""
    if trials < 1:
        raise ContractViolation("trials must be at least 1")
    rng = np.random.default_rng(seed)
    report = None
    for t in range(trials):
        n_neg = negatives[t % len(negatives)]
        q, p, negs = sample_tuple(spec, rng, dim, n_neg, eps)
        trial = compare(losses.tuple_loss(spec, q, p, negs),
                        finite_difference_gradients(spec, q, p, negs, eps), eps)
        report = trial if report is None else report.merge(trial)
    logger.debug("{}: worst relative error {:.3g} at {}".format(
        spec.label, report.max_relative_error, report.worst_coordinate))
    return report

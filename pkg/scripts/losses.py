"""
Loss values and exact analytic gradients for the triplet ranking,
contrastive and SARE objectives.

Every function here is pure and takes plain float64 vectors. Unit norm is
the caller's business; the finite-difference oracle shifts points off the sphere.
Sums over negatives run left to right in the order given.
"""
import numpy as np

from core import (ContractViolation, DegenerateInputError, KernelKind, LossFamily,
                  LossGrad, MatchDistribution, NegativeMode, as_matrix, as_vector)


def _tuple_arrays(q, p, negs):
    q = as_vector(q, 'q')
    p = as_vector(p, 'p')
    if q.shape[0] < 2:
        raise ContractViolation("embeddings need at least 2 dimensions, got {}".format(q.shape[0]))
    if p.shape != q.shape:
        raise ContractViolation("dimension mismatch: q has {}, p has {}".format(q.shape[0], p.shape[0]))
    negs = as_matrix(negs, q.shape[0], 'negatives')
    if negs.shape[0] < 1:
        raise ContractViolation("at least one negative is required")
    return q, p, negs


def _sq_dists(q, x):
    diff = x - q
    return np.einsum('ij,ij->i', diff, diff)


def triplet_ranking(q, p, n, m=0.1):
    """max(0, m + d²(q,p) − d²(q,n)); the boundary takes the zero branch."""
    if not m > 0:
        raise ContractViolation("margin m must be positive, got {}".format(m))
    q, p, negs = _tuple_arrays(q, p, n)
    if negs.shape[0] != 1:
        raise ContractViolation("triplet_ranking takes exactly one negative")
    n = negs[0]
    dp2 = float((q - p) @ (q - p))
    dn2 = float((q - n) @ (q - n))
    violation = m + dp2 - dn2
    if violation <= 0.0:
        zero = np.zeros_like(q)
        return LossGrad(0.0, zero, zero.copy(), np.zeros_like(negs))
    d_p = 2.0 * (p - q)
    d_n = 2.0 * (q - n)
    d_q = 2.0 * (n - p)
    return LossGrad(violation, d_q, d_p, d_n.reshape(1, -1))


def triplet_tuple(q, p, negs, m=0.1):
    """Triplet ranking averaged over the tuple's negatives."""
    if not m > 0:
        raise ContractViolation("margin m must be positive, got {}".format(m))
    q, p, negs = _tuple_arrays(q, p, negs)
    n_neg = negs.shape[0]
    violation = m + float((q - p) @ (q - p)) - _sq_dists(q, negs)
    active = violation > 0.0
    loss = float(np.sum(np.where(active, violation, 0.0))) / n_neg
    weight = active.astype(np.float64) / n_neg
    d_n = 2.0 * weight[:, None] * (q - negs)
    d_p = 2.0 * weight.sum() * (p - q)
    d_q = 2.0 * (weight @ negs - weight.sum() * p)
    return LossGrad(loss, d_q, d_p, d_n)


def contrastive(a, b, is_positive, tau=0.7):
    """Pair loss. d_query holds ∂L/∂a; ∂L/∂b sits in d_positive or d_negatives."""
    if not tau > 0:
        raise ContractViolation("margin tau must be positive, got {}".format(tau))
    a = as_vector(a, 'a')
    b = as_vector(b, 'b')
    if a.shape != b.shape:
        raise ContractViolation("dimension mismatch: {} vs {}".format(a.shape[0], b.shape[0]))
    zero = np.zeros_like(a)
    if is_positive:
        diff = b - a
        return LossGrad(0.5 * float(diff @ diff), -diff, diff, np.zeros((0, a.shape[0])))
    d = float(np.linalg.norm(a - b))
    if d >= tau:
        return LossGrad(0.0, zero, zero.copy(), np.zeros((1, a.shape[0])))
    if d == 0.0:
        raise DegenerateInputError("negative pair at distance 0 has no gradient direction")
    coef = 1.0 - tau / d
    d_b = -coef * (a - b)
    return LossGrad(0.5 * (tau - d) ** 2, -d_b, zero, d_b.reshape(1, -1))


def contrastive_tuple(q, p, negs, tau=0.7):
    """Positive-pair loss plus the mean of the negative-pair losses."""
    if not tau > 0:
        raise ContractViolation("margin tau must be positive, got {}".format(tau))
    q, p, negs = _tuple_arrays(q, p, negs)
    n_neg = negs.shape[0]
    pos = contrastive(q, p, True, tau)
    dist = np.sqrt(_sq_dists(q, negs))
    active = dist < tau
    if np.any(active & (dist == 0.0)):
        raise DegenerateInputError("negative pair at distance 0 has no gradient direction")
    safe = np.where(active, dist, 1.0)
    coef = np.where(active, 1.0 - tau / safe, 0.0) / n_neg
    d_n = -coef[:, None] * (q - negs)
    neg_loss = float(np.sum(np.where(active, 0.5 * (tau - dist) ** 2, 0.0))) / n_neg
    d_q = pos.d_query - d_n.sum(axis=0)
    return LossGrad(pos.loss + neg_loss, d_q, pos.d_positive, d_n)


def _log_kernel(kernel, d2):
    kernel = KernelKind(kernel)
    if kernel == KernelKind.GAUSSIAN:
        return -d2
    if kernel == KernelKind.CAUCHY:
        return -np.log1p(d2)
    return -np.sqrt(d2)


def _kernel_terms(kernel, d2):
    """Log-kernel values and the weights w(d²) = −2·d log K / d(d²).

    With these, ∂L/∂p = (1 − c_p)·w_p·(p − q) and ∂L/∂nᵢ = c_nᵢ·w_nᵢ·(q − nᵢ).
    """
    kernel = KernelKind(kernel)
    if kernel == KernelKind.GAUSSIAN:
        return -d2, np.full_like(d2, 2.0)
    if kernel == KernelKind.CAUCHY:
        return -np.log1p(d2), 2.0 / (1.0 + d2)
    d = np.sqrt(d2)
    if np.any(d == 0.0):
        raise DegenerateInputError("exponential kernel gradient is undefined at distance 0")
    return -d, 1.0 / d


def _softmax(s):
    e = np.exp(s - np.max(s))
    return e / e.sum()


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def match_probability(q, p, negs, kernel=KernelKind.GAUSSIAN):
    q, p, negs = _tuple_arrays(q, p, negs)
    d2 = np.concatenate([[float((q - p) @ (q - p))], _sq_dists(q, negs)])
    s = _log_kernel(kernel, d2)
    prior = np.zeros_like(s)
    prior[0] = 1.0
    return MatchDistribution(prior_h=prior, learned_c=_softmax(s))


def sare(q, p, negs, kernel=KernelKind.GAUSSIAN, mode=NegativeMode.INDEPENDENT):
    q, p, negs = _tuple_arrays(q, p, negs)
    mode = NegativeMode(mode)
    d2 = np.concatenate([[float((q - p) @ (q - p))], _sq_dists(q, negs)])
    s, w = _kernel_terms(kernel, d2)
    if mode == NegativeMode.JOINT:
        c = _softmax(s)
        loss = float(np.logaddexp.reduce(s) - s[0])
        pull = (1.0 - c[0]) * w[0]
        push = c[1:] * w[1:]
    else:
        # One triplet per negative: c_p of the i-th triplet is σ(s_p − s_nᵢ).
        n_neg = negs.shape[0]
        margin = s[1:] - s[0]
        loss = float(np.sum(np.logaddexp(0.0, margin))) / n_neg
        miss = _sigmoid(margin)
        pull = float(np.sum(miss)) * w[0] / n_neg
        push = miss * w[1:] / n_neg
    d_p = pull * (p - q)
    d_n = push[:, None] * (q - negs)
    d_q = pull * (q - p) + push @ negs - push.sum() * q
    return LossGrad(loss, d_q, d_p, d_n)


def tuple_loss(spec, q, p, negs):
    """Evaluate the objective named by a LossSpec on one tuple."""
    if spec.family == LossFamily.TRIPLET:
        return triplet_tuple(q, p, negs, spec.margin_m)
    if spec.family == LossFamily.CONTRASTIVE:
        return contrastive_tuple(q, p, negs, spec.margin_tau)
    return sare(q, p, negs, spec.kernel, spec.negative_mode)


def tuple_loss_values(spec, dp2, dn2):
    """Loss values only, for many tuples given as squared distances.

    dp2 holds one entry per tuple and dn2 one row of negative distances per
    tuple; row r equals tuple_loss(...).loss for that tuple.
    """
    dp2 = np.asarray(dp2, dtype=np.float64)
    dn2 = np.asarray(dn2, dtype=np.float64)
    if dp2.ndim != 1 or dn2.ndim != 2 or dn2.shape[0] != dp2.shape[0] or dn2.shape[1] < 1:
        raise ContractViolation("need dp2 of shape (R,) and dn2 of shape (R, N>=1), got {} and {}".format(
            dp2.shape, dn2.shape))
    n_neg = dn2.shape[1]
    if spec.family == LossFamily.TRIPLET:
        violation = spec.margin_m + dp2[:, None] - dn2
        return np.sum(np.where(violation > 0.0, violation, 0.0), axis=1) / n_neg
    if spec.family == LossFamily.CONTRASTIVE:
        dist = np.sqrt(dn2)
        hinge = np.where(dist < spec.margin_tau, 0.5 * (spec.margin_tau - dist) ** 2, 0.0)
        return 0.5 * dp2 + np.sum(hinge, axis=1) / n_neg
    s_p = _log_kernel(spec.kernel, dp2)
    s_n = _log_kernel(spec.kernel, dn2)
    if spec.negative_mode == NegativeMode.JOINT:
        return np.logaddexp.reduce(np.hstack([s_p[:, None], s_n]), axis=1) - s_p
    return np.sum(np.logaddexp(0.0, s_n - s_p[:, None]), axis=1) / n_neg

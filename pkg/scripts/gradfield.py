"""
Gradient-magnitude surfaces over (d(q,p), d(q,n)) for single-negative
tuples, and the fixed-d(q,p) slice.

Each value comes from the closed form and is checked against the norm of
the vector gradient from losses on an explicit 2-D construction.
"""
import csv
import io
import math
from dataclasses import dataclass

import colorlog
import numpy as np

import losses
import util
from core import (ContractViolation, DegenerateInputError, GradientMismatch, KernelKind,
                  LossFamily, LossSpec)

logger = colorlog.getLogger(__name__)

WRT_P = 'wrt_p'
WRT_N = 'wrt_n'
AXIS_MAX = 2.0
DEFAULT_RESOLUTION = 201
AGREEMENT_TOL = 1e-9
UNDEFINED = 'undefined'


@dataclass(frozen=True, eq=False)
class SurfaceGrid:
    axis_dp: np.ndarray
    axis_dn: np.ndarray
    values: np.ndarray
    loss: LossSpec
    which: str = WRT_N


@dataclass(frozen=True, eq=False)
class SliceCurve:
    dp: float
    axis_dn: np.ndarray
    values: np.ndarray
    loss: LossSpec


def _sigmoid(x):
    return math.exp(-np.logaddexp(0.0, -x))


def closed_form_magnitude(spec, which, dp, dn):
    """|∂L/∂p| or |∂L/∂n| for one negative; NaN where the gradient is undefined."""
    if which not in (WRT_P, WRT_N):
        raise ContractViolation("which must be {} or {}".format(WRT_P, WRT_N))
    if spec.family == LossFamily.TRIPLET:
        if spec.margin_m + dp * dp - dn * dn <= 0.0:
            return 0.0
        return 2.0 * (dp if which == WRT_P else dn)
    if spec.family == LossFamily.CONTRASTIVE:
        if which == WRT_P:
            return dp
        if dn >= spec.margin_tau:
            return 0.0
        return math.nan if dn == 0.0 else spec.margin_tau - dn
    if spec.kernel == KernelKind.GAUSSIAN:
        miss = _sigmoid(dp * dp - dn * dn)
        return 2.0 * miss * (dp if which == WRT_P else dn)
    if spec.kernel == KernelKind.CAUCHY:
        kp = 1.0 / (1.0 + dp * dp)
        kn = 1.0 / (1.0 + dn * dn)
        miss = kn / (kp + kn)
        return 2.0 * miss * (dp * kp if which == WRT_P else dn * kn)
    if dp == 0.0 or dn == 0.0:
        return math.nan
    return _sigmoid(dp - dn)


def vector_magnitude(spec, which, dp, dn):
    """Same magnitude from losses on q at the origin, p and n at the given distances."""
    q = np.zeros(2)
    p = np.array([dp, 0.0])
    # n opposite p, so both squared distances come out exact and the
    # triplet hinge falls on the same side as in the closed form.
    n = np.array([-dn, 0.0])
    try:
        if spec.family == LossFamily.CONTRASTIVE:
            if which == WRT_P:
                return float(np.linalg.norm(losses.contrastive(q, p, True, spec.margin_tau).d_positive))
            return float(np.linalg.norm(losses.contrastive(q, n, False, spec.margin_tau).d_negatives[0]))
        result = losses.tuple_loss(spec, q, p, n.reshape(1, -1))
    except DegenerateInputError:
        return math.nan
    return float(np.linalg.norm(result.d_positive if which == WRT_P else result.d_negatives[0]))


def _checked(spec, which, dp, dn):
    closed = closed_form_magnitude(spec, which, dp, dn)
    vector = vector_magnitude(spec, which, dp, dn)
    if math.isnan(closed) != math.isnan(vector):
        raise GradientMismatch("{} {}: defined-ness differs at dp={}, dn={}".format(spec.label, which, dp, dn))
    if not math.isnan(closed) and abs(closed - vector) > AGREEMENT_TOL:
        raise GradientMismatch("{} {}: closed form {!r} vs vector {!r} at dp={}, dn={}".format(
            spec.label, which, closed, vector, dp, dn))
    return closed


def axis(resolution=DEFAULT_RESOLUTION):
    if resolution < 2:
        raise ContractViolation("resolution must be at least 2")
    return np.linspace(0.0, AXIS_MAX, resolution)


def grad_surface(spec, which=WRT_N, resolution=DEFAULT_RESOLUTION):
    grid = axis(resolution)
    values = np.array([[_checked(spec, which, dp, dn) for dn in grid] for dp in grid])
    undefined = int(np.count_nonzero(np.isnan(values)))
    if undefined:
        logger.info("{} {}: {} undefined cells".format(spec.label, which, undefined))
    return SurfaceGrid(grid, grid.copy(), values, spec, which)


def grad_slice_fixed_dp(spec, dp=math.sqrt(2.0), dn_grid=None):
    if not 0.0 < dp <= AXIS_MAX:
        raise ContractViolation("dp must lie in (0, 2], got {}".format(dp))
    dn_grid = axis() if dn_grid is None else np.asarray(dn_grid, dtype=np.float64)
    values = np.array([_checked(spec, WRT_N, dp, dn) for dn in dn_grid])
    return SliceCurve(dp, dn_grid, values, spec)


def _cell(value):
    return UNDEFINED if math.isnan(value) else util.format_float(value)


def write_surface_csv(surface, path):
    with io.open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['dp\\dn'] + [util.format_float(v) for v in surface.axis_dn])
        for dp, row in zip(surface.axis_dp, surface.values):
            writer.writerow([util.format_float(dp)] + [_cell(v) for v in row])


def write_slices_csv(curves, path):
    """One column per objective, one row per d(q,n)."""
    with io.open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['dn'] + [c.loss.label for c in curves])
        for i, dn in enumerate(curves[0].axis_dn):
            writer.writerow([util.format_float(dn)] + [_cell(c.values[i]) for c in curves])

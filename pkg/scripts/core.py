"""
Domain types and the distance/normalization primitives shared by every
other module.

All reals are float64. Distances are carried squared; the square root is
taken only where a formula needs the plain distance.
"""
import enum
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from numpy.typing import NDArray

EPSILON_NORM = 1e-12

Vector = NDArray[np.float64]
# Unit norm once it has gone through l2_normalize; the type does not enforce it.
Embedding = NDArray[np.float64]


class SareError(Exception):
    """Base class for every error raised by the toolkit."""


class ContractViolation(SareError, ValueError):
    pass


class DegenerateInputError(SareError, ArithmeticError):
    pass


class NonFiniteError(SareError, FloatingPointError):
    pass


class MiningError(SareError):
    pass


class GradientMismatch(SareError):
    pass


class DatasetParseError(SareError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__("{}:{}: {}".format(path, line, message))


class LossFamily(str, enum.Enum):
    TRIPLET = 'triplet'
    CONTRASTIVE = 'contrastive'
    SARE = 'sare'


class KernelKind(str, enum.Enum):
    GAUSSIAN = 'gaussian'
    CAUCHY = 'cauchy'
    EXPONENTIAL = 'exponential'


class NegativeMode(str, enum.Enum):
    INDEPENDENT = 'independent'
    JOINT = 'joint'


def as_vector(x, name='vector'):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ContractViolation("{} must be one-dimensional, got shape {}".format(name, v.shape))
    if not np.all(np.isfinite(v)):
        raise ContractViolation("{} has non-finite entries".format(name))
    return v


def as_matrix(x, dim, name='matrix'):
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.shape[1] != dim:
        raise ContractViolation("{} must have shape (N, {}), got {}".format(name, dim, m.shape))
    if not np.all(np.isfinite(m)):
        raise ContractViolation("{} has non-finite entries".format(name))
    return m


def l2_distance_squared(a, b):
    a = as_vector(a, 'a')
    b = as_vector(b, 'b')
    if a.shape != b.shape:
        raise ContractViolation("dimension mismatch: {} vs {}".format(a.shape[0], b.shape[0]))
    diff = a - b
    return float(diff @ diff)


def l2_normalize(x) -> Embedding:
    x = as_vector(x, 'x')
    norm = float(np.linalg.norm(x))
    if norm <= EPSILON_NORM:
        raise DegenerateInputError("cannot normalize a vector of norm {:.3g}".format(norm))
    return x / norm


def l2_normalize_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    small = np.flatnonzero(norms[:, 0] <= EPSILON_NORM)
    if small.size:
        raise DegenerateInputError("row {} has norm {:.3g}, cannot normalize".format(
            int(small[0]), float(norms[small[0], 0])))
    return x / norms


def is_normalized(x, tol=1e-9):
    return abs(float(np.linalg.norm(x)) - 1.0) <= tol


@dataclass(frozen=True, eq=False)
class Descriptor:
    """A geo-tagged input descriptor; place_id is -1 when unknown."""
    image_id: int
    place_id: int
    x: float
    y: float
    features: Vector = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'features', as_vector(self.features, 'features'))

    @property
    def position(self):
        return np.array([self.x, self.y])


def geo_distance(a, b):
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True, eq=False)
class TrainingTuple:
    query: Descriptor
    positive: Descriptor
    negatives: Tuple[Descriptor, ...]

    def __post_init__(self):
        object.__setattr__(self, 'negatives', tuple(self.negatives))
        if not self.negatives:
            raise ContractViolation("a training tuple needs at least one negative")
        dim = self.query.features.shape[0]
        for d in (self.positive,) + self.negatives:
            if d.features.shape[0] != dim:
                raise ContractViolation("descriptor {} has dimension {}, expected {}".format(
                    d.image_id, d.features.shape[0], dim))

    def check(self, r_pos, r_neg):
        if geo_distance(self.query, self.positive) > r_pos:
            raise ContractViolation("positive {} lies {:.2f} m from query {}".format(
                self.positive.image_id, geo_distance(self.query, self.positive), self.query.image_id))
        for n in self.negatives:
            if geo_distance(self.query, n) <= r_neg:
                raise ContractViolation("negative {} lies within {} m of query {}".format(
                    n.image_id, r_neg, self.query.image_id))

    def features(self):
        """Row-stacked inputs: query, positive, then negatives."""
        return np.vstack([self.query.features, self.positive.features]
                         + [n.features for n in self.negatives])


@dataclass(frozen=True, eq=False)
class MatchDistribution:
    """Prior and learned match probabilities over [positive, negatives...]."""
    prior_h: Vector
    learned_c: Vector

    @property
    def c_positive(self):
        return float(self.learned_c[0])

    @property
    def c_negatives(self):
        return self.learned_c[1:]


@dataclass(frozen=True, eq=False)
class LossGrad:
    loss: float
    d_query: Vector
    d_positive: Vector
    d_negatives: NDArray[np.float64]

    def translation_residual(self):
        total = self.d_query + self.d_positive + self.d_negatives.sum(axis=0)
        return float(np.max(np.abs(total)))

    def arrays(self):
        return [('query', self.d_query), ('positive', self.d_positive),
                ('negatives', self.d_negatives)]


@dataclass(frozen=True)
class LossSpec:
    family: LossFamily
    kernel: KernelKind = KernelKind.GAUSSIAN
    negative_mode: NegativeMode = NegativeMode.INDEPENDENT
    margin_m: float = 0.1
    margin_tau: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, 'family', LossFamily(self.family))
        object.__setattr__(self, 'kernel', KernelKind(self.kernel))
        object.__setattr__(self, 'negative_mode', NegativeMode(self.negative_mode))
        if not self.margin_m > 0:
            raise ContractViolation("margin_m must be positive, got {}".format(self.margin_m))
        if not self.margin_tau > 0:
            raise ContractViolation("margin_tau must be positive, got {}".format(self.margin_tau))
        if self.family != LossFamily.SARE and (
                self.kernel != KernelKind.GAUSSIAN or self.negative_mode != NegativeMode.INDEPENDENT):
            raise ContractViolation("kernel and negative_mode only apply to the sare family")

    @property
    def label(self):
        if self.family == LossFamily.SARE:
            return 'sare-{}-{}'.format(self.kernel.value, self.negative_mode.value)
        return self.family.value

    @classmethod
    def from_label(cls, label):
        """Parse 'triplet', 'contrastive' or 'sare-<kernel>-<mode>'."""
        parts = label.split('-')
        try:
            if parts[0] == LossFamily.SARE.value and len(parts) == 3:
                return cls(LossFamily.SARE, KernelKind(parts[1]), NegativeMode(parts[2]))
            if len(parts) == 1 and parts[0] != LossFamily.SARE.value:
                return cls(LossFamily(parts[0]))
        except ValueError:
            pass
        raise ContractViolation("unknown loss label {!r}".format(label))


def descriptor_matrix(descriptors: List[Descriptor]):
    return np.vstack([d.features for d in descriptors])


def position_matrix(descriptors: List[Descriptor]):
    return np.array([[d.x, d.y] for d in descriptors], dtype=np.float64).reshape(-1, 2)

"""
The trainable embedding f_θ: an affine map or a one-hidden-layer tanh
perceptron, followed by L2 normalization. Exact backpropagation, SGD with
momentum and weight decay, and the mine/train/validate loop.
"""
import enum
import io
import json
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict

import colorlog
import numpy as np

import evaluate
import losses
import mining
import util
from core import (ContractViolation, LossFamily, LossSpec, NonFiniteError, SareError,
                  as_vector, l2_normalize_rows)

logger = colorlog.getLogger(__name__)


class Architecture(str, enum.Enum):
    LINEAR = 'linear'
    ONE_HIDDEN = 'one_hidden'


@dataclass(frozen=True, eq=False)
class EmbedderModel:
    architecture: Architecture
    input_dim: int
    output_dim: int
    params: Dict[str, np.ndarray]
    hidden_width: int = 0
    seed: int = 0
    epoch: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'architecture', Architecture(self.architecture))
        expected = parameter_shapes(self.architecture, self.input_dim, self.output_dim, self.hidden_width)
        if list(self.params) != list(expected):
            raise ContractViolation("parameters {} do not match {}".format(list(self.params), list(expected)))
        for name, shape in expected.items():
            value = self.params[name]
            if value.shape != shape:
                raise ContractViolation("{} has shape {}, expected {}".format(name, value.shape, shape))
            if not np.all(np.isfinite(value)):
                raise NonFiniteError("{} has non-finite entries".format(name))

    def activations(self, x):
        """Pre-normalization outputs for row-stacked inputs, plus the hidden layer."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ContractViolation("inputs must have shape (R, {}), got {}".format(self.input_dim, x.shape))
        if self.architecture == Architecture.LINEAR:
            return x @ self.params['W'].T + self.params['b'], None
        hidden = np.tanh(x @ self.params['W1'].T + self.params['b1'])
        return hidden @ self.params['W2'].T + self.params['b2'], hidden

    def embed_batch(self, x):
        z, _ = self.activations(x)
        return l2_normalize_rows(z)


def parameter_shapes(architecture, input_dim, output_dim, hidden_width=0):
    if Architecture(architecture) == Architecture.LINEAR:
        return OrderedDict([('W', (output_dim, input_dim)), ('b', (output_dim,))])
    if hidden_width < 1:
        raise ContractViolation("one_hidden needs hidden_width >= 1")
    return OrderedDict([('W1', (hidden_width, input_dim)), ('b1', (hidden_width,)),
                        ('W2', (output_dim, hidden_width)), ('b2', (output_dim,))])


def init_model(input_dim, output_dim, architecture=Architecture.LINEAR, hidden_width=0, seed=0):
    """Uniform in ±1/√fan_in for weights and biases of each layer."""
    if input_dim < 1 or output_dim < 2:
        raise ContractViolation("need input_dim >= 1 and output_dim >= 2")
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, shape in parameter_shapes(architecture, input_dim, output_dim, hidden_width).items():
        fan_in = input_dim if name in ('W', 'b', 'W1', 'b1') else hidden_width
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return EmbedderModel(Architecture(architecture), input_dim, output_dim, params,
                         hidden_width=hidden_width, seed=seed)


def embed(model, descriptor):
    x = as_vector(descriptor, 'descriptor')
    return model.embed_batch(x.reshape(1, -1))[0]


def backprop(model, training_tuple, loss_grads):
    """Parameter gradients of one tuple's loss, through the normalization layer."""
    x = training_tuple.features()
    upstream = np.vstack([loss_grads.d_query, loss_grads.d_positive, loss_grads.d_negatives])
    if upstream.shape != (x.shape[0], model.output_dim):
        raise ContractViolation("upstream gradients have shape {}, expected {}".format(
            upstream.shape, (x.shape[0], model.output_dim)))
    z, hidden = model.activations(x)
    u = l2_normalize_rows(z)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    # (I − u·uᵀ)·g / ‖z‖ row by row
    dz = (upstream - u * np.sum(u * upstream, axis=1, keepdims=True)) / norms
    if model.architecture == Architecture.LINEAR:
        return OrderedDict([('W', dz.T @ x), ('b', dz.sum(axis=0))])
    dhidden = (dz @ model.params['W2']) * (1.0 - hidden ** 2)
    return OrderedDict([('W1', dhidden.T @ x), ('b1', dhidden.sum(axis=0)),
                        ('W2', dz.T @ hidden), ('b2', dz.sum(axis=0))])


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec = field(default_factory=lambda: LossSpec(LossFamily.SARE))
    lr0: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.001
    lr_halving_period: int = 5
    batch_tuples: int = 4
    negatives_per_tuple: int = 10
    max_epochs: int = 30
    seed: int = 0
    r_pos: float = 10.0
    r_neg: float = 25.0
    remine_every: int = 1
    validation_n: int = 5
    threshold_m: float = evaluate.DEFAULT_THRESHOLD_M

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ContractViolation("lr0 must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractViolation("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ContractViolation("weight_decay must be nonnegative")
        if self.lr_halving_period < 1 or self.batch_tuples < 1 or self.remine_every < 1:
            raise ContractViolation("lr_halving_period, batch_tuples and remine_every must be >= 1")
        if self.max_epochs < 0:
            raise ContractViolation("max_epochs must be nonnegative")
        self.mining_config()

    def mining_config(self):
        return mining.MiningConfig(self.r_pos, self.r_neg, self.negatives_per_tuple, self.remine_every)


@dataclass(frozen=True, eq=False)
class OptimizerState:
    velocity: Dict[str, np.ndarray]
    epoch: int = 0
    learning_rate: float = 0.001


def learning_rate(config, epoch):
    return config.lr0 / 2 ** (epoch // config.lr_halving_period)


def init_optimizer(model, config):
    velocity = OrderedDict((name, np.zeros_like(value)) for name, value in model.params.items())
    return OptimizerState(velocity, 0, learning_rate(config, 0))


def sgd_step(model, grads, state, config):
    params = OrderedDict()
    velocity = OrderedDict()
    for name, value in model.params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != value.shape or state.velocity[name].shape != value.shape:
            raise ContractViolation("{}: gradient {} / buffer {} do not match parameter {}".format(
                name, grad.shape, state.velocity[name].shape, value.shape))
        bad = np.count_nonzero(~np.isfinite(grad))
        if bad:
            raise NonFiniteError("{} of {} entries of the {} gradient are not finite (epoch {}, lr {})".format(
                bad, grad.size, name, state.epoch, state.learning_rate))
        # Biases are not decayed.
        decay = config.weight_decay * value if name.startswith('W') else 0.0
        v = config.momentum * state.velocity[name] - state.learning_rate * (grad + decay)
        velocity[name] = v
        params[name] = value + v
    return replace(model, params=params), replace(state, velocity=velocity)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    learning_rate: float
    train_loss: float
    val_recall_at_5: float
    tuples: int


def validation_recall(model, dataset, config):
    curve = evaluate.recall_at_n(
        model.embed_batch(dataset.features('database')), dataset.positions('database'),
        model.embed_batch(dataset.features('queries_val')), dataset.positions('queries_val'),
        [config.validation_n], config.threshold_m, dataset.ids('database'))
    return curve.at(config.validation_n)


def train(model, dataset, config):
    """Train and return the epoch snapshot with the best validation recall."""
    if not dataset.queries_train or not dataset.queries_val:
        raise ContractViolation("training needs nonempty train and validation query splits")
    rng = np.random.default_rng(config.seed)
    state = init_optimizer(model, config)
    mining_cfg = config.mining_config()
    history = []
    best, best_recall = model, None
    tuples = []
    for epoch in range(config.max_epochs):
        state = replace(state, epoch=epoch, learning_rate=learning_rate(config, epoch))
        if epoch % config.remine_every == 0:
            tuples = mining.mine_tuples(dataset, model, mining_cfg)
        order = rng.permutation(len(tuples))
        total = 0.0
        for start in range(0, len(order), config.batch_tuples):
            batch = order[start:start + config.batch_tuples]
            grads = OrderedDict((name, np.zeros_like(value)) for name, value in model.params.items())
            for i in batch:
                t = tuples[i]
                emb = model.embed_batch(t.features())
                result = losses.tuple_loss(config.loss, emb[0], emb[1], emb[2:])
                total += result.loss
                for name, g in backprop(model, t, result).items():
                    grads[name] += g
            for name in grads:
                grads[name] /= len(batch)
            model, state = sgd_step(model, grads, state, config)
        model = replace(model, epoch=epoch + 1)
        recall = validation_recall(model, dataset, config)
        record = EpochRecord(epoch, state.learning_rate, total / len(tuples), recall, len(tuples))
        history.append(record)
        logger.info("epoch {}: lr {:g}, loss {:.6f}, val recall@{} {:.4f}".format(
            epoch, record.learning_rate, record.train_loss, config.validation_n, recall))
        if best_recall is None or recall > best_recall:
            best, best_recall = model, recall
    if history:
        logger.info("best validation recall@{} {:.4f} after epoch {}".format(
            config.validation_n, best_recall, best.epoch - 1))
    return best, history


CHECKPOINT_KEYS = ('architecture', 'input_dim', 'output_dim', 'hidden_width', 'seed', 'epoch', 'parameters')


def save_checkpoint(model, path):
    header = {
        'architecture': model.architecture.value,
        'input_dim': model.input_dim,
        'output_dim': model.output_dim,
        'hidden_width': model.hidden_width,
        'seed': model.seed,
        'epoch': model.epoch,
        'parameters': [[name, list(value.shape)] for name, value in model.params.items()],
    }
    with io.open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(header, sort_keys=True, separators=(',', ':')))
        f.write('\n')
        for value in model.params.values():
            for v in value.reshape(-1):
                f.write(util.format_float(v))
                f.write('\n')


def load_checkpoint(path):
    with io.open(path, encoding='utf-8') as f:
        lines = f.read().splitlines()
    if not lines:
        raise SareError("{} is empty".format(path))
    header = json.loads(lines[0], object_pairs_hook=util.dict_raise_on_duplicates)
    if not isinstance(header, dict):
        raise SareError("{}: header must be a JSON object".format(path))
    missing = [key for key in CHECKPOINT_KEYS if key not in header]
    if missing:
        raise SareError("{}: header lacks {}".format(path, ', '.join(missing)))
    values = lines[1:]
    params = OrderedDict()
    offset = 0
    try:
        layout = [(str(name), [int(s) for s in shape]) for name, shape in header['parameters']]
    except (TypeError, ValueError):
        raise SareError("{}: parameters must be [name, shape] pairs".format(path))
    for name, shape in layout:
        size = int(np.prod(shape))
        chunk = values[offset:offset + size]
        if len(chunk) != size:
            raise SareError("{}: {} needs {} values, found {}".format(path, name, size, len(chunk)))
        params[name] = np.array([float(v) for v in chunk]).reshape(shape)
        offset += size
    if offset != len(values):
        raise SareError("{}: {} trailing values".format(path, len(values) - offset))
    return EmbedderModel(Architecture(header['architecture']), header['input_dim'],
                         header['output_dim'], params, hidden_width=header['hidden_width'],
                         seed=header['seed'], epoch=header['epoch'])

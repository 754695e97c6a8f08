#!/usr/bin/env python

"""
usage: sare.py [-h] [-v] [--config FILE] {synth,mine,train,eval,gradcheck,gradfield,compare} ...

Metric-embedding toolkit for place recognition: SARE, triplet ranking and
contrastive objectives with exact gradients, trained and evaluated on
synthetic geo-tagged place data.

Adding -v increases log verbosity for each occurence:

    sare.py train ... only shows errors
    sare.py -v train ... shows warnings too
    sare.py -vv train ... shows progress per epoch
    etc.

Suggested way of running:

python scripts/sare.py -vv synth --out ds/
python scripts/sare.py -vv train --dataset ds/ --loss sare --kernel gaussian --mode joint --out run/
python scripts/sare.py eval --dataset ds/ --model run/model.ckpt --pca-dims 16,8 --out run/eval/

Every subcommand also takes --config FILE (JSON or YAML). Keys are the
long flag names with dashes or underscores; explicit flags win over the
file, the file wins over the defaults. See schema.json.
"""

import csv
import io
import json
import math
import os
import sys
from argparse import SUPPRESS, ArgumentParser

import colorlog
from jsonschema import Draft4Validator, ValidationError
import yaml

import dataset as datasets
import embedder
import evaluate
import gradcheck
import gradfield
import mining
import util
from core import ContractViolation, LossFamily, LossSpec, SareError

logger = colorlog.getLogger('sare')

SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, 'schema.json')

MODEL_DEFAULTS = {
    'arch': 'linear',
    'hidden': 0,
    'd_out': 32,
    'seed': 0,
}

LOSS_DEFAULTS = {
    'loss': 'sare',
    'kernel': 'gaussian',
    'mode': 'independent',
    'margin_m': 0.1,
    'margin_tau': 0.7,
}

TRAIN_DEFAULTS = dict(MODEL_DEFAULTS, **{
    'lr0': 0.001,
    'momentum': 0.9,
    'weight_decay': 0.001,
    'lr_halving_period': 5,
    'batch_tuples': 4,
    'n_neg': 10,
    'max_epochs': 30,
    'r_pos': 10.0,
    'r_neg': 25.0,
    'remine_every': 1,
})

DEFAULTS = {
    'synth': {
        'n_places': 100,
        'views': 10,
        'queries_per_place': 3,
        'd_in': 64,
        'noise': 0.1,
        'extent': 1000.0,
        'seed': 7,
    },
    'mine': dict(MODEL_DEFAULTS, **{
        'model': None,
        'split': 'queries_train',
        'r_pos': 10.0,
        'r_neg': 25.0,
        'n_neg': 10,
    }),
    'train': dict(TRAIN_DEFAULTS, init_model=None, **LOSS_DEFAULTS),
    'eval': {
        'split': 'queries_test',
        'n_values': [1, 5, 10, 20],
        'threshold': 25.0,
        'top_k': 25,
        'pca_dims': [],
    },
    'gradcheck': dict(LOSS_DEFAULTS, **{
        'dim': 32,
        'negatives': [1, 5, 10],
        'trials': 100,
        'eps': gradcheck.DEFAULT_EPS,
        'threshold': 1e-6,
        'seed': 0,
        'out': None,
    }),
    'gradfield': dict(LOSS_DEFAULTS, **{
        'which': gradfield.WRT_N,
        'resolution': gradfield.DEFAULT_RESOLUTION,
        'slice': False,
        'dp': math.sqrt(2.0),
    }),
    'compare': dict(TRAIN_DEFAULTS, **{
        'losses': ['triplet', 'sare-gaussian-independent', 'sare-gaussian-joint'],
        'margin_m': 0.1,
        'margin_tau': 0.7,
        'n_values': [1, 5, 10],
        'threshold': 25.0,
    }),
}


def int_list(text):
    return [int(v) for v in text.split(',') if v.strip()]


def add_loss_flags(parser):
    parser.add_argument('--loss', choices=[f.value for f in LossFamily] + ['all'],
                        help='objective family (all: every objective, gradfield --slice only)')
    parser.add_argument('--kernel', choices=['gaussian', 'cauchy', 'exponential'], help='SARE kernel')
    parser.add_argument('--mode', choices=['independent', 'joint'], help='SARE negative handling')
    parser.add_argument('--margin-m', type=float, help='triplet margin m')
    parser.add_argument('--margin-tau', type=float, help='contrastive margin tau')


def add_model_flags(parser):
    parser.add_argument('--arch', choices=['linear', 'one_hidden'], help='embedder architecture')
    parser.add_argument('--hidden', type=int, help='hidden width for one_hidden')
    parser.add_argument('--d-out', type=int, help='embedding dimension D')
    parser.add_argument('--seed', type=int, help='seed for every random draw')


def add_train_flags(parser):
    add_model_flags(parser)
    parser.add_argument('--lr0', type=float, help='initial learning rate')
    parser.add_argument('--momentum', type=float)
    parser.add_argument('--weight-decay', type=float)
    parser.add_argument('--lr-halving-period', type=int, help='epochs between learning rate halvings')
    parser.add_argument('--batch-tuples', type=int)
    parser.add_argument('--n-neg', type=int, help='negatives per tuple')
    parser.add_argument('--max-epochs', type=int)
    parser.add_argument('--r-pos', type=float, help='potential positive radius in meters')
    parser.add_argument('--r-neg', type=float, help='minimum negative distance in meters')
    parser.add_argument('--remine-every', type=int, help='epochs between mining passes')


def build_parser():
    parser = ArgumentParser(description='SARE metric-embedding toolkit')
    parser.add_argument("-v", "--verbose", dest="verbose_count",
                        action="count", default=0,
                        help="increases log verbosity for each occurence.")
    sub = parser.add_subparsers(dest='command', metavar='command')

    p = sub.add_parser('synth', argument_default=SUPPRESS, help='generate a synthetic place dataset')
    p.add_argument('--n-places', type=int)
    p.add_argument('--views', type=int, help='database views per place')
    p.add_argument('--queries-per-place', type=int)
    p.add_argument('--d-in', type=int, help='descriptor dimension')
    p.add_argument('--noise', type=float, help='per-coordinate view noise sigma')
    p.add_argument('--extent', type=float, help='map side in meters')
    p.add_argument('--seed', type=int)
    p.add_argument('--out', help='dataset directory')

    p = sub.add_parser('mine', argument_default=SUPPRESS, help='dump mined tuples as CSV')
    p.add_argument('--dataset', help='dataset directory')
    p.add_argument('--model', help='checkpoint; a freshly initialized model when absent')
    p.add_argument('--split', choices=list(datasets.SPLITS[1:]))
    p.add_argument('--r-pos', type=float)
    p.add_argument('--r-neg', type=float)
    p.add_argument('--n-neg', type=int)
    add_model_flags(p)
    p.add_argument('--out', help='CSV file')

    p = sub.add_parser('train', argument_default=SUPPRESS, help='train an embedder')
    p.add_argument('--dataset', help='dataset directory')
    p.add_argument('--init-model', help='start from this checkpoint')
    add_loss_flags(p)
    add_train_flags(p)
    p.add_argument('--out', help='output directory')

    p = sub.add_parser('eval', argument_default=SUPPRESS, help='recall@N, mAP and PCA sweep')
    p.add_argument('--dataset', help='dataset directory')
    p.add_argument('--model', help='checkpoint')
    p.add_argument('--split', choices=list(datasets.SPLITS[1:]))
    p.add_argument('--n-values', type=int_list, help='comma separated, e.g. 1,5,10')
    p.add_argument('--threshold', type=float, help='correct localization radius in meters')
    p.add_argument('--top-k', type=int, help='ranked ids per query in topk.csv')
    p.add_argument('--pca-dims', type=int_list, help='comma separated PCA output dimensions')
    p.add_argument('--out', help='output directory')

    p = sub.add_parser('gradcheck', argument_default=SUPPRESS, help='finite-difference gradient check')
    add_loss_flags(p)
    p.add_argument('--dim', type=int)
    p.add_argument('--negatives', type=int_list, help='negative counts to cycle through, e.g. 1,5,10')
    p.add_argument('--trials', type=int)
    p.add_argument('--eps', type=float)
    p.add_argument('--threshold', type=float, help='largest acceptable relative error')
    p.add_argument('--seed', type=int)
    p.add_argument('--out', help='also write the report here')

    p = sub.add_parser('gradfield', argument_default=SUPPRESS, help='gradient magnitude grids as CSV')
    add_loss_flags(p)
    p.add_argument('--which', choices=[gradfield.WRT_P, gradfield.WRT_N])
    p.add_argument('--resolution', type=int)
    p.add_argument('--slice', action='store_true', help='fixed d(q,p) slice instead of the surface')
    p.add_argument('--dp', type=float, help='d(q,p) for --slice')
    p.add_argument('--out', help='CSV file')

    p = sub.add_parser('compare', argument_default=SUPPRESS, help='train several objectives and tabulate')
    p.add_argument('--dataset', help='dataset directory')
    p.add_argument('--losses', type=lambda s: [v for v in s.split(',') if v],
                   help='comma separated labels: triplet, contrastive, sare-<kernel>-<mode>')
    p.add_argument('--margin-m', type=float)
    p.add_argument('--margin-tau', type=float)
    add_train_flags(p)
    p.add_argument('--n-values', type=int_list)
    p.add_argument('--threshold', type=float)
    p.add_argument('--out', help='output directory')

    for p in sub.choices.values():
        p.add_argument('--config', help='JSON or YAML file overriding the defaults')
    return parser


def resolve_config(command, flags):
    """Defaults, then the config file, then explicit flags; validated against schema.json."""
    config = dict(DEFAULTS[command])
    if 'config' in flags:
        config.update(util.load_config_file(flags.pop('config')))
    config.update(flags)
    with io.open(SCHEMA_PATH, encoding='utf-8') as f:
        schema = json.load(f)
    # Local $refs inside the definition resolve against the shared definitions.
    definition = dict(schema['definitions'][command], definitions=schema['definitions'])
    Draft4Validator(definition).validate(config)
    return config


def loss_spec(config):
    if config['loss'] == LossFamily.SARE.value:
        return LossSpec(LossFamily.SARE, config['kernel'], config['mode'],
                        config['margin_m'], config['margin_tau'])
    return LossSpec(config['loss'], margin_m=config['margin_m'], margin_tau=config['margin_tau'])


def train_config(config, loss):
    return embedder.TrainConfig(
        loss=loss, lr0=config['lr0'], momentum=config['momentum'],
        weight_decay=config['weight_decay'], lr_halving_period=config['lr_halving_period'],
        batch_tuples=config['batch_tuples'], negatives_per_tuple=config['n_neg'],
        max_epochs=config['max_epochs'], seed=config['seed'], r_pos=config['r_pos'],
        r_neg=config['r_neg'], remine_every=config['remine_every'])


def fresh_model(config, ds):
    return embedder.init_model(ds.input_dim, config['d_out'], config['arch'], config['hidden'], config['seed'])


def write_history(history, path):
    with io.open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['epoch', 'learning_rate', 'train_loss', 'val_recall_at_5', 'tuples'])
        for r in history:
            writer.writerow([r.epoch, util.format_float(r.learning_rate), util.format_float(r.train_loss),
                             util.format_float(r.val_recall_at_5), r.tuples])


def split_metrics(model, ds, split, n_values, threshold, top_k=25):
    return evaluate.evaluate_embeddings(
        model.embed_batch(ds.features('database')), ds.positions('database'), ds.place_ids('database'),
        model.embed_batch(ds.features(split)), ds.positions(split), ds.place_ids(split),
        n_values, threshold, ds.ids('database'), top_k)


def cmd_synth(config):
    ds = datasets.synth_generate(config['n_places'], config['views'], config['queries_per_place'],
                                 config['d_in'], config['noise'], config['extent'], config['seed'])
    datasets.save_dataset(ds, config['out'])
    return config['out']


def cmd_mine(config):
    ds = datasets.load_dataset(config['dataset'])
    model = embedder.load_checkpoint(config['model']) if config['model'] else fresh_model(config, ds)
    cfg = mining.MiningConfig(config['r_pos'], config['r_neg'], config['n_neg'])
    tuples = mining.mine_tuples(ds, model, cfg, config['split'])
    util.ensure_dir(os.path.dirname(config['out']))
    mining.write_tuples_csv(tuples, config['out'])
    logger.info("wrote {} tuples to {}".format(len(tuples), config['out']))
    return os.path.dirname(config['out'])


def cmd_train(config):
    ds = datasets.load_dataset(config['dataset'])
    model = (embedder.load_checkpoint(config['init_model']) if config['init_model']
             else fresh_model(config, ds))
    best, history = embedder.train(model, ds, train_config(config, loss_spec(config)))
    util.ensure_dir(config['out'])
    embedder.save_checkpoint(best, os.path.join(config['out'], 'model.ckpt'))
    write_history(history, os.path.join(config['out'], 'history.csv'))
    logger.info("wrote model and history to {}".format(config['out']))
    return config['out']


def cmd_eval(config):
    ds = datasets.load_dataset(config['dataset'])
    model = embedder.load_checkpoint(config['model'])
    split = config['split']
    metrics, top = split_metrics(model, ds, split, config['n_values'], config['threshold'], config['top_k'])
    if config['pca_dims']:
        metrics['pca_sweep'] = evaluate.pca_sweep(
            model.embed_batch(ds.features('database')), ds.positions('database'), ds.place_ids('database'),
            model.embed_batch(ds.features(split)), ds.positions(split), ds.place_ids(split),
            config['pca_dims'], config['n_values'], config['threshold'], ds.ids('database'))
    util.ensure_dir(config['out'])
    util.write_json(metrics, os.path.join(config['out'], 'metrics.json'))
    db_ids = ds.ids('database')
    with io.open(os.path.join(config['out'], 'topk.csv'), 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['query_id'] + ['rank_{}'.format(i + 1) for i in range(top.shape[1])])
        for query_id, row in zip(ds.ids(split), top):
            writer.writerow([query_id] + [db_ids[i] for i in row])
    print(util.dumps(metrics))
    return config['out']


def cmd_gradcheck(config):
    report = gradcheck.run_trials(loss_spec(config), config['dim'], config['negatives'],
                                  config['trials'], config['eps'], config['seed'])
    result = dict(report.as_dict(), loss=loss_spec(config).label,
                  threshold=config['threshold'], passed=report.max_relative_error <= config['threshold'])
    if config['out']:
        util.ensure_dir(os.path.dirname(config['out']))
        util.write_json(result, config['out'])
    print(util.dumps(result))
    return (os.path.dirname(config['out']) if config['out'] else '.'), result['passed']


def cmd_gradfield(config):
    if config['loss'] == 'all':
        if not config['slice']:
            raise ContractViolation("--loss all is only available with --slice")
        specs = [LossSpec(LossFamily.TRIPLET, margin_m=config['margin_m']),
                 LossSpec(LossFamily.CONTRASTIVE, margin_tau=config['margin_tau'])]
        specs += [LossSpec(LossFamily.SARE, kernel) for kernel in ('gaussian', 'cauchy', 'exponential')]
    else:
        specs = [loss_spec(config)]
    util.ensure_dir(os.path.dirname(config['out']))
    if config['slice']:
        curves = [gradfield.grad_slice_fixed_dp(spec, config['dp'],
                                                gradfield.axis(config['resolution'])) for spec in specs]
        gradfield.write_slices_csv(curves, config['out'])
    else:
        surface = gradfield.grad_surface(specs[0], config['which'], config['resolution'])
        gradfield.write_surface_csv(surface, config['out'])
    logger.info("wrote {}".format(config['out']))
    return os.path.dirname(config['out'])


def cmd_compare(config):
    ds = datasets.load_dataset(config['dataset'])
    initial = fresh_model(config, ds)
    n_values = config['n_values']
    untrained, _ = split_metrics(initial, ds, 'queries_test', n_values, config['threshold'])
    table = {}
    for label in config['losses']:
        spec = LossSpec.from_label(label)
        spec = LossSpec(spec.family, spec.kernel, spec.negative_mode, config['margin_m'], config['margin_tau'])
        best, history = embedder.train(initial, ds, train_config(config, spec))
        metrics, _ = split_metrics(best, ds, 'queries_test', n_values, config['threshold'])
        metrics['best_epoch'] = best.epoch - 1 if history else None
        table[label] = metrics
        logger.info("{}: test recall@{} {:.4f}".format(label, n_values[0], metrics['recall'][str(n_values[0])]))
    util.ensure_dir(config['out'])
    util.write_json({'untrained': untrained, 'objectives': table}, os.path.join(config['out'], 'comparison.json'))
    with io.open(os.path.join(config['out'], 'comparison.csv'), 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['objective'] + ['recall@{}'.format(n) for n in n_values] + ['map'])
        for label, metrics in [('untrained', untrained)] + list(table.items()):
            writer.writerow([label] + [util.format_float(metrics['recall'][str(n)]) for n in n_values]
                            + [util.format_float(metrics['map'])])
    return config['out']


COMMANDS = {
    'synth': cmd_synth,
    'mine': cmd_mine,
    'train': cmd_train,
    'eval': cmd_eval,
    'gradcheck': cmd_gradcheck,
    'gradfield': cmd_gradfield,
    'compare': cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        arguments = parser.parse_args(argv)
    except SystemExit as e:
        return e.code
    if arguments.command is None:
        parser.print_usage(sys.stderr)
        return 2
    util.setup_logging(arguments.verbose_count)
    flags = {k: v for k, v in vars(arguments).items() if k not in ('command', 'verbose_count')}
    try:
        config = resolve_config(arguments.command, flags)
        outcome = COMMANDS[arguments.command](config)
        passed = True
        if isinstance(outcome, tuple):
            outcome, passed = outcome
        util.write_run_meta(outcome or '.', arguments.command, config)
    except (SareError, ValidationError, ValueError, yaml.YAMLError, OSError) as e:
        logger.exception("{} failed: {}".format(arguments.command, e))
        print(json.dumps({'error': type(e).__name__, 'message': str(e)}, sort_keys=True))
        return 1
    return 0 if passed else 1


if __name__ == '__main__':
    raise SystemExit(main())

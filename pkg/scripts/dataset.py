"""
Synthetic geo-tagged place datasets and their CSV + JSON sidecar files.

A dataset directory holds one CSV per split, each with the header
``image_id,place_id,x,y,f0..f{D-1}``, plus ``meta.json``.
"""
import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Tuple

import colorlog
import numpy as np

import util
from core import (ContractViolation, DatasetParseError, Descriptor, descriptor_matrix,
                  l2_normalize, position_matrix)

logger = colorlog.getLogger(__name__)

SPLITS = ('database', 'queries_train', 'queries_val', 'queries_test')
MIN_PLACE_SEPARATION_M = 60.0
VIEW_JITTER_M = 5.0
MAX_DRAWS_PER_PLACE = 1000


@dataclass(frozen=True)
class PlaceDataset:
    database: Tuple[Descriptor, ...]
    queries_train: Tuple[Descriptor, ...]
    queries_val: Tuple[Descriptor, ...]
    queries_test: Tuple[Descriptor, ...]
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        for name in SPLITS:
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def split(self, name):
        if name not in SPLITS:
            raise ContractViolation("unknown split {!r}".format(name))
        return getattr(self, name)

    @property
    def input_dim(self):
        return self.database[0].features.shape[0]

    def features(self, name):
        return descriptor_matrix(self.split(name))

    def positions(self, name):
        return position_matrix(self.split(name))

    def ids(self, name):
        return np.array([d.image_id for d in self.split(name)], dtype=np.int64)

    def place_ids(self, name):
        return np.array([d.place_id for d in self.split(name)], dtype=np.int64)

    def validate(self):
        if not self.database:
            raise ContractViolation("dataset has an empty database")
        dim = self.input_dim
        seen = set()
        for name in SPLITS:
            for d in self.split(name):
                if d.features.shape[0] != dim:
                    raise ContractViolation("image {} has dimension {}, expected {}".format(
                        d.image_id, d.features.shape[0], dim))
                if d.image_id in seen:
                    raise ContractViolation("image id {} appears twice".format(d.image_id))
                seen.add(d.image_id)
        db_places = {d.place_id for d in self.database}
        for name in SPLITS[1:]:
            for d in self.split(name):
                if d.place_id != -1 and d.place_id not in db_places:
                    raise ContractViolation("query {} has place {} with no database view".format(
                        d.image_id, d.place_id))
        return self


def _place_centers(rng, n_places, extent):
    centers = []
    for place in range(n_places):
        for _ in range(MAX_DRAWS_PER_PLACE):
            c = rng.uniform(0.0, extent, size=2)
            if all(math.hypot(c[0] - o[0], c[1] - o[1]) >= MIN_PLACE_SEPARATION_M for o in centers):
                centers.append(c)
                break
        else:
            raise ContractViolation(
                "could not place {} places {} m apart in a {} m square after {} draws for place {}; "
                "use a larger map extent".format(n_places, MIN_PLACE_SEPARATION_M, extent,
                                                MAX_DRAWS_PER_PLACE, place))
    return np.array(centers)


def _jitter(rng, center):
    r = VIEW_JITTER_M * math.sqrt(rng.uniform())
    a = rng.uniform(0.0, 2.0 * math.pi)
    return float(center[0] + r * math.cos(a)), float(center[1] + r * math.sin(a))


def synth_generate(n_places, views_per_place, queries_per_place, d_in,
                   view_noise_sigma, map_extent_m, seed):
    if n_places < 2:
        raise ContractViolation("need at least 2 places, got {}".format(n_places))
    if views_per_place < 1 or queries_per_place < 0:
        raise ContractViolation("views_per_place must be >= 1 and queries_per_place >= 0")
    if d_in < 2 or view_noise_sigma < 0 or map_extent_m <= 0:
        raise ContractViolation("d_in >= 2, view_noise_sigma >= 0 and map_extent_m > 0 are required")
    n_train = int(round(0.7 * n_places))
    n_val = int(round(0.15 * n_places))
    if queries_per_place > 0 and (n_val < 1 or n_places - n_train - n_val < 1):
        raise ContractViolation(
            "{} places leave the validation or test split without queries; use at least 6".format(n_places))
    rng = np.random.default_rng(seed)
    centers = _place_centers(rng, n_places, map_extent_m)
    latents = np.vstack([l2_normalize(rng.standard_normal(d_in)) for _ in range(n_places)])

    def draw(place, image_id):
        features = latents[place] + view_noise_sigma * rng.standard_normal(d_in)
        x, y = _jitter(rng, centers[place])
        return Descriptor(image_id, place, x, y, features)

    next_id = 0
    database = []
    for place in range(n_places):
        for _ in range(views_per_place):
            database.append(draw(place, next_id))
            next_id += 1
    queries = {}
    for place in range(n_places):
        queries[place] = []
        for _ in range(queries_per_place):
            queries[place].append(draw(place, next_id))
            next_id += 1

    order = rng.permutation(n_places)
    split_places = {
        'queries_train': sorted(order[:n_train]),
        'queries_val': sorted(order[n_train:n_train + n_val]),
        'queries_test': sorted(order[n_train + n_val:]),
    }
    splits = {name: [d for place in places for d in queries[int(place)]]
              for name, places in split_places.items()}
    meta = {
        'n_places': n_places,
        'views_per_place': views_per_place,
        'queries_per_place': queries_per_place,
        'd_in': d_in,
        'view_noise_sigma': view_noise_sigma,
        'map_extent_m': map_extent_m,
        'seed': seed,
        'min_place_separation_m': MIN_PLACE_SEPARATION_M,
        'view_jitter_m': VIEW_JITTER_M,
    }
    dataset = PlaceDataset(database, splits['queries_train'], splits['queries_val'],
                           splits['queries_test'], meta)
    logger.info("generated {} database views and {}/{}/{} queries".format(
        len(database), len(dataset.queries_train), len(dataset.queries_val), len(dataset.queries_test)))
    return dataset.validate()


def _header(dim):
    return ['image_id', 'place_id', 'x', 'y'] + ['f{}'.format(i) for i in range(dim)]


def _write_split(descriptors, path, dim):
    with io.open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(_header(dim))
        for d in descriptors:
            writer.writerow([str(d.image_id), str(d.place_id), util.format_float(d.x),
                             util.format_float(d.y)] + [util.format_float(v) for v in d.features])


def save_dataset(dataset, path):
    util.ensure_dir(path)
    dim = dataset.input_dim
    for name in SPLITS:
        _write_split(dataset.split(name), os.path.join(path, name + '.csv'), dim)
    util.write_json(dataset.meta, os.path.join(path, 'meta.json'))
    logger.info("wrote dataset to {}".format(path))


def _parse_float(text, filename, line, column):
    try:
        value = float(text)
    except ValueError:
        raise DatasetParseError(filename, line, "column {} is not a number: {!r}".format(column, text))
    if not math.isfinite(value):
        raise DatasetParseError(filename, line, "column {} is not finite".format(column))
    return value


def _parse_int(text, filename, line, column):
    try:
        return int(text)
    except ValueError:
        raise DatasetParseError(filename, line, "column {} is not an integer: {!r}".format(column, text))


def _read_split(filename, seen_ids, dim):
    descriptors = []
    with io.open(filename, encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError(filename, 1, "missing header")
        if header[:4] != ['image_id', 'place_id', 'x', 'y'] or len(header) < 6:
            raise DatasetParseError(filename, 1, "bad header {}".format(header[:5]))
        file_dim = len(header) - 4
        if header != _header(file_dim):
            raise DatasetParseError(filename, 1, "feature columns must be f0..f{}".format(file_dim - 1))
        if dim is not None and file_dim != dim:
            raise DatasetParseError(filename, 1, "dimension {} does not match {}".format(file_dim, dim))
        for row in reader:
            line = reader.line_num
            if len(row) != len(header):
                raise DatasetParseError(filename, line, "expected {} columns, got {}".format(
                    len(header), len(row)))
            image_id = _parse_int(row[0], filename, line, 'image_id')
            if image_id in seen_ids:
                raise DatasetParseError(filename, line, "duplicate image_id {}".format(image_id))
            seen_ids.add(image_id)
            place_id = _parse_int(row[1], filename, line, 'place_id')
            x = _parse_float(row[2], filename, line, 'x')
            y = _parse_float(row[3], filename, line, 'y')
            features = [_parse_float(v, filename, line, header[4 + i]) for i, v in enumerate(row[4:])]
            descriptors.append(Descriptor(image_id, place_id, x, y, np.array(features)))
    return descriptors, file_dim


def load_dataset(path):
    seen = set()
    dim = None
    splits = {}
    for name in SPLITS:
        splits[name], dim = _read_split(os.path.join(path, name + '.csv'), seen, dim)
    with io.open(os.path.join(path, 'meta.json'), encoding='utf-8') as f:
        meta = json.load(f, object_pairs_hook=util.dict_raise_on_duplicates)
    dataset = PlaceDataset(meta=meta, **splits)
    return dataset.validate()

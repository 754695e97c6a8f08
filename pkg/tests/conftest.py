import os
import sys

import numpy as np
import pytest

# The scripts import each other as siblings.
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, 'scripts'))

from core import Descriptor, l2_normalize  # noqa: E402
from dataset import PlaceDataset  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_unit(rng, dim):
    return l2_normalize(rng.standard_normal(dim))


def toy_places(features_by_place, views_per_place=2, queries_per_place=1, spacing=100.0):
    """Places on a line `spacing` metres apart; every view of a place shares its descriptor.

    Queries of place i land in train, validation and test in turn.
    """
    database = []
    splits = {'queries_train': [], 'queries_val': [], 'queries_test': []}
    names = list(splits)
    next_id = 0
    for place, features in enumerate(features_by_place):
        for v in range(views_per_place):
            database.append(Descriptor(next_id, place, place * spacing + v, 0.0, features))
            next_id += 1
    for place, features in enumerate(features_by_place):
        for _ in range(queries_per_place):
            splits[names[place % 3]].append(Descriptor(next_id, place, place * spacing, 1.0, features))
            next_id += 1
    return PlaceDataset(database, meta={'toy': True}, **splits).validate()

import itertools
import math

import numpy as np
import pytest

import dataset as datasets
from core import ContractViolation, DatasetParseError

HEADER = 'image_id,place_id,x,y,f0,f1\n'


def write_minimal(path, database_rows, query_rows=('',)):
    """A dataset directory with the given database rows and one query file per split."""
    path.mkdir(exist_ok=True)
    (path / 'database.csv').write_text(HEADER + ''.join(database_rows))
    for name, rows in zip(datasets.SPLITS[1:], itertools.cycle([query_rows])):
        (path / (name + '.csv')).write_text(HEADER + ''.join(rows))
    (path / 'meta.json').write_text('{"seed": 1}\n')


class TestSynth:

    def test_noise_free_views_equal_latents(self):
        ds = datasets.synth_generate(2, 1, 0, 8, 0.0, 500.0, seed=3)
        assert len(ds.database) == 2
        for d in ds.database:
            assert abs(np.linalg.norm(d.features) - 1.0) < 1e-12
        assert ds.database[0].place_id == 0 and ds.database[1].place_id == 1

    def test_place_separation(self):
        for seed in range(100):
            ds = datasets.synth_generate(12, 1, 0, 4, 0.0, 500.0, seed)
            centers = ds.positions('database')
            for i, j in itertools.combinations(range(len(centers)), 2):
                # Views sit within the jitter radius of their place centre.
                gap = math.hypot(*(centers[i] - centers[j]))
                assert gap >= datasets.MIN_PLACE_SEPARATION_M - 2 * datasets.VIEW_JITTER_M

    def test_views_jittered_within_radius(self):
        ds = datasets.synth_generate(6, 20, 2, 4, 0.1, 1000.0, seed=1)
        for place in range(6):
            pos = np.array([[d.x, d.y] for d in ds.database if d.place_id == place])
            spread = np.linalg.norm(pos - pos.mean(axis=0), axis=1)
            assert spread.max() <= 2 * datasets.VIEW_JITTER_M

    def test_unsatisfiable_separation(self):
        with pytest.raises(ContractViolation, match="larger map extent"):
            datasets.synth_generate(50, 1, 1, 4, 0.1, 100.0, seed=0)

    def test_splits(self):
        ds = datasets.synth_generate(100, 10, 3, 64, 0.1, 1000.0, seed=7)
        assert len(ds.database) == 1000
        assert (len(ds.queries_train), len(ds.queries_val), len(ds.queries_test)) == (210, 45, 45)
        places = [set(ds.place_ids(name)) for name in datasets.SPLITS[1:]]
        assert not places[0] & places[1] and not places[0] & places[2] and not places[1] & places[2]
        ids = np.concatenate([ds.ids(name) for name in datasets.SPLITS])
        assert len(set(ids.tolist())) == len(ids)
        assert ds.meta['seed'] == 7
        assert np.all(np.isfinite(ds.features('database')))

    @pytest.mark.parametrize("n_places", [2, 3, 4, 5])
    def test_too_few_places_for_query_splits(self, n_places):
        with pytest.raises(ContractViolation, match="validation or test split"):
            datasets.synth_generate(n_places, 1, 1, 4, 0.1, 1000.0, seed=0)

    def test_smallest_dataset_with_query_splits(self):
        ds = datasets.synth_generate(6, 1, 1, 4, 0.1, 1000.0, seed=0)
        assert (len(ds.queries_train), len(ds.queries_val), len(ds.queries_test)) == (4, 1, 1)

    @pytest.mark.parametrize("kwargs", [
        {'n_places': 1}, {'views_per_place': 0}, {'d_in': 1}, {'view_noise_sigma': -0.1}])
    def test_argument_checks(self, kwargs):
        args = dict(n_places=8, views_per_place=2, queries_per_place=1, d_in=4,
                    view_noise_sigma=0.1, map_extent_m=500.0, seed=0)
        args.update(kwargs)
        with pytest.raises(ContractViolation):
            datasets.synth_generate(**args)


class TestFiles:

    def test_round_trip_is_byte_identical(self, tmp_path):
        ds = datasets.synth_generate(6, 3, 2, 5, 0.2, 600.0, seed=11)
        datasets.save_dataset(ds, str(tmp_path / 'a'))
        loaded = datasets.load_dataset(str(tmp_path / 'a'))
        datasets.save_dataset(loaded, str(tmp_path / 'b'))
        for name in [s + '.csv' for s in datasets.SPLITS] + ['meta.json']:
            assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()
        for a, b in zip(ds.database, loaded.database):
            np.testing.assert_array_equal(a.features, b.features)
            assert (a.image_id, a.place_id, a.x, a.y) == (b.image_id, b.place_id, b.x, b.y)

    def test_same_seed_same_bytes(self, tmp_path):
        for name in ('a', 'b'):
            datasets.save_dataset(datasets.synth_generate(8, 2, 1, 6, 0.1, 800.0, seed=5), str(tmp_path / name))
        for name in [s + '.csv' for s in datasets.SPLITS] + ['meta.json']:
            assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()

    def test_golden_single_descriptor(self, tmp_path):
        write_minimal(tmp_path, ['3,0,12.5,-4,0.6,0.8\n'])
        ds = datasets.load_dataset(str(tmp_path))
        (d,) = ds.database
        assert (d.image_id, d.place_id, d.x, d.y) == (3, 0, 12.5, -4.0)
        np.testing.assert_array_equal(d.features, [0.6, 0.8])
        assert ds.meta == {'seed': 1}
        assert ds.queries_train == ()

    def test_duplicate_id_names_line(self, tmp_path):
        write_minimal(tmp_path, ['1,0,0,0,1,0\n', '2,0,1,0,1,0\n', '1,1,90,0,0,1\n'])
        with pytest.raises(DatasetParseError, match="duplicate image_id 1") as info:
            datasets.load_dataset(str(tmp_path))
        assert info.value.line == 4

    def test_duplicate_across_splits(self, tmp_path):
        write_minimal(tmp_path, ['1,0,0,0,1,0\n'], ['1,0,0,1,1,0\n'])
        with pytest.raises(DatasetParseError) as info:
            datasets.load_dataset(str(tmp_path))
        assert info.value.path.endswith('queries_train.csv')
        assert info.value.line == 2

    @pytest.mark.parametrize("row,message", [
        ('1,0,0,0,1\n', "expected 6 columns"),
        ('1,0,0,0,1,zero\n', "f1 is not a number"),
        ('1.5,0,0,0,1,0\n', "image_id is not an integer"),
        ('1,0,nan,0,1,0\n', "x is not finite"),
    ])
    def test_malformed_rows(self, tmp_path, row, message):
        write_minimal(tmp_path, ['0,0,0,0,1,0\n', row])
        with pytest.raises(DatasetParseError, match=message) as info:
            datasets.load_dataset(str(tmp_path))
        assert info.value.line == 3

    def test_dimension_mismatch_between_files(self, tmp_path):
        write_minimal(tmp_path, ['0,0,0,0,1,0\n'])
        (tmp_path / 'queries_val.csv').write_text('image_id,place_id,x,y,f0,f1,f2\n')
        with pytest.raises(DatasetParseError, match="dimension 3 does not match 2"):
            datasets.load_dataset(str(tmp_path))

    def test_bad_header(self, tmp_path):
        write_minimal(tmp_path, [])
        (tmp_path / 'database.csv').write_text('id,place,x,y,f0,f1\n')
        with pytest.raises(DatasetParseError, match="bad header"):
            datasets.load_dataset(str(tmp_path))

    def test_query_place_without_database_view(self, tmp_path):
        write_minimal(tmp_path, ['0,0,0,0,1,0\n'])
        (tmp_path / 'queries_train.csv').write_text(HEADER + '5,9,0,0,1,0\n')
        with pytest.raises(ContractViolation, match="place 9"):
            datasets.load_dataset(str(tmp_path))

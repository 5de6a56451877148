import numpy as np
import pytest
from scipy import special

from growthlab.grid_core import GridSpec, ScalarField, make_disk
from growthlab.io_formats import read_pgm, read_rows, write_field_csv, write_pgm, write_records, write_rows
from growthlab.special import besseli0


def test_besseli0_matches_scipy():
    x = np.array([0.0, 0.1, 0.5, 1.0, 2.5, 10.0, 30.0])
    assert besseli0(x) == pytest.approx(special.i0(x), rel=1e-10)
    assert float(besseli0(0.0)) == 1.0


def test_rows_round_trip(tmp_path):
    path = write_rows(tmp_path / 'sub' / 'rates.csv', ['radius', 'rate'], [[0.5, 0.1 + 0.2], [1, 'x']])
    rows = read_rows(path)
    assert rows[0] == {'radius': '0.5', 'rate': repr(0.1 + 0.2)}
    assert rows[1]['rate'] == 'x'


def test_records(tmp_path):
    path = write_records(tmp_path / 'r.csv', [{'a': 1, 'b': 2.5}, {'a': 3, 'b': 4.0}])
    assert [r['a'] for r in read_rows(path)] == ['1', '3']


def test_field_csv_respects_mask(tmp_path):
    spec = GridSpec.square(17, 1.0)
    D = make_disk(0j, 0.5, spec)
    path = write_field_csv(tmp_path / 'f.csv', ScalarField.constant(spec, 2.0), D.mask)
    rows = read_rows(path)
    assert len(rows) == int(D.mask.sum())
    assert {r['value'] for r in rows} == {'2.0'}


def test_pgm_keeps_orientation_and_scale(tmp_path):
    values = np.zeros((10, 12))
    values[0, :] = -1.0     # bottom row of the grid
    values[-1, -1] = 3.0
    path = write_pgm(tmp_path / 'img.pgm', values)
    lines = path.read_text().splitlines()
    assert lines[0] == 'P2'
    assert lines[2] == '12 10'
    # image rows run top to bottom
    assert set(lines[4].split()[:-1]) == {str(round(1 / 4 * 65535))}
    back = read_pgm(path)
    assert back.shape == values.shape
    assert np.allclose(back, values, atol=4.0 / 65535)


def test_constant_pgm(tmp_path):
    back = read_pgm(write_pgm(tmp_path / 'flat.pgm', np.full((8, 8), 0.5)))
    assert np.allclose(back, 0.5)

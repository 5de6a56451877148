import math

import pytest

from growthlab.checks import CheckMode, GoldenRow, at_least, at_most, failures, within
from growthlab.goldens import CRITERIA, disk_green_closed_form, golden_table


@pytest.mark.parametrize('row, passed', [
    (GoldenRow('abs', 1.0, 1.05, 0.1), True),
    (GoldenRow('abs', 1.0, 1.2, 0.1), False),
    (GoldenRow('rel', 2.0, 2.03, 0.02, CheckMode.RELATIVE), True),
    (GoldenRow('rel', 2.0, 2.1, 0.02, 'rel'), False),
    (at_most('upper', 0.5, 1.0), True),
    (at_most('upper', 1.5, 1.0), False),
    (at_least('lower', 0.0, 0.0), True),
    (at_least('lower', -1e-9, 0.0), False),
    (within('ratio', 4.0, 3.0, 5.5), True),
    (within('ratio', 2.0, 3.0, 5.5), False),
    (GoldenRow('nan', 1.0, float('nan'), 1.0), False),
])
def test_golden_row_pass_rules(row, passed):
    assert row.passed is passed


def test_golden_row_serialisation():
    row = GoldenRow('flux', 1, 0.99, 0.02, CheckMode.RELATIVE)
    assert row.as_row() == ['flux', 1.0, 0.99, 0.02, 'pass']
    assert row.to_dict()['mode'] == 'rel'
    assert failures([row, at_most('bad', 2.0, 1.0)])[0].check == 'bad'


def test_disk_green_closed_form():
    assert disk_green_closed_form(0.5, 0j) == pytest.approx(math.log(0.5) / (2 * math.pi))
    assert disk_green_closed_form(1j, 0.3 + 0.2j) == pytest.approx(0.0, abs=1e-12)
    assert disk_green_closed_form(1.5 + 0.5j, 1.5 + 0j, radius=2.0, center=1.5) == pytest.approx(
        math.log(0.25) / (2 * math.pi))


def test_golden_table_rejects_unknown_criteria():
    assert 'balayage' in CRITERIA
    with pytest.raises(KeyError):
        golden_table(65, ['no-such-criterion'])


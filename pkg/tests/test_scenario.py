import json
import textwrap

import numpy as np
import pytest

from growthlab.errors import ConfigError
from growthlab.operators_green import OperatorKind
from growthlab.scenario import (
    Expression,
    ExpressionError,
    default_scenario,
    load_scenario,
    parse_scenario,
)

from conftest import SCENARIOS


def scenario(**doc) -> str:
    return json.dumps(doc, indent=2)


@pytest.mark.parametrize('text, expected', [
    ('1 + x*x', 1.0 + 0.25),
    ('-2*y', -2.0),
    ('exp(r2)', np.exp(0.25 + 1.0)),
    ('pow(x, 3) + 1e-1', 0.125 + 0.1),
    ('(1 + x) * (1 - x)', 0.75),
])
def test_expression_evaluation(text, expected):
    assert float(Expression.parse(text)(0.5, 1.0)) == pytest.approx(expected)


@pytest.mark.parametrize('text', ['', '1 +', 'sin(x)', 'z', '(x', 'pow(x)', 'x $ y'])
def test_bad_expressions(text):
    with pytest.raises(ExpressionError):
        Expression.parse(text)


def test_expression_evaluates_on_arrays():
    values = Expression.parse('besseli0(x) * y')(np.zeros(3), np.arange(3.0))
    assert values.shape == (3,)
    assert values == pytest.approx([0.0, 1.0, 2.0])


@pytest.mark.parametrize('path', sorted(SCENARIOS.glob('*.json')), ids=lambda p: p.stem)
def test_shipped_scenarios_load(path):
    config = load_scenario(path)
    assert config.source_path == path
    assert config.raw['command'] == config.command


def test_scenario_fields():
    config = parse_scenario(scenario(
        command='green',
        grid={'n': 65, 'half_width': 1.5},
        domain={'shape': 'star', 'radius': 0.8, 'amplitude': 0.1, 'k': 3},
        operator={'kind': 'beltrami', 'coefficient': '1 + r2'},
        source={'w': [0.1, -0.2], 'Q': 2},
        params={'probes': [[0, 0.5], [0.2, 0.1]]},
    ))
    assert config.grid.shape == (65, 65)
    assert config.w == 0.1 - 0.2j
    assert config.Q == 2.0
    assert config.operator.kind is OperatorKind.BELTRAMI
    assert config.params['probes'] == [0.5j, 0.2 + 0.1j]
    assert config.domain.params['k'] == 3
    assert config.build_domain().contains(0j)
    assert config.build_operator().coefficient.at(0.5) == pytest.approx(1.25, rel=1e-2)


def test_unknown_key_reports_field_and_line():
    text = textwrap.dedent('''\
        {
          "command": "green",
          "grid": {
            "n": 65,
            "spacing": 0.1
          }
        }''')
    with pytest.raises(ConfigError) as info:
        parse_scenario(text)
    assert info.value.field == 'grid.spacing'
    assert info.value.line == 5
    assert info.value.exit_code == 1


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_scenario('{\n  "command": "green",\n  oops\n}')
    assert info.value.line == 3


@pytest.mark.parametrize('doc, field', [
    ({'command': 'fly'}, 'command'),
    ({'command': 'green', 'operator': {'kind': 'laplace', 'coefficient': '1'}}, 'operator.coefficient'),
    ({'command': 'green', 'operator': {'kind': 'schrodinger'}}, 'operator.coefficient'),
    ({'command': 'green', 'operator': {'kind': 'beltrami', 'coefficient': 'sin(x)'}}, 'operator.coefficient'),
    ({'command': 'green', 'domain': {'shape': 'disk'}}, 'domain.radius'),
    ({'command': 'green', 'domain': {'shape': 'disk', 'radius': -1}}, 'domain.radius'),
    ({'command': 'green', 'domain': {'shape': 'star', 'radius': 1, 'amplitude': 0.1, 'k': 2.5}}, 'domain.k'),
    ({'command': 'green', 'grid': {'h': 0.1, 'nx': 10}}, 'grid'),
    ({'command': 'green', 'source': {'w': [1, 2, 3]}}, 'source.w'),
    ({'command': 'green', 'params': {'eps': 0.1}}, 'params.eps'),
    ({'command': 'perturb', 'params': {'epsilons': [0.02, -0.01]}}, 'params.epsilons'),
    ({'command': 'perturb', 'params': {'formula': 'taylor'}}, 'params.formula'),
    ({'command': 'balayage', 'params': {'atoms': [[0, 0, 0]]}}, 'params.atoms.0'),
    ({'command': 'grow', 'run': {'mode': 'implicit'}}, 'run.mode'),
])
def test_invalid_scenarios(doc, field):
    with pytest.raises(ConfigError) as info:
        parse_scenario(scenario(**doc))
    assert info.value.field == field


def test_explicit_grid():
    config = parse_scenario(scenario(command='green', grid={'origin': [-1, -1], 'h': 0.125, 'nx': 17, 'ny': 9}))
    assert config.grid.shape == (9, 17)
    assert config.grid.h == 0.125


def test_with_grid_n_keeps_the_box():
    config = parse_scenario(scenario(command='green', grid={'n': 65, 'half_width': 1.5, 'center': [0.5, 0]}))
    finer = config.with_grid_n(129)
    assert finer.grid.shape == (129, 129)
    assert finer.grid.extent == pytest.approx(config.grid.extent)


def test_default_scenario_has_no_domain():
    config = default_scenario('rates')
    assert config.command == 'rates'
    assert config.domain is None
    assert config.operator.kind is OperatorKind.LAPLACE
    with pytest.raises(ConfigError) as info:
        config.build_domain()
    assert info.value.field == 'domain'


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / 'absent.json')

import json

import pytest

from growthlab.main import main

from conftest import SCENARIOS


def write_scenario(path, **doc):
    path.write_text(json.dumps(doc, indent=2))
    return path


def read_manifest(out):
    return json.loads((out / 'manifest.json').read_text())


@pytest.fixture
def series_scenario(tmp_path):
    return dict(
        command='perturb',
        grid={'n': 129, 'half_width': 2.0},
        domain={'shape': 'disk', 'radius': 1.0},
        source={'w': [0.2, 0.1]},
        params={'formula': 'schrodinger_series', 'perturbation': '10 + 5*x'},
    )


def test_perturb_run_writes_manifest(tmp_path, series_scenario):
    config = write_scenario(tmp_path / 'series.json', **series_scenario)
    out = tmp_path / 'run'
    assert main(['perturb', '--config', str(config), '--out', str(out), '--quiet', '--seedless']) == 0
    manifest = read_manifest(out)
    assert manifest['status'] == 'ok'
    assert manifest['exit_code'] == 0
    assert manifest['seedless_flag'] is True
    assert manifest['deterministic'] is True
    assert manifest['grid']['nx'] == 129
    assert manifest['checks'][0]['pass'] is True
    assert (out / 'variation_report.json').exists()
    assert list(out.glob('growthlab_*.log'))


def test_failed_check_exits_3(tmp_path, series_scenario):
    series_scenario['params']['epsilons'] = [0.02, 0.02]
    config = write_scenario(tmp_path / 'series.json', **series_scenario)
    out = tmp_path / 'run'
    assert main(['perturb', '--config', str(config), '--out', str(out), '--quiet']) == 3
    manifest = read_manifest(out)
    assert manifest['status'] == 'failed'
    assert manifest['exit_code'] == 3
    assert manifest['checks'][0]['pass'] is False


def test_malformed_scenario_exits_1_with_manifest(tmp_path):
    config = tmp_path / 'bad.json'
    config.write_text('{\n  "command": "green",\n  "grid": {"spacing": 1}\n}')
    out = tmp_path / 'run'
    assert main(['green', '--config', str(config), '--out', str(out), '--quiet']) == 1
    manifest = read_manifest(out)
    assert manifest['status'] == 'failed'
    assert 'grid.spacing' in manifest['message']
    assert manifest['inputs'] is None


def test_scenario_for_another_command_exits_1(tmp_path):
    config = write_scenario(tmp_path / 'green.json', command='green')
    assert main(['perturb', '--config', str(config), '--out', str(tmp_path / 'run'), '--quiet']) == 1


@pytest.mark.parametrize('argv', [
    [],
    ['simulate'],
    ['green', '--grid-n', 'many'],
])
def test_usage_errors_exit_1(argv):
    assert main(argv) == 1


def test_grid_override_is_checked(tmp_path):
    assert main(['green', '--grid-n', '4', '--out', str(tmp_path), '--quiet']) == 1
    assert read_manifest(tmp_path)['exit_code'] == 1


def test_dirichlet_needs_a_perturbed_operator(tmp_path):
    config = write_scenario(tmp_path / 'dirichlet.json', command='dirichlet',
                            grid={'n': 65}, domain={'shape': 'disk', 'radius': 1.0})
    out = tmp_path / 'run'
    assert main(['dirichlet', '--config', str(config), '--out', str(out), '--quiet']) == 1
    assert 'operator.kind' in read_manifest(out)['message']


def test_source_on_the_boundary_exits_2(tmp_path):
    config = write_scenario(tmp_path / 'green.json', command='green', grid={'n': 65},
                            domain={'shape': 'disk', 'radius': 1.0}, source={'w': [0.99, 0]})
    out = tmp_path / 'run'
    assert main(['green', '--config', str(config), '--out', str(out), '--quiet']) == 2
    manifest = read_manifest(out)
    assert manifest['status'] == 'failed'
    assert manifest['message']


def test_unknown_setting_exits_1(tmp_path):
    settings = tmp_path / 'settings.json'
    settings.write_text(json.dumps({'solver': {'tolerance': 1e-3}}))
    assert main(['green', '--settings', str(settings), '--out', str(tmp_path / 'run'), '--quiet']) == 1


def test_grid_override_reaches_the_settings(tmp_path):
    out = tmp_path / 'run'
    code = main(['green', '--config', str(SCENARIOS / 'green_disk.json'), '--grid-n', '65',
                 '--out', str(out), '--quiet'])
    assert code in (0, 3)
    manifest = read_manifest(out)
    assert manifest['grid']['nx'] == 65
    assert manifest['settings']['grid']['n'] == 65


@pytest.mark.slow
def test_beltrami_grow_reports_l_harmonic_rates(tmp_path):
    out = tmp_path / 'run'
    code = main(['grow', '--config', str(SCENARIOS / 'beltrami_growth.json'), '--grid-n', '129',
                 '--out', str(out), '--quiet'])
    assert code in (0, 3)
    names = [c['check'] for c in read_manifest(out)['checks']]
    assert [n for n in names if n.startswith('L-harmonic')] == [f'L-harmonic phi{k} rate error' for k in range(5)]
    report = json.loads((out / 'moment_report.json').read_text())
    assert len(report['test_targets']) == 5

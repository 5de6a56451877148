import json
import logging

import pytest

from growthlab.config import DEFAULTS, ConfigManager, settings, use_settings
from growthlab.errors import ConfigError
from growthlab.logger import LOGGER_NAME, Logger, LogLevel
from growthlab.utils.log_formatting import ColoredFormatter

from conftest import ROOT

ROOT_CONFIG = ROOT / 'config.json'


def test_defaults():
    config = ConfigManager()
    assert config.path is None
    assert config.get('grid.n') == 256
    assert config.get('psor.omega') == 1.9
    assert config.get('logging.dir') is None
    assert config.get('logging.dir', 'runs') == 'runs'
    assert config.get('no.such.key', 7) == 7


def test_shipped_config_mirrors_defaults():
    assert json.loads(ROOT_CONFIG.read_text()) == DEFAULTS


def test_file_overrides_are_merged(tmp_path):
    path = tmp_path / 'settings.json'
    path.write_text(json.dumps({'psor': {'omega': 1.5}}))
    config = ConfigManager(path)
    assert config.get('psor.omega') == 1.5
    assert config.get('psor.tol') == 1e-11


def test_unknown_setting_names_the_field(tmp_path):
    path = tmp_path / 'settings.json'
    path.write_text(json.dumps({'psor': {'omeg': 1.5}}))
    with pytest.raises(ConfigError) as info:
        ConfigManager(path)
    assert info.value.field == 'psor.omeg'


def test_invalid_json_reports_line(tmp_path):
    path = tmp_path / 'settings.json'
    path.write_text('{\n  "grid": {\n    "n": ,\n  }\n}')
    with pytest.raises(ConfigError) as info:
        ConfigManager(path)
    assert info.value.line == 3


def test_missing_file_disables_config(tmp_path):
    with pytest.raises(ConfigError):
        ConfigManager(tmp_path / 'absent.json')


def test_update_and_set():
    config = ConfigManager()
    config.update({'growth': {'cfl_factor': 0.2}})
    assert config.get('growth.cfl_factor') == 0.2
    with pytest.raises(ConfigError) as info:
        config.update({'growth': 0.2})
    assert info.value.field == 'settings.growth'
    config.set('grid.n', 64)
    assert config.get('grid.n') == 64
    assert config.as_dict()['grid']['n'] == 64
    assert DEFAULTS['grid']['n'] == 256


def test_environment_variables(tmp_path, monkeypatch):
    path = tmp_path / 'settings.json'
    path.write_text(json.dumps({'grid': {'n': 128}}))
    monkeypatch.setenv('GROWTHLAB_CONFIG', str(path))
    monkeypatch.setenv('GROWTHLAB_LOG_DIR', str(tmp_path / 'logs'))
    config = ConfigManager()
    assert config.path == path
    assert config.get('grid.n') == 128
    assert config.get('logging.dir') == str(tmp_path / 'logs')


def test_use_settings_installs_process_config():
    config = ConfigManager()
    config.set('grid.n', 32)
    use_settings(config)
    assert settings() is config


def _record(msg, level=logging.INFO):
    return logging.LogRecord(LOGGER_NAME, level, __file__, 1, msg, None, None)


def test_plain_formatter_indents_continuation_lines():
    text = ColoredFormatter(use_color=False).format(_record('residual table\nrow 1'))
    first, second = text.split('\n')
    assert first.startswith('[') and first.endswith('INFO     residual table')
    assert second == '    row 1'


def test_colored_formatter_marks_level():
    text = ColoredFormatter(use_color=True).format(_record('stalled', logging.WARNING))
    assert '\x1b[' in text
    assert 'WARNING' in text and text.endswith('stalled')


def test_file_handler_attach_and_detach(tmp_path):
    logger = Logger()
    log_file = logger.attach_file(tmp_path / 'logs')
    logger.info('solver started')
    logger.detach_files()
    assert 'solver started' in log_file.read_text()
    assert not any(isinstance(h, logging.FileHandler) for h in logging.getLogger(LOGGER_NAME).handlers)


def test_console_level():
    logger = Logger()
    logger.set_console_level(LogLevel.WARNING)
    consoles = [h for h in logging.getLogger(LOGGER_NAME).handlers if not isinstance(h, logging.FileHandler)]
    assert consoles and all(h.level == logging.WARNING for h in consoles)
    logger.set_console_level(LogLevel.INFO)

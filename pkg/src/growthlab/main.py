"""
Command-line entry point.

    growthlab grow --config scenarios/disk_laplace.json --out runs/disk
    growthlab reproduce-paper --grid-n 128

Every run writes manifest.json into its output directory. Exit codes:
0 success, 1 configuration error, 2 solver failure, 3 failed checks.
"""

import argparse
import json
import platform
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
import scipy

from growthlab import __version__
from growthlab.checks import failures
from growthlab.commands import CommandResult, run_command
from growthlab.config import ConfigManager, use_settings
from growthlab.errors import AcceptanceError, ConfigError, GrowthLabError
from growthlab.logger import Logger, LogLevel
from growthlab.scenario import COMMANDS, ScenarioConfig, default_scenario, load_scenario


class _ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to ConfigError (exit 1, not 2)."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog='growthlab', description="Laplacian and elliptic growth laboratory.")
    parser.add_argument('--version', action='version', version=f'growthlab {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=_ArgumentParser)
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument('--config', type=Path, help="scenario JSON file")
        p.add_argument('--settings', type=Path, help="settings JSON merged over config.json defaults")
        p.add_argument('--out', type=Path, help="output directory (default: scenario output or runs/<command>)")
        p.add_argument('--grid-n', type=int, help="override the number of grid nodes per axis")
        p.add_argument('--quiet', action='store_true', help="only warnings and errors on the console")
        p.add_argument('--seedless', action='store_true',
                       help="record that the run is deterministic (no random number generator exists)")
    return parser


class Application:
    """One CLI invocation: settings, scenario, run, manifest."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.started = time.perf_counter()
        self.logger = Logger()
        if args.quiet:
            self.logger.set_console_level(LogLevel.WARNING)

        self.config = ConfigManager(args.settings)
        if self.config.path is None:
            self.logger.debug("No settings file given, using built-in defaults")
        if not args.quiet:
            level = str(self.config.get('logging.console_level', 'INFO')).upper()
            if level not in LogLevel.__members__:
                raise ConfigError(f"unknown console level {level!r}", field='logging.console_level')
            self.logger.set_console_level(LogLevel[level])
        use_settings(self.config)

        self.scenario: Optional[ScenarioConfig] = None
        self.out_dir: Optional[Path] = None

    def _load_scenario(self) -> ScenarioConfig:
        args = self.args
        if args.config is None:
            scenario = default_scenario(args.command)
        else:
            scenario = load_scenario(args.config)
            if scenario.command != args.command:
                raise ConfigError(f"scenario is for '{scenario.command}', not '{args.command}'",
                                  field='command')
        if scenario.settings:
            self.config.update(dict(scenario.settings))
        if args.grid_n is not None:
            if args.grid_n < 8:
                raise ConfigError(f"--grid-n must be at least 8, got {args.grid_n}")
            scenario = scenario.with_grid_n(args.grid_n)
            self.config.set('grid.n', args.grid_n)
        return scenario

    def _output_dir(self) -> Path:
        if self.args.out is not None:
            return self.args.out
        if self.scenario is not None and self.scenario.output is not None:
            return self.scenario.output
        return Path('runs') / self.args.command

    def _write_manifest(self, status: str, exit_code: int, result: Optional[CommandResult],
                        message: Optional[str] = None):
        out = self.out_dir or self._output_dir()
        out.mkdir(parents=True, exist_ok=True)
        scenario = self.scenario
        manifest = {
            'command': self.args.command,
            'status': status,
            'exit_code': exit_code,
            'message': message,
            'config_path': str(self.args.config) if self.args.config else None,
            'inputs': dict(scenario.raw) if scenario is not None else None,
            'grid': ({'origin': list(scenario.grid.origin), 'h': scenario.grid.h,
                      'nx': scenario.grid.nx, 'ny': scenario.grid.ny} if scenario is not None else None),
            'settings': self.config.as_dict(),
            'versions': {
                'growthlab': __version__,
                'python': platform.python_version(),
                'numpy': np.__version__,
                'scipy': scipy.__version__,
            },
            'deterministic': True,
            'seedless_flag': bool(self.args.seedless),
            'wall_time_s': time.perf_counter() - self.started,
            'checks': [row.to_dict() for row in result.checks] if result else [],
            'artifacts': [str(p) for p in result.artifacts] if result else [],
            'summary': result.summary if result else {},
        }
        path = out / 'manifest.json'
        path.write_text(json.dumps(manifest, indent=2, default=str))
        self.logger.info(f"manifest written to {path}")

    def run(self) -> int:
        result = None
        try:
            self.scenario = self._load_scenario()
            self.out_dir = self._output_dir()
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.logger.attach_file(self.config.get('logging.dir') or self.out_dir)
            if self.args.seedless:
                self.logger.info("Seedless run: every algorithm here is deterministic")

            result = run_command(self.scenario, self.out_dir)
            failed = failures(result.checks)
            for row in failed:
                self.logger.warning(f"check failed: {row.check} (computed {row.computed:.6g}, "
                                    f"reference {row.reference:.6g}, tolerance {row.tolerance:.3g})")
            if failed:
                raise AcceptanceError(f"{len(failed)} of {len(result.checks)} checks failed")
            self.logger.info(f"{self.args.command}: {len(result.checks)} checks passed")
            self._write_manifest('ok', 0, result)
            return 0
        except GrowthLabError as e:
            self.logger.error(f"{type(e).__name__}: {e}")
            self._write_manifest('failed', e.exit_code, result, str(e))
            return e.exit_code
        finally:
            self.logger.detach_files()


def main(argv: Optional[List[str]] = None) -> int:
    """Application entry point."""
    try:
        args = build_parser().parse_args(argv)
        app = Application(args)
    except ConfigError as e:
        Logger().error(f"ConfigError: {e}")
        return e.exit_code
    return app.run()


if __name__ == "__main__":
    sys.exit(main())

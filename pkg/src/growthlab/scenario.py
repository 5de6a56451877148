"""
Scenario files: one JSON document per CLI run.

A scenario names a subcommand, the grid, the domain, the operator with its
coefficient written in a small closed-form grammar, the pumping source and
the run controls. Parsing is strict. Unknown keys, wrong types and bad
expressions raise ConfigError naming the dotted field and its line.

Coefficient expressions understand literals, x, y, r2, +, -, *, parentheses
and the functions exp(a), besseli0(a) and pow(a, b):

    "1 + 0.3 * pow(x, 2)"
    "pow(besseli0(pow(r2, 0.5)), 2)"
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from growthlab.config import settings
from growthlab.errors import ConfigError
from growthlab.grid_core import (
    GridDomain,
    GridSpec,
    ScalarField,
    make_disk,
    make_ellipse,
    make_star,
)
from growthlab.operators_green import OperatorDesc, OperatorKind
from growthlab.special import besseli0

COMMANDS = ('green', 'dirichlet', 'perturb', 'balayage', 'grow', 'rates', 'dtn', 'reproduce-paper')
SHAPES = ('disk', 'ellipse', 'star')
RUN_MODES = ('strong', 'weak')

# allowed keys per section
_TOP_KEYS = ('command', 'grid', 'domain', 'operator', 'source', 'run', 'params', 'settings', 'output')
_GRID_KEYS = ('n', 'half_width', 'center', 'origin', 'h', 'nx', 'ny')
_SHAPE_KEYS = {
    'disk': ('shape', 'center', 'radius'),
    'ellipse': ('shape', 'center', 'a', 'b'),
    'star': ('shape', 'center', 'radius', 'amplitude', 'k', 'phase'),
}
_OPERATOR_KEYS = ('kind', 'coefficient')
_SOURCE_KEYS = ('w', 'Q')
_RUN_KEYS = ('mode', 'dt', 't_end', 'snapshot_stride')
_PARAM_KEYS = {
    'green': ('probes',),
    'dirichlet': ('boundary', 'potential', 'eps'),
    'perturb': ('formula', 'epsilons', 'z', 'displacement', 'perturbation', 'zeta_index'),
    'balayage': ('atoms', 'include_domain'),
    'grow': (),
    'rates': ('radii', 'expected'),
    'dtn': ('order', 'method'),
    'reproduce-paper': ('only',),
}
PERTURB_FORMULAS = ('hadamard', 'schrodinger_series', 'beltrami_gradient', 'beltrami_laplacian',
                    'normal_schrodinger', 'normal_beltrami', 'zero_curvature')
RATE_LAWS = ('bessel', 'gaussian', 'none')


class _LineFinder:
    """Best-effort line numbers for dotted keys in the JSON source."""

    def __init__(self, text: str):
        self.text = text

    def line(self, dotted: str) -> Optional[int]:
        offset = 0
        found = None
        for part in dotted.split('.'):
            if part.isdigit():
                continue
            match = re.compile(r'"%s"\s*:' % re.escape(part)).search(self.text, offset)
            if match is None:
                break
            offset = match.end()
            found = offset
        if found is None:
            return None
        return self.text.count('\n', 0, found) + 1


# -- expression grammar ------------------------------------------------------

_TOKEN = re.compile(r'\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)|([A-Za-z_]\w*)|(.))')
_FUNCTIONS: Dict[str, Tuple[int, Callable]] = {
    'exp': (1, np.exp),
    'besseli0': (1, besseli0),
    'pow': (2, np.power),
}
_VARIABLES = ('x', 'y', 'r2')

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ExpressionError(ValueError):
    pass


class _Parser:
    def __init__(self, text: str):
        self.tokens: List[Tuple[str, str]] = []
        pos = 0
        text = text.strip()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                break
            number, name, symbol = m.groups()
            if number is not None:
                self.tokens.append(('num', number))
            elif name is not None:
                self.tokens.append(('name', name))
            elif symbol is not None and not symbol.isspace():
                self.tokens.append(('sym', symbol))
            pos = m.end()
        self.pos = 0

    def peek(self) -> Optional[Tuple[str, str]]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, kind: str = None, value: str = None) -> Tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise ExpressionError("unexpected end of expression")
        if (kind and tok[0] != kind) or (value and tok[1] != value):
            raise ExpressionError(f"expected {value or kind}, found {tok[1]!r}")
        self.pos += 1
        return tok

    def parse(self) -> Evaluator:
        if not self.tokens:
            raise ExpressionError("empty expression")
        node = self.sum()
        if self.peek() is not None:
            raise ExpressionError(f"unexpected {self.peek()[1]!r}")
        return node

    def sum(self) -> Evaluator:
        node = self.product()
        while self.peek() in (('sym', '+'), ('sym', '-')):
            op = self.take()[1]
            left, right = node, self.product()
            if op == '+':
                node = lambda x, y, a=left, b=right: a(x, y) + b(x, y)
            else:
                node = lambda x, y, a=left, b=right: a(x, y) - b(x, y)
        return node

    def product(self) -> Evaluator:
        node = self.unary()
        while self.peek() == ('sym', '*'):
            self.take()
            left, right = node, self.unary()
            node = lambda x, y, a=left, b=right: a(x, y) * b(x, y)
        return node

    def unary(self) -> Evaluator:
        if self.peek() == ('sym', '-'):
            self.take()
            inner = self.unary()
            return lambda x, y, a=inner: -a(x, y)
        return self.atom()

    def atom(self) -> Evaluator:
        tok = self.take()
        kind, text = tok
        if kind == 'num':
            value = float(text)
            return lambda x, y, v=value: np.full(np.shape(x), v)
        if kind == 'sym' and text == '(':
            node = self.sum()
            self.take('sym', ')')
            return node
        if kind == 'name':
            if text == 'x':
                return lambda x, y: np.asarray(x, dtype=float)
            if text == 'y':
                return lambda x, y: np.asarray(y, dtype=float)
            if text == 'r2':
                return lambda x, y: np.asarray(x, dtype=float) ** 2 + np.asarray(y, dtype=float) ** 2
            if text in _FUNCTIONS:
                arity, fn = _FUNCTIONS[text]
                self.take('sym', '(')
                args = [self.sum()]
                for _ in range(arity - 1):
                    self.take('sym', ',')
                    args.append(self.sum())
                self.take('sym', ')')
                return lambda x, y, f=fn, a=tuple(args): np.asarray(f(*(g(x, y) for g in a)), dtype=float)
            raise ExpressionError(f"unknown name {text!r} (variables: {', '.join(_VARIABLES)}; "
                                  f"functions: {', '.join(_FUNCTIONS)})")
        raise ExpressionError(f"unexpected {text!r}")


@dataclass(frozen=True)
class Expression:
    """A parsed coefficient expression; call it on coordinate arrays."""

    text: str
    evaluate: Evaluator = field(repr=False, compare=False)

    @classmethod
    def parse(cls, text: str) -> 'Expression':
        return cls(text, _Parser(text).parse())

    def __call__(self, x, y) -> np.ndarray:
        return self.evaluate(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def field(self, spec: GridSpec) -> ScalarField:
        return ScalarField.from_function(spec, self)


# -- scenario ----------------------------------------------------------------

@dataclass(frozen=True)
class DomainConfig:
    shape: str
    center: complex
    params: Mapping[str, float]

    def build(self, spec: GridSpec) -> GridDomain:
        p = self.params
        if self.shape == 'disk':
            return make_disk(self.center, p['radius'], spec)
        if self.shape == 'ellipse':
            return make_ellipse(self.center, p['a'], p['b'], spec)
        return make_star(self.center, p['radius'], p['amplitude'], int(p['k']), spec, p.get('phase', 0.0))


@dataclass(frozen=True)
class OperatorConfig:
    kind: OperatorKind
    coefficient: Optional[Expression] = None

    def build(self, spec: GridSpec) -> OperatorDesc:
        if self.kind is OperatorKind.LAPLACE:
            return OperatorDesc.laplace()
        return OperatorDesc(self.kind, self.coefficient.field(spec))


@dataclass(frozen=True)
class RunConfig:
    mode: str = 'strong'
    dt: Optional[float] = None
    t_end: float = 0.0
    snapshot_stride: Optional[int] = None


@dataclass(frozen=True)
class ScenarioConfig:
    command: str
    grid: GridSpec
    domain: Optional[DomainConfig]
    operator: OperatorConfig
    w: complex = 0j
    Q: float = 1.0
    run: RunConfig = field(default_factory=RunConfig)
    params: Mapping[str, Any] = field(default_factory=dict)
    settings: Mapping[str, Any] = field(default_factory=dict)
    output: Optional[Path] = None
    source_path: Optional[Path] = None
    raw: Mapping[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def build_domain(self) -> GridDomain:
        if self.domain is None:
            raise ConfigError("this command needs a domain", field='domain')
        return self.domain.build(self.grid)

    def build_operator(self) -> OperatorDesc:
        return self.operator.build(self.grid)

    def param(self, key: str, default: Any = None) -> Any:
        value = self.params.get(key)
        return default if value is None else value

    def with_grid_n(self, n: int) -> 'ScenarioConfig':
        """Same physical box resampled with n nodes per axis."""
        x0, x1, y0, y1 = self.grid.extent
        half = 0.5 * max(x1 - x0, y1 - y0)
        centre = complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))
        return replace(self, grid=GridSpec.square(n, half, centre))


class _Reader:
    """Typed access to the raw document with field/line diagnostics."""

    def __init__(self, lines: _LineFinder):
        self.lines = lines

    def fail(self, dotted: str, message: str):
        raise ConfigError(message, field=dotted, line=self.lines.line(dotted))

    def section(self, doc: Mapping, key: str, allowed, prefix: str = '', required: bool = False) -> Dict[str, Any]:
        dotted = f'{prefix}{key}'
        value = doc.get(key)
        if value is None:
            if required:
                self.fail(dotted, "missing section")
            return {}
        if not isinstance(value, dict):
            self.fail(dotted, "expected an object")
        self.keys(value, allowed, dotted + '.')
        return value

    def keys(self, doc: Mapping, allowed, prefix: str):
        for key in doc:
            if key not in allowed:
                self.fail(f'{prefix}{key}', f"unknown key (allowed: {', '.join(allowed)})")

    def number(self, doc: Mapping, key: str, dotted: str, default=None, positive: bool = False,
               integer: bool = False):
        value = doc.get(key, default)
        if value is None:
            return default
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(dotted, f"expected a number, got {value!r}")
        if integer and int(value) != value:
            self.fail(dotted, f"expected an integer, got {value!r}")
        if positive and not value > 0:
            self.fail(dotted, f"must be positive, got {value!r}")
        return int(value) if integer else float(value)

    def point(self, doc: Mapping, key: str, dotted: str, default: complex = 0j) -> complex:
        value = doc.get(key)
        if value is None:
            return default
        if (not isinstance(value, (list, tuple)) or len(value) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)):
            self.fail(dotted, f"expected a point [x, y], got {value!r}")
        return complex(float(value[0]), float(value[1]))

    def choice(self, doc: Mapping, key: str, dotted: str, options, default=None) -> str:
        value = doc.get(key, default)
        if value not in options:
            self.fail(dotted, f"expected one of {', '.join(options)}, got {value!r}")
        return value

    def expression(self, doc: Mapping, key: str, dotted: str) -> Optional[Expression]:
        value = doc.get(key)
        if value is None:
            return None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = repr(float(value))
        if not isinstance(value, str):
            self.fail(dotted, "expected an expression string")
        try:
            return Expression.parse(value)
        except ExpressionError as e:
            self.fail(dotted, f"bad expression {value!r}: {e}")


def _grid(reader: _Reader, doc: Mapping) -> GridSpec:
    grid = reader.section(doc, 'grid', _GRID_KEYS)
    explicit = [k for k in ('origin', 'h', 'nx', 'ny') if k in grid]
    if explicit:
        if len(explicit) != 4:
            reader.fail('grid', "origin, h, nx and ny must be given together")
        if any(k in grid for k in ('n', 'half_width', 'center')):
            reader.fail('grid', "use either n/half_width/center or origin/h/nx/ny")
        origin = reader.point(grid, 'origin', 'grid.origin')
        return GridSpec((origin.real, origin.imag), reader.number(grid, 'h', 'grid.h', positive=True),
                        reader.number(grid, 'nx', 'grid.nx', positive=True, integer=True),
                        reader.number(grid, 'ny', 'grid.ny', positive=True, integer=True))
    n = reader.number(grid, 'n', 'grid.n', default=settings().get('grid.n', 256), positive=True, integer=True)
    half = reader.number(grid, 'half_width', 'grid.half_width',
                         default=settings().get('grid.half_width', 2.0), positive=True)
    return GridSpec.square(n, half, reader.point(grid, 'center', 'grid.center'))


def _domain(reader: _Reader, doc: Mapping) -> Optional[DomainConfig]:
    raw = doc.get('domain')
    if raw is None:
        return None
    if not isinstance(raw, dict):
        reader.fail('domain', "expected an object")
    shape = reader.choice(raw, 'shape', 'domain.shape', SHAPES)
    reader.keys(raw, _SHAPE_KEYS[shape], 'domain.')
    params = {}
    for key in _SHAPE_KEYS[shape][2:]:
        if key == 'phase':
            params[key] = reader.number(raw, key, f'domain.{key}', default=0.0)
            continue
        if key not in raw:
            reader.fail(f'domain.{key}', f"required for a {shape}")
        params[key] = reader.number(raw, key, f'domain.{key}', positive=(key != 'amplitude'),
                                    integer=(key == 'k'))
    return DomainConfig(shape, reader.point(raw, 'center', 'domain.center'), params)


def _operator(reader: _Reader, doc: Mapping) -> OperatorConfig:
    raw = reader.section(doc, 'operator', _OPERATOR_KEYS)
    kind = OperatorKind(reader.choice(raw, 'kind', 'operator.kind', [k.value for k in OperatorKind], 'laplace'))
    coefficient = reader.expression(raw, 'coefficient', 'operator.coefficient')
    if kind is OperatorKind.LAPLACE and coefficient is not None:
        reader.fail('operator.coefficient', "the laplace operator takes no coefficient")
    if kind is not OperatorKind.LAPLACE and coefficient is None:
        reader.fail('operator.coefficient', f"required for {kind.value}")
    return OperatorConfig(kind, coefficient)


def _run(reader: _Reader, doc: Mapping) -> RunConfig:
    raw = reader.section(doc, 'run', _RUN_KEYS)
    return RunConfig(
        mode=reader.choice(raw, 'mode', 'run.mode', RUN_MODES, 'strong'),
        dt=reader.number(raw, 'dt', 'run.dt', positive=True),
        t_end=reader.number(raw, 't_end', 'run.t_end', default=0.0),
        snapshot_stride=reader.number(raw, 'snapshot_stride', 'run.snapshot_stride', positive=True, integer=True),
    )


def _params(reader: _Reader, doc: Mapping, command: str) -> Dict[str, Any]:
    raw = reader.section(doc, 'params', _PARAM_KEYS[command])
    out: Dict[str, Any] = {}
    for key, value in raw.items():
        dotted = f'params.{key}'
        if key in ('boundary', 'potential', 'displacement', 'perturbation'):
            out[key] = reader.expression(raw, key, dotted)
        elif key in ('eps', 'order', 'zeta_index'):
            out[key] = reader.number(raw, key, dotted, integer=(key != 'eps'))
        elif key in ('z',):
            out[key] = reader.point(raw, key, dotted)
        elif key in ('probes',):
            if not isinstance(value, list):
                reader.fail(dotted, "expected a list of points")
            out[key] = [reader.point({'p': p}, 'p', f'{dotted}.{i}') for i, p in enumerate(value)]
        elif key == 'atoms':
            if not isinstance(value, list):
                reader.fail(dotted, "expected a list of [x, y, mass]")
            atoms = []
            for i, a in enumerate(value):
                if (not isinstance(a, list) or len(a) != 3
                        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in a)):
                    reader.fail(f'{dotted}.{i}', f"expected [x, y, mass], got {a!r}")
                if not a[2] > 0:
                    reader.fail(f'{dotted}.{i}', "atom mass must be positive")
                atoms.append((complex(a[0], a[1]), float(a[2])))
            out[key] = atoms
        elif key in ('radii', 'epsilons'):
            if (not isinstance(value, list) or not value
                    or any(isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 for v in value)):
                reader.fail(dotted, "expected a non-empty list of positive numbers")
            out[key] = [float(v) for v in value]
        elif key == 'include_domain':
            if not isinstance(value, bool):
                reader.fail(dotted, "expected true or false")
            out[key] = value
        elif key == 'formula':
            out[key] = reader.choice(raw, key, dotted, PERTURB_FORMULAS)
        elif key == 'expected':
            out[key] = reader.choice(raw, key, dotted, RATE_LAWS)
        elif key == 'method':
            out[key] = reader.choice(raw, key, dotted, ('direct', 'response'))
        elif key == 'only':
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                reader.fail(dotted, "expected a list of criterion names")
            out[key] = list(value)
    return out


def parse_scenario(text: str, source_path: Optional[Path] = None) -> ScenarioConfig:
    """Validate a scenario document; raises ConfigError with field and line."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", line=e.lineno)
    if not isinstance(doc, dict):
        raise ConfigError("a scenario must be a JSON object", line=1)
    reader = _Reader(_LineFinder(text))
    reader.keys(doc, _TOP_KEYS, '')
    command = reader.choice(doc, 'command', 'command', COMMANDS)

    settings_raw = doc.get('settings') or {}
    if not isinstance(settings_raw, dict):
        reader.fail('settings', "expected an object")

    source = reader.section(doc, 'source', _SOURCE_KEYS)
    Q = reader.number(source, 'Q', 'source.Q', default=1.0)
    output = doc.get('output')
    if output is not None and not isinstance(output, str):
        reader.fail('output', "expected a directory path")

    return ScenarioConfig(
        command=command,
        grid=_grid(reader, doc),
        domain=_domain(reader, doc),
        operator=_operator(reader, doc),
        w=reader.point(source, 'w', 'source.w'),
        Q=Q,
        run=_run(reader, doc),
        params=_params(reader, doc, command),
        settings=settings_raw,
        output=Path(output) if output else None,
        source_path=source_path,
        raw=doc,
    )


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"cannot read scenario {path}: {e}")
    return parse_scenario(text, path)


def default_scenario(command: str) -> ScenarioConfig:
    """Scenario used when a command runs without --config."""
    return parse_scenario(json.dumps({'command': command}))

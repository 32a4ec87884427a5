"""Run configuration files and the initial-data expression grammar.

A config is an INI-style file of ``key = value`` sections::

    [initial]
    v0 = 0
    A0 = 0.2

    [scheme]
    sigma = 8

Expressions use ``x1``, ``x2``, numbers, ``pi``, ``+ - * / ^``, ``sin``,
``cos`` and parentheses.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field

from .errors import ConfigError
from .field import X1, X2, Domain, Expr, SymField, const, cos, power, sin
from .field.expr import Const
from .scheme import SchemeConfig

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)|([A-Za-z_]\w*)|(.))")


class ExprSyntaxError(ConfigError):
    def __init__(self, message, column):
        super().__init__(message)
        self.column = column


class _Parser:
    """Recursive descent over ``expr := term (('+'|'-') term)*``,
    ``term := unary (('*'|'/') unary)*``, ``unary := '-' unary | power``,
    ``power := atom ('^' unary)?``."""

    def __init__(self, text: str):
        self.text = text
        self.toks = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                break
            if m.group(0).strip():
                start = m.start(m.lastindex)
                kind = ("num", "name", "op")[m.lastindex - 1]
                self.toks.append((kind, m.group(m.lastindex), start + 1))
            pos = m.end()
        self.toks.append(("end", "", len(text) + 1))
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(f"{msg} at column {tok[2]}", tok[2])

    def expect(self, op):
        tok = self.take()
        if tok[1] != op:
            self.fail(f"expected '{op}'", tok)

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected '{self.peek()[1]}'")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()
            rhs = self.unary()
            if op[1] == "*":
                e = e * rhs
            else:
                if not (isinstance(rhs, Const) and rhs.value != 0):
                    self.fail("division is only by nonzero constants", op)
                e = e * (1.0 / rhs.value)
        return e

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return -self.unary()
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            op = self.take()
            ex = self.unary()
            if not isinstance(ex, Const):
                self.fail("exponent must be constant", op)
            p = ex.value
            if not (float(p).is_integer() and p >= 0):
                self.fail("exponent must be a nonnegative integer", op)
            return power(base, p) if p > 0 else const(1.0)
        return base

    def atom(self):
        kind, val, col = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "name":
            if val == "x1":
                return X1
            if val == "x2":
                return X2
            if val == "pi":
                return const(math.pi)
            if val in ("sin", "cos"):
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return sin(arg) if val == "sin" else cos(arg)
            self.fail(f"unknown name '{val}'", (kind, val, col))
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        self.fail("expected a number, name or '('", (kind, val, col))


def parse_expr(text: str) -> Expr:
    """Parse an initial-data expression into a field."""
    return _Parser(str(text)).parse()


# -- run configuration -----------------------------------------------------

_SCHEME_FLOATS = {"alpha", "beta", "sigma", "M0", "s", "frakC", "target_defect", "delta0",
                  "c1_safety", "sigma_s_floor", "c_extra", "proxy_scale", "resolution",
                  "quad_resolution", "lambda_cap"}
_SCHEME_INTS = {"max_stages", "poisson_modes", "proxy_quad_order", "quad_order"}


@dataclass(frozen=True)
class RunConfig:
    domain: tuple = (0.0, 0.0, 1.0, 1.0)
    margin: float = 0.25
    v0: str = "0"
    w0: tuple = ("0", "0")
    A0: tuple | None = ("0.2", "0", "0.2")
    f: str | None = None
    scheme: dict = field(default_factory=dict)
    export_resolution: float = 64
    out: str = "out"
    seed: int = 0

    def domain_obj(self) -> Domain:
        x0, y0, x1, y1 = self.domain
        return Domain((x0, y0), (x1, y1), self.margin)

    def scheme_config(self, **override) -> SchemeConfig:
        kw = dict(self.scheme)
        kw.update(override)
        kw.setdefault("seed", self.seed)
        try:
            return SchemeConfig(domain=self.domain_obj(), **kw)
        except TypeError as err:
            raise ConfigError(str(err)) from None

    def fields(self):
        """``(v0, w0, A0 or None, f or None)`` as expressions."""
        v0 = parse_expr(self.v0)
        w0 = tuple(parse_expr(t) for t in self.w0)
        A0 = SymField(*(parse_expr(t) for t in self.A0)) if self.A0 is not None else None
        f = parse_expr(self.f) if self.f is not None else None
        return v0, w0, A0, f


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (tuple, list)):
        return ", ".join(_fmt(v) for v in x)
    return str(x)


def dump_config(cfg: RunConfig) -> str:
    """Serialize so that ``load_config_text(dump_config(c)) == c``."""
    lines = ["[domain]", f"rect = {_fmt(tuple(cfg.domain))}", f"margin = {_fmt(cfg.margin)}", "",
             "[initial]", f"v0 = {cfg.v0}", f"w0_1 = {cfg.w0[0]}", f"w0_2 = {cfg.w0[1]}"]
    if cfg.A0 is not None:
        lines += [f"A0_11 = {cfg.A0[0]}", f"A0_12 = {cfg.A0[1]}", f"A0_22 = {cfg.A0[2]}"]
    if cfg.f is not None:
        lines.append(f"f = {cfg.f}")
    lines += ["", "[scheme]"]
    for k in sorted(cfg.scheme):
        lines.append(f"{k} = {_fmt(cfg.scheme[k])}")
    lines += ["", "[output]", f"resolution = {_fmt(cfg.export_resolution)}", f"dir = {cfg.out}",
              f"seed = {cfg.seed}", ""]
    return "\n".join(lines)


def _locate(text: str, section: str, key: str):
    """1-based line and value column of ``key`` inside ``section``."""
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            continue
        m = re.match(r"\s*([^=:#;]+?)\s*[=:]\s*", line)
        if current == section and m and m.group(1).lower() == key.lower():
            return n, m.end() + 1
    return None, None


class _Reader:
    def __init__(self, cp, text, source):
        self.cp, self.text, self.source = cp, text, source
        self.used = set()

    def err(self, section, key, msg, col_offset=0):
        line, col = _locate(self.text, section, key)
        where = f"{self.source}:{line}:{col + col_offset}" if line else self.source
        return ConfigError(f"{where}: [{section}] {key}: {msg}")

    def get(self, section, key, default=None):
        if self.cp.has_option(section, key):
            self.used.add((section, key.lower()))
            return self.cp.get(section, key)
        return default

    def number(self, section, key, default, kind=float):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return kind(raw)
        except ValueError:
            raise self.err(section, key, f"expected a {kind.__name__}, got '{raw}'") from None

    def numbers(self, section, key, default, count=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            vals = tuple(float(t) for t in raw.split(","))
        except ValueError:
            raise self.err(section, key, f"expected comma-separated numbers, got '{raw}'") from None
        if count is not None and len(vals) != count:
            raise self.err(section, key, f"expected {count} numbers, got {len(vals)}")
        return vals

    def expr(self, section, key, default):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            parse_expr(raw)
        except ExprSyntaxError as e:
            raise self.err(section, key, str(e).rsplit(" at column", 1)[0], e.column - 1) from None
        return raw


_SECTIONS = {"domain": {"rect", "margin"},
             "initial": {"v0", "w0_1", "w0_2", "a0", "a0_11", "a0_12", "a0_22", "f"},
             "scheme": {k.lower() for k in _SCHEME_FLOATS | _SCHEME_INTS | {"epsilon_schedule"}},
             "output": {"resolution", "dir", "seed"}}


def load_config_text(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as err:
        line = getattr(err, "lineno", None)
        where = f"{source}:{line}:1" if line else source
        raise ConfigError(f"{where}: {err.message.splitlines()[0]}") from None
    r = _Reader(cp, text, source)
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key in cp[sec]:
            if key.lower() not in _SECTIONS[sec]:
                raise r.err(sec, key, "unknown key")

    rect = r.numbers("domain", "rect", (0.0, 0.0, 1.0, 1.0), 4)
    margin = r.number("domain", "margin", 0.25)
    v0 = r.expr("initial", "v0", "0")
    w0 = (r.expr("initial", "w0_1", "0"), r.expr("initial", "w0_2", "0"))
    f = r.expr("initial", "f", None)
    scalar = r.expr("initial", "A0", None)
    if scalar is not None:
        A0 = (scalar, "0", scalar)
    else:
        A0 = (r.expr("initial", "A0_11", None), r.expr("initial", "A0_12", "0"),
              r.expr("initial", "A0_22", None))
        if A0[0] is None and A0[2] is None:
            A0 = None if f is not None else RunConfig.A0
        elif A0[0] is None or A0[2] is None:
            raise ConfigError(f"{source}: [initial] needs both A0_11 and A0_22")
    if f is not None and scalar is None and cp.has_option("initial", "A0_11"):
        raise r.err("initial", "f", "give either f or A0, not both")
    if f is not None and scalar is not None:
        raise r.err("initial", "f", "give either f or A0, not both")

    scheme = {}
    for key in sorted(_SCHEME_FLOATS):
        val = r.number("scheme", key, None)
        if val is not None:
            scheme[key] = val
    for key in sorted(_SCHEME_INTS):
        val = r.number("scheme", key, None, int)
        if val is not None:
            scheme[key] = val
    sched = r.numbers("scheme", "epsilon_schedule", None)
    if sched is not None:
        scheme["epsilon_schedule"] = sched
    cfg = RunConfig(domain=rect, margin=margin, v0=v0, w0=w0, A0=A0, f=f, scheme=scheme,
                    export_resolution=r.number("output", "resolution", 64.0),
                    out=r.get("output", "dir", "out"), seed=r.number("output", "seed", 0, int))
    try:
        cfg.domain_obj()
        cfg.scheme_config()
    except ConfigError as err:
        raise ConfigError(f"{source}: {err}") from None
    except ValueError as err:
        raise ConfigError(f"{source}: {err}") from None
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return load_config_text(fh.read(), str(path))


__all__ = ["ExprSyntaxError", "RunConfig", "dump_config", "load_config", "load_config_text",
           "parse_expr"]

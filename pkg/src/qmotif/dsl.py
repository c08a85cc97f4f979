"""Motif algebra: unitaries, motif primitives, programs and their text format.

A program is a flat sequence of motifs repeated ``r`` times.  The text
format mirrors the embedded style used when writing programs by hand::

    QPivot(H, "1*")
    QPivot(CP, "1*")
    QMask("1*") * r

Primitive fields that do not apply to a motif kind are held at their
defaults, so two primitives compare equal exactly when they behave the same
way in the compiler.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from typing import Iterator, Optional


class DSLError(ValueError):
    """Invalid pattern, primitive or program."""


class ParseError(DSLError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


VARIADIC = None


class Unitary(enum.Enum):
    H = ("H", 1, 0)
    X = ("X", 1, 0)
    Z = ("Z", 1, 0)
    CP = ("CP", 2, 1)
    MCX = ("MCX", VARIADIC, 0)
    ORACLE = ("ORACLE", VARIADIC, 0)

    def __init__(self, symbol: str, arity: Optional[int], param_count: int):
        self.symbol = symbol
        self.arity = arity
        self.param_count = param_count

    @property
    def variadic(self) -> bool:
        return self.arity is VARIADIC

    @classmethod
    def from_symbol(cls, symbol: str) -> "Unitary":
        key = symbol.upper()
        if key in ("CRPHI", "CPHASE", "CU1"):
            key = "CP"
        for u in cls:
            if u.symbol == key and u is not cls.ORACLE:
                return u
        raise DSLError(f"unknown unitary symbol {symbol!r}")


class Kind(enum.Enum):
    CYCLE = "cycle"
    PIVOT = "pivot"
    MASK = "mask"
    UNMASK = "unmask"
    ORACLE = "oracle"


class Boundary(enum.Enum):
    OPEN = "open"
    PERIODIC = "periodic"


class EdgeOrder(enum.Enum):
    PIVOT_LAST = "pivot_last"
    PIVOT_FIRST = "pivot_first"


# ---------------------------------------------------------------------------
# patterns

_PATTERN_RE = re.compile(r"^[01*]+$")


def validate_pattern(spec: str) -> str:
    if not isinstance(spec, str) or not spec:
        raise DSLError("pattern must be a non-empty string")
    if not _PATTERN_RE.match(spec):
        raise DSLError(f"pattern {spec!r} may only contain '0', '1' and '*'")
    if spec.count("*") > 1:
        raise DSLError(f"pattern {spec!r} has more than one '*'")
    return spec


def resolve_pattern(spec: str, n: int) -> list[int]:
    """Indices in ``range(n)`` selected by a pattern string.

    Without ``*`` the pattern is tiled cyclically and cut to length ``n``
    (``"10"`` picks every other qubit).  A ``*`` stretches to fill the gap
    between the characters before and after it; it fills with ``0`` when the
    pattern holds a ``1`` and with ``1`` otherwise, so ``"1*"`` is the first
    qubit, ``"*1"`` the last, ``"*"`` all of them and ``"0*"`` all but the
    first.  When the fixed characters do not fit into ``n`` positions, the
    selected positions anchored at either end are clamped into range.
    """
    validate_pattern(spec)
    if n < 1:
        raise DSLError("pattern resolution needs n >= 1")
    if "*" not in spec:
        return [i for i in range(n) if spec[i % len(spec)] == "1"]
    prefix, suffix = spec.split("*")
    if "1" not in spec:
        lo, hi = len(prefix), n - len(suffix)
        return list(range(lo, hi)) if lo < hi else []
    picked = {min(i, n - 1) for i, c in enumerate(prefix) if c == "1"}
    base = n - len(suffix)
    picked |= {max(base + j, 0) for j, c in enumerate(suffix) if c == "1"}
    return sorted(picked)


# ---------------------------------------------------------------------------
# primitives

_DEFAULTS = {
    "stride": 1,
    "step": 1,
    "offset": 0,
    "boundary": Boundary.PERIODIC,
    "edge_order": EdgeOrder.PIVOT_LAST,
    "merge": True,
    "share_weights": False,
}

# properties that carry meaning for each kind, in print order
RELEVANT = {
    Kind.CYCLE: ("unitary", "stride", "step", "offset", "boundary", "share_weights"),
    Kind.PIVOT: ("unitary", "pattern", "edge_order", "merge", "share_weights"),
    Kind.MASK: ("pattern",),
    Kind.UNMASK: ("pattern",),
    Kind.ORACLE: (),
}


@dataclass(frozen=True)
class Motif:
    kind: Kind
    unitary: Optional[Unitary] = None
    pattern: Optional[str] = None
    stride: int = 1
    step: int = 1
    offset: int = 0
    boundary: Boundary = Boundary.PERIODIC
    edge_order: EdgeOrder = EdgeOrder.PIVOT_LAST
    merge: bool = True
    share_weights: bool = False

    def __post_init__(self):
        rel = RELEVANT[self.kind]
        if "unitary" in rel:
            if not isinstance(self.unitary, Unitary) or self.unitary is Unitary.ORACLE:
                raise DSLError(f"{self.kind.value} motif needs a gate unitary")
        elif self.unitary is not None:
            raise DSLError(f"{self.kind.value} motif carries no unitary")
        if "pattern" in rel:
            validate_pattern(self.pattern)
        elif self.pattern is not None:
            raise DSLError(f"{self.kind.value} motif carries no pattern")
        for name, default in _DEFAULTS.items():
            value = getattr(self, name)
            if name not in rel and value != default:
                raise DSLError(f"{self.kind.value} motif has no {name} property")
        if self.stride < 1 or self.step < 1 or self.offset < 0:
            raise DSLError("stride and step must be >= 1, offset >= 0")

    def with_property(self, name: str, value) -> "Motif":
        return replace(self, **{name: value})


def cycle(unitary: Unitary, **kw) -> Motif:
    return Motif(Kind.CYCLE, unitary=unitary, **kw)


def pivot(unitary: Unitary, pattern: str, **kw) -> Motif:
    return Motif(Kind.PIVOT, unitary=unitary, pattern=pattern, **kw)


def mask(pattern: str) -> Motif:
    return Motif(Kind.MASK, pattern=pattern)


def unmask(pattern: str) -> Motif:
    return Motif(Kind.UNMASK, pattern=pattern)


def oracle() -> Motif:
    return Motif(Kind.ORACLE)


@dataclass(frozen=True)
class Program:
    """A motif sequence; ``repetitions`` is None when ``r`` is learned."""

    body: tuple[Motif, ...]
    repetitions: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))
        if not self.body:
            raise DSLError("program body must not be empty")
        if self.repetitions is not None and self.repetitions < 1:
            raise DSLError("fixed repetitions must be >= 1")

    def __len__(self) -> int:
        return len(self.body)

    @property
    def oracle_count(self) -> int:
        return sum(m.kind is Kind.ORACLE for m in self.body)

    def __str__(self) -> str:
        return print_program(self)


# ---------------------------------------------------------------------------
# printing

_NAMES = {
    Kind.CYCLE: "QCycle",
    Kind.PIVOT: "QPivot",
    Kind.MASK: "QMask",
    Kind.UNMASK: "QUnmask",
}


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "True" if v else "False"
    if isinstance(v, enum.Enum):
        return v.value
    return str(v)


def print_motif(m: Motif) -> str:
    if m.kind is Kind.ORACLE:
        return "Oracle"
    args = []
    if m.unitary is not None:
        args.append(m.unitary.symbol)
    if m.pattern is not None:
        args.append(f'"{m.pattern}"')
    for name in RELEVANT[m.kind]:
        if name in ("unitary", "pattern"):
            continue
        value = getattr(m, name)
        if value != _DEFAULTS[name]:
            args.append(f"{name}={_fmt_value(value)}")
    return f"{_NAMES[m.kind]}({', '.join(args)})"


def print_program(p: Program) -> str:
    rep = "r" if p.repetitions is None else str(p.repetitions)
    lines = [print_motif(m) for m in p.body]
    lines[-1] += f" * {rep}"
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"[^"\n]*"|'[^'\n]*')
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[()+*,=])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        mt = _TOKEN_RE.match(text, pos)
        if mt is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = mt.lastgroup
        if kind == "nl":
            line, line_start = line + 1, mt.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, mt.group(), line, pos - line_start + 1))
        pos = mt.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


_KIND_BY_NAME = {
    "qcycle": Kind.CYCLE,
    "qpivot": Kind.PIVOT,
    "qmask": Kind.MASK,
    "qunmask": Kind.UNMASK,
    "oracle": Kind.ORACLE,
}

_BOOL = {"true": True, "false": False}


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: Optional[_Tok] = None):
        tok = tok or self.tok
        raise ParseError(msg, tok.line, tok.col)

    def accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")

    def program(self) -> Program:
        # optional "name = (" wrapper
        if self.tok.kind == "ident" and self.toks[self.i + 1].text == "=":
            self.i += 2
        wrapped = self.accept("(")
        body = [self.motif()]
        while True:
            if self.accept("+"):
                body.append(self.motif())
            elif self.tok.kind == "ident":
                body.append(self.motif())
            else:
                break
        if wrapped:
            self.expect(")")
        if self.tok.kind == "eof":  # hand-written text may leave out "* r"
            return Program(tuple(body))
        self.expect("*")
        tok = self.tok
        if tok.kind == "int":
            reps = int(tok.text)
            if reps < 1:
                self.error("repetition count must be >= 1", tok)
        elif tok.kind == "ident" and tok.text == "r":
            reps = None
        else:
            self.error("expected repetition count or 'r'")
        self.i += 1
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r} after repetition")
        return Program(tuple(body), reps)

    def motif(self) -> Motif:
        tok = self.tok
        if tok.kind != "ident":
            self.error("expected a motif")
        kind = _KIND_BY_NAME.get(tok.text.lower())
        if kind is None:
            self.error(f"unknown motif {tok.text!r}")
        self.i += 1
        positional, keywords = [], {}
        if self.accept("("):
            if not self.accept(")"):
                while True:
                    arg = self.tok
                    if arg.kind == "ident" and self.toks[self.i + 1].text == "=":
                        self.i += 2
                        keywords[arg.text] = (self.tok, self.value())
                    else:
                        positional.append((arg, self.value()))
                    if self.accept(")"):
                        break
                    self.expect(",")
        return self.build(kind, tok, positional, keywords)

    def value(self):
        tok = self.tok
        if tok.kind in ("string", "int", "ident"):
            self.i += 1
            return tok
        self.error("expected a value")

    def build(self, kind, head, positional, keywords) -> Motif:
        kw = {}
        wanted = [n for n in RELEVANT[kind] if n in ("unitary", "pattern")]
        if len(positional) > len(wanted):
            self.error(f"too many arguments for {head.text}", positional[len(wanted)][0])
        for name, (tok, val) in zip(wanted, positional):
            kw[name] = (tok, val)
        for name, item in keywords.items():
            if name not in RELEVANT[kind]:
                self.error(f"{head.text} has no property {name!r}", item[0])
            if name in kw:
                self.error(f"duplicate property {name!r}", item[0])
            kw[name] = item
        for name in wanted:
            if name not in kw:
                self.error(f"{head.text} needs a {name}", head)
        out = {}
        for name, (tok, val) in kw.items():
            try:
                out[name] = self.convert(name, val)
            except DSLError as exc:
                raise ParseError(str(exc), tok.line, tok.col) from None
        try:
            return Motif(kind, **out)
        except DSLError as exc:
            raise ParseError(str(exc), head.line, head.col) from None

    @staticmethod
    def convert(name: str, tok: _Tok):
        text = tok.text
        if name == "unitary":
            if tok.kind != "ident":
                raise DSLError("unitary must be a bare symbol")
            return Unitary.from_symbol(text)
        if name == "pattern":
            if tok.kind != "string":
                raise DSLError("pattern must be a quoted string")
            return validate_pattern(text[1:-1])
        if name in ("stride", "step", "offset"):
            if tok.kind != "int":
                raise DSLError(f"{name} must be an integer")
            return int(text)
        if name in ("merge", "share_weights"):
            if text.lower() not in _BOOL:
                raise DSLError(f"{name} must be True or False")
            return _BOOL[text.lower()]
        if name in ("boundary", "edge_order"):
            enum_cls = Boundary if name == "boundary" else EdgeOrder
            try:
                return enum_cls(text.lower())
            except ValueError:
                raise DSLError(f"bad {name} value {text!r}") from None
        raise DSLError(f"unknown property {name!r}")


def parse_program(text: str) -> Program:
    return _Parser(text).program()


def iter_properties(m: Motif) -> Iterator[str]:
    """Names of the mutable properties of a motif."""
    yield from RELEVANT[m.kind]


__all__ = [
    "Boundary", "DSLError", "EdgeOrder", "Kind", "Motif", "ParseError", "Program",
    "Unitary", "VARIADIC", "cycle", "iter_properties", "mask", "oracle", "parse_program",
    "pivot", "print_motif", "print_program", "resolve_pattern", "unmask", "validate_pattern",
]

"""Symbolic scalar expressions over chart coordinates.

A deliberately small expression language: exact rational constants,
coordinate symbols, named constants, sums, products, rational powers,
quotients, unary minus and the function atoms exp/sin/cos/sinh/cosh/
sqrt/abs.  Normalization is a terminating rewrite (constant folding,
flattening, monomial collection, power merging); the trig/exp atoms are
opaque except for their derivative rules.  That is enough to express
every metric coefficient this toolkit works with, and keeps zero-testing
honest: residuals either normalize to the constant 0 or are evaluated
numerically at sampled chart points.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

__all__ = [
    "Expr", "ExprError", "ParseError", "UnknownIdentifierError", "EvaluationError",
    "const", "coord", "sym", "add", "mul", "power", "quot", "neg", "fn",
    "normalize", "differentiate", "evaluate", "evaluate_with_scale",
    "parse", "to_str", "compile_exprs", "is_zero", "ZeroResult",
    "FUNCTIONS", "ZERO", "ONE",
]

FUNCTIONS = ("exp", "sin", "cos", "sinh", "cosh", "sqrt", "abs")

_FN_EVAL: dict[str, Callable[[float], float]] = {
    "exp": math.exp, "sin": math.sin, "cos": math.cos,
    "sinh": math.sinh, "cosh": math.cosh, "sqrt": math.sqrt, "abs": abs,
}

# node kinds, also used as the major component of the canonical sort key
_KINDS = ("const", "coord", "sym", "fn", "pow", "mul", "add", "div", "neg")
_KIND_RANK = {k: i for i, k in enumerate(_KINDS)}


class ExprError(Exception):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ParseError):
    def __init__(self, name: str, offset: int, admissible: Sequence[str]):
        msg = f"unknown identifier {name!r}; admissible names: {', '.join(sorted(admissible))}"
        super().__init__(msg, offset)
        self.name = name
        self.admissible = tuple(sorted(admissible))


class EvaluationError(ExprError):
    def __init__(self, message: str, subexpr: "Expr | None" = None):
        if subexpr is not None:
            message = f"{message} in {to_str(subexpr)!r}"
        super().__init__(message)
        self.subexpr = subexpr


class Expr:
    """Immutable expression node; compare/hash structurally."""

    __slots__ = ("kind", "args", "value", "name", "_hash", "_key")

    def __init__(self, kind: str, args: tuple = (), value: Fraction | None = None,
                 name: str | None = None):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "args", args)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "_hash", None)
        object.__setattr__(self, "_key", None)

    def __setattr__(self, *a):
        raise AttributeError("Expr is immutable")

    def __hash__(self):
        h = self._hash
        if h is None:
            h = hash((self.kind, self.args, self.value, self.name))
            object.__setattr__(self, "_hash", h)
        return h

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return (self.kind == other.kind and self.value == other.value
                and self.name == other.name and self.args == other.args)

    def key(self):
        """Canonical total order used to sort commutative operands."""
        k = self._key
        if k is None:
            payload: tuple
            if self.kind == "const":
                payload = (self.value.numerator, self.value.denominator)
            elif self.kind in ("coord", "sym"):
                payload = (self.name,)
            elif self.kind == "fn":
                payload = (self.name, self.args[0].key())
            elif self.kind == "pow":
                payload = (self.args[0].key(), self.value.numerator, self.value.denominator)
            else:
                payload = tuple(a.key() for a in self.args)
            k = (_KIND_RANK[self.kind], payload)
            object.__setattr__(self, "_key", k)
        return k

    def __repr__(self):
        return f"Expr({to_str(self)})"

    def __str__(self):
        return to_str(self)

    # arithmetic sugar; results are normalized
    def __add__(self, other):
        return normalize(add(self, _as_expr(other)))

    def __radd__(self, other):
        return normalize(add(_as_expr(other), self))

    def __sub__(self, other):
        return normalize(add(self, neg(_as_expr(other))))

    def __rsub__(self, other):
        return normalize(add(_as_expr(other), neg(self)))

    def __mul__(self, other):
        return normalize(mul(self, _as_expr(other)))

    def __rmul__(self, other):
        return normalize(mul(_as_expr(other), self))

    def __truediv__(self, other):
        return normalize(quot(self, _as_expr(other)))

    def __rtruediv__(self, other):
        return normalize(quot(_as_expr(other), self))

    def __pow__(self, exponent):
        return normalize(power(self, exponent))

    def __neg__(self):
        return normalize(neg(self))


def _as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return const(x)
    if isinstance(x, float):
        if x == int(x):
            return const(int(x))
        return const(Fraction(x).limit_denominator(10**12))
    raise TypeError(f"cannot coerce {x!r} to Expr")


# ---------------------------------------------------------------------------
# constructors

def const(q) -> Expr:
    return Expr("const", value=Fraction(q))


def coord(name: str) -> Expr:
    return Expr("coord", name=name)


def sym(name: str) -> Expr:
    """Named constant, bound only at evaluation time."""
    return Expr("sym", name=name)


def add(*terms: Expr) -> Expr:
    return Expr("add", args=tuple(terms))


def mul(*factors) -> Expr:
    return Expr("mul", args=tuple(_as_expr(f) for f in factors))


def power(base: Expr, exponent) -> Expr:
    return Expr("pow", args=(base,), value=Fraction(exponent))


def quot(a: Expr, b: Expr) -> Expr:
    return Expr("div", args=(a, b))


def neg(a: Expr) -> Expr:
    return Expr("neg", args=(a,))


def fn(name: str, arg: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ExprError(f"unknown function {name!r}")
    return Expr("fn", args=(arg,), name=name)


ZERO = const(0)
ONE = const(1)


# ---------------------------------------------------------------------------
# normalization

_norm_cache: dict[Expr, Expr] = {}

_FN_AT_ZERO = {"exp": ONE, "sin": ZERO, "cos": ONE, "sinh": ZERO, "cosh": ONE, "sqrt": ZERO}


def normalize(e: Expr) -> Expr:
    cached = _norm_cache.get(e)
    if cached is not None:
        return cached
    out = _normalize(e)
    _norm_cache[e] = out
    _norm_cache[out] = out
    return out


def _normalize(e: Expr) -> Expr:
    k = e.kind
    if k in ("const", "coord", "sym"):
        return e
    if k == "neg":
        return _norm_mul([const(-1), normalize(e.args[0])])
    if k == "div":
        a, b = (normalize(x) for x in e.args)
        return _norm_mul([a, _norm_pow(b, Fraction(-1))])
    if k == "fn":
        arg = normalize(e.args[0])
        if arg.kind == "const":
            if arg.value == 0 and e.name in _FN_AT_ZERO:
                return _FN_AT_ZERO[e.name]
            if e.name == "abs":
                return const(abs(arg.value))
            if e.name == "sqrt" and arg.value in (0, 1):
                return const(arg.value)
        return fn(e.name, arg)
    if k == "pow":
        return _norm_pow(normalize(e.args[0]), e.value)
    if k == "mul":
        return _norm_mul([normalize(a) for a in e.args])
    if k == "add":
        return _norm_add([normalize(a) for a in e.args])
    raise ExprError(f"unknown node kind {k!r}")


def _norm_pow(base: Expr, q: Fraction) -> Expr:
    if q == 0:
        return ONE
    if q == 1:
        return base
    if base.kind == "const":
        if base.value == 0:
            if q < 0:
                raise ExprError("0 raised to a negative power")
            return ZERO
        if base.value == 1:
            return ONE
        if q.denominator == 1:
            return const(base.value ** q.numerator)
    if base.kind == "pow" and q.denominator == 1:
        # (b^a)^k = b^(ak) is exact for integer k on the admissible domain
        return _norm_pow(base.args[0], base.value * q)
    if base.kind == "mul" and q.denominator == 1:
        return _norm_mul([_norm_pow(f, q) for f in base.args])
    return power(base, q)


def _split_coeff(e: Expr) -> tuple[Fraction, Expr | None]:
    """Split a normalized non-add node into (rational coefficient, monomial)."""
    if e.kind == "const":
        return e.value, None
    if e.kind == "mul" and e.args[0].kind == "const":
        rest = e.args[1:]
        mono = rest[0] if len(rest) == 1 else Expr("mul", args=rest)
        return e.args[0].value, mono
    return Fraction(1), e


def _base_exp(f: Expr) -> tuple[Expr, Fraction]:
    if f.kind == "pow":
        return f.args[0], f.value
    return f, Fraction(1)


def _norm_mul(factors: list[Expr]) -> Expr:
    coeff = Fraction(1)
    powers: dict[Expr, Fraction] = {}
    order: list[Expr] = []
    stack = list(factors)
    while stack:
        f = stack.pop(0)
        if f.kind == "mul":
            stack = list(f.args) + stack
            continue
        if f.kind == "const":
            coeff *= f.value
            continue
        base, q = _base_exp(f)
        if base not in powers:
            powers[base] = Fraction(0)
            order.append(base)
        powers[base] += q
    if coeff == 0:
        return ZERO
    out: list[Expr] = []
    for base in sorted(order, key=Expr.key):
        q = powers[base]
        if q == 0:
            continue
        p = _norm_pow(base, q)
        if p.kind == "const":
            coeff *= p.value
        else:
            out.append(p)
    if not out:
        return const(coeff)
    if coeff != 1:
        out = [const(coeff)] + out
    if len(out) == 1:
        return out[0]
    return Expr("mul", args=tuple(out))


def _norm_add(terms: list[Expr]) -> Expr:
    coeffs: dict[Expr | None, Fraction] = {}
    order: list[Expr | None] = []
    stack = list(terms)
    while stack:
        t = stack.pop(0)
        if t.kind == "add":
            stack = list(t.args) + stack
            continue
        c, mono = _split_coeff(t)
        if mono not in coeffs:
            coeffs[mono] = Fraction(0)
            order.append(mono)
        coeffs[mono] += c
    out: list[Expr] = []
    constant = coeffs.pop(None, Fraction(0))
    for mono in sorted((m for m in order if m is not None and coeffs[m] != 0), key=Expr.key):
        c = coeffs[mono]
        if c == 1:
            out.append(mono)
        elif mono.kind == "mul":
            out.append(_norm_mul([const(c)] + list(mono.args)))
        else:
            out.append(Expr("mul", args=(const(c), mono)))
    if constant != 0:
        out = [const(constant)] + out
    if not out:
        return ZERO
    if len(out) == 1:
        return out[0]
    return Expr("add", args=tuple(out))


# ---------------------------------------------------------------------------
# differentiation

_diff_cache: dict[tuple[Expr, str], Expr] = {}


def differentiate(e: Expr, x: str) -> Expr:
    """Exact partial derivative with respect to coordinate `x`, normalized."""
    e = normalize(e)
    key = (e, x)
    got = _diff_cache.get(key)
    if got is not None:
        return got
    out = normalize(_diff(e, x))
    _diff_cache[key] = out
    return out


def _diff(e: Expr, x: str) -> Expr:
    k = e.kind
    if k in ("const", "sym"):
        return ZERO
    if k == "coord":
        return ONE if e.name == x else ZERO
    if k == "add":
        return add(*(_diff(a, x) for a in e.args))
    if k == "mul":
        terms = []
        for i, f in enumerate(e.args):
            rest = e.args[:i] + e.args[i + 1:]
            terms.append(mul(_diff(f, x), *rest))
        return add(*terms)
    if k == "pow":
        base = e.args[0]
        return mul(const(e.value), power(base, e.value - 1), _diff(base, x))
    if k == "fn":
        u = e.args[0]
        du = _diff(u, x)
        name = e.name
        if name == "exp":
            outer = e
        elif name == "sin":
            outer = fn("cos", u)
        elif name == "cos":
            outer = neg(fn("sin", u))
        elif name == "sinh":
            outer = fn("cosh", u)
        elif name == "cosh":
            outer = fn("sinh", u)
        elif name == "sqrt":
            outer = quot(const(Fraction(1, 2)), e)
        elif name == "abs":
            # u/|u| away from the zero locus
            outer = quot(u, e)
        else:  # pragma: no cover
            raise ExprError(f"no derivative rule for {name}")
        return mul(outer, du)
    if k == "div":
        a, b = e.args
        return quot(add(mul(_diff(a, x), b), neg(mul(a, _diff(b, x)))), mul(b, b))
    if k == "neg":
        return neg(_diff(e.args[0], x))
    raise ExprError(f"unknown node kind {k!r}")


def free_symbols(e: Expr) -> set[str]:
    out: set[str] = set()
    stack = [e]
    while stack:
        cur = stack.pop()
        if cur.kind in ("coord", "sym"):
            out.add(cur.name)
        stack.extend(cur.args)
    return out


def depends_on(e: Expr, name: str) -> bool:
    return name in free_symbols(e)


# ---------------------------------------------------------------------------
# evaluation

def _bindings(point, constants) -> Mapping[str, float]:
    if hasattr(point, "bindings"):  # geometry.Point
        env = dict(point.bindings())
    else:
        env = dict(point)
    if constants:
        env.update(constants)
    return env


def evaluate(e: Expr, point, constants: Mapping[str, float] | None = None) -> float:
    """Evaluate at a point (geometry.Point or name->value mapping).

    Domain violations (sqrt of a negative, division by zero, negative base
    with fractional exponent) raise EvaluationError naming the offending
    subexpression; there is no silent NaN.
    """
    env = _bindings(point, constants)
    return _eval(e, env)


def _eval(e: Expr, env: Mapping[str, float]) -> float:
    k = e.kind
    if k == "const":
        return float(e.value)
    if k in ("coord", "sym"):
        try:
            return float(env[e.name])
        except KeyError:
            raise EvaluationError(f"unbound symbol {e.name!r}", e) from None
    if k == "add":
        return math.fsum(_eval(a, env) for a in e.args)
    if k == "mul":
        out = 1.0
        for a in e.args:
            out *= _eval(a, env)
        return out
    if k == "pow":
        return _pow_val(_eval(e.args[0], env), e.value, e)
    if k == "div":
        num = _eval(e.args[0], env)
        den = _eval(e.args[1], env)
        if den == 0.0:
            raise EvaluationError("division by zero", e)
        return num / den
    if k == "neg":
        return -_eval(e.args[0], env)
    if k == "fn":
        u = _eval(e.args[0], env)
        if e.name == "sqrt" and u < 0.0:
            raise EvaluationError("sqrt of negative value", e)
        try:
            return _FN_EVAL[e.name](u)
        except (ValueError, OverflowError) as exc:
            raise EvaluationError(f"domain error: {exc}", e) from None
    raise ExprError(f"unknown node kind {k!r}")


def _pow_val(base: float, q: Fraction, e: Expr | None = None) -> float:
    if q.denominator == 1:
        p = q.numerator
        if base == 0.0 and p < 0:
            raise EvaluationError("zero raised to a negative power", e)
        return base ** p
    if base < 0.0:
        raise EvaluationError("negative base with fractional exponent", e)
    if base == 0.0 and q < 0:
        raise EvaluationError("zero raised to a negative power", e)
    try:
        return math.pow(base, float(q))
    except (ValueError, OverflowError) as exc:
        raise EvaluationError(f"domain error: {exc}", e) from None


def evaluate_with_scale(e: Expr, point, constants: Mapping[str, float] | None = None) -> tuple[float, float]:
    """Value plus the largest |subterm| met along the way (for relative zero tests)."""
    env = _bindings(point, constants)

    def rec(x: Expr) -> tuple[float, float]:
        if not x.args:
            v = _eval(x, env)
            return v, abs(v)
        vals = []
        scale = 0.0
        for a in x.args:
            v, s = rec(a)
            vals.append(v)
            scale = max(scale, s)
        if x.kind == "add":
            v = math.fsum(vals)
        elif x.kind == "mul":
            v = 1.0
            for u in vals:
                v *= u
        elif x.kind == "pow":
            v = _pow_val(vals[0], x.value, x)
        elif x.kind == "div":
            if vals[1] == 0.0:
                raise EvaluationError("division by zero", x)
            v = vals[0] / vals[1]
        elif x.kind == "neg":
            v = -vals[0]
        elif x.kind == "fn":
            if x.name == "sqrt" and vals[0] < 0.0:
                raise EvaluationError("sqrt of negative value", x)
            try:
                v = _FN_EVAL[x.name](vals[0])
            except (ValueError, OverflowError) as exc:
                raise EvaluationError(f"domain error: {exc}", x) from None
        else:  # pragma: no cover
            raise ExprError(x.kind)
        return v, max(scale, abs(v))

    return rec(normalize(e))


# ---------------------------------------------------------------------------
# zero testing

@dataclass(frozen=True)
class ZeroResult:
    status: str  # "proven-zero" | "numerically-zero" | "nonzero"
    witness: dict | None = None
    max_residual: float = 0.0

    def __bool__(self):
        return self.status != "nonzero"


def is_zero(e: Expr, box: Mapping[str, tuple[float, float]], trials: int = 20,
            constants: Mapping[str, float] | None = None, seed: int = 0,
            tol: float = 1e-9) -> ZeroResult:
    """Tri-state zero test: symbolic fast path, then sampled evaluation.

    numerically-zero means |e| < tol*(1+scale) at every trial point, where
    scale is the largest absolute subterm value seen at that point.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    en = normalize(e)
    if en.kind == "const" and en.value == 0:
        return ZeroResult("proven-zero")
    rng = random.Random(seed)
    names = list(box)
    worst = 0.0
    done = 0
    failures = 0
    while done < trials:
        pt = {nm: rng.uniform(*box[nm]) for nm in names}
        try:
            v, scale = evaluate_with_scale(en, pt, constants)
        except EvaluationError:
            failures += 1
            if failures > 20 * trials:
                raise EvaluationError("persistent domain errors while sampling", en)
            continue
        done += 1
        rel = abs(v) / (1.0 + scale)
        worst = max(worst, rel)
        if rel >= tol:
            return ZeroResult("nonzero", witness={**pt, "value": v}, max_residual=rel)
    return ZeroResult("numerically-zero", max_residual=worst)


# ---------------------------------------------------------------------------
# parsing

class _Token:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind, text, pos):
        self.kind, self.text, self.pos = kind, text, pos


def _tokenize(text: str) -> list[_Token]:
    toks = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                if text[j] == ".":
                    seen_dot = True
                j += 1
            toks.append(_Token("num", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(_Token("name", text[i:j], i))
            i = j
            continue
        if c in "+-*/^()":
            toks.append(_Token(c, c, i))
            i += 1
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    toks.append(_Token("end", "", n))
    return toks


class _Parser:
    """Recursive descent over: sum -> term (('+'|'-') term)*;
    term -> unary (('*'|'/') unary)*; unary -> '-' unary | power;
    power -> atom ('^' exponent)?  with '^' binding tighter than unary minus.
    """

    def __init__(self, text: str, coords: Sequence[str], constants: Sequence[str]):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.coords = tuple(coords)
        self.constants = tuple(constants)

    def peek(self) -> _Token:
        return self.toks[self.i]

    def next(self) -> _Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str) -> _Token:
        t = self.next()
        if t.kind != kind:
            raise ParseError(f"expected {kind!r}, found {t.text or 'end of input'!r}", t.pos)
        return t

    def parse(self) -> Expr:
        e = self.sum()
        t = self.peek()
        if t.kind != "end":
            raise ParseError(f"unexpected trailing input {t.text!r}", t.pos)
        return e

    def sum(self) -> Expr:
        terms = [self.term()]
        while self.peek().kind in "+-":
            op = self.next().kind
            t = self.term()
            terms.append(t if op == "+" else neg(t))
        return terms[0] if len(terms) == 1 else add(*terms)

    def term(self) -> Expr:
        e = self.unary()
        while self.peek().kind in "*/":
            op = self.next().kind
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else quot(e, rhs)
        return e

    def unary(self) -> Expr:
        if self.peek().kind == "-":
            self.next()
            return neg(self.unary())
        return self.powered()

    def powered(self) -> Expr:
        base = self.atom()
        if self.peek().kind == "^":
            self.next()
            return power(base, self.exponent())
        return base

    def exponent(self) -> Fraction:
        # signed integer/decimal, or parenthesized signed rational p/q
        t = self.peek()
        if t.kind == "(":
            self.next()
            q = self.signed_number()
            if self.peek().kind == "/":
                self.next()
                q = q / self.signed_number()
            self.expect(")")
            return q
        return self.signed_number()

    def signed_number(self) -> Fraction:
        sign = 1
        while self.peek().kind == "-":
            self.next()
            sign = -sign
        t = self.expect("num")
        return sign * _number_value(t.text)

    def atom(self) -> Expr:
        t = self.next()
        if t.kind == "num":
            return const(_number_value(t.text))
        if t.kind == "(":
            e = self.sum()
            self.expect(")")
            return e
        if t.kind == "name":
            if t.text in FUNCTIONS and self.peek().kind == "(":
                self.next()
                arg = self.sum()
                self.expect(")")
                return fn(t.text, arg)
            if t.text in self.coords:
                return coord(t.text)
            if t.text in self.constants:
                return sym(t.text)
            admissible = list(self.coords) + list(self.constants) + list(FUNCTIONS)
            raise UnknownIdentifierError(t.text, t.pos, admissible)
        raise ParseError(f"unexpected token {t.text or 'end of input'!r}", t.pos)


def _number_value(text: str) -> Fraction:
    if "." in text:
        intpart, frac = text.split(".")
        denom = 10 ** len(frac)
        return Fraction(int(intpart or "0") * denom + int(frac or "0"), denom)
    return Fraction(int(text))


def parse(text: str, coordinates: Sequence[str], constants: Sequence[str] = ()) -> Expr:
    """Parse `text` over the given coordinate/constant names; returns the
    normalized tree.  Raises ParseError (with byte offset) or
    UnknownIdentifierError.
    """
    return normalize(_Parser(text, coordinates, constants).parse())


# ---------------------------------------------------------------------------
# printing (round-trips through parse)

def _prec(e: Expr) -> int:
    if e.kind == "add":
        return 1
    if e.kind in ("mul", "div"):
        return 2
    if e.kind == "neg":
        return 2
    if e.kind == "pow":
        return 3
    return 4


def to_str(e: Expr) -> str:
    k = e.kind
    if k == "const":
        q = e.value
        if q.denominator == 1:
            return str(q.numerator) if q >= 0 else f"(-{-q.numerator})"
        s = f"{abs(q.numerator)}/{q.denominator}"
        return f"({'-' if q < 0 else ''}{s})"
    if k in ("coord", "sym"):
        return e.name
    if k == "fn":
        return f"{e.name}({to_str(e.args[0])})"
    if k == "pow":
        base = e.args[0]
        bs = to_str(base)
        if _prec(base) < 4:
            bs = f"({bs})"
        q = e.value
        if q.denominator == 1 and q >= 0:
            return f"{bs}^{q.numerator}"
        if q.denominator == 1:
            return f"{bs}^(-{-q.numerator})"
        sgn = "-" if q < 0 else ""
        return f"{bs}^({sgn}{abs(q.numerator)}/{q.denominator})"
    if k == "neg":
        a = e.args[0]
        s = to_str(a)
        if _prec(a) < 3:
            s = f"({s})"
        return f"-{s}"
    if k == "div":
        a, b = e.args
        sa = to_str(a) if _prec(a) >= 2 else f"({to_str(a)})"
        sb = to_str(b) if _prec(b) >= 3 else f"({to_str(b)})"
        return f"{sa}/{sb}"
    if k == "mul":
        parts = []
        for a in e.args:
            s = to_str(a)
            if _prec(a) < 2 or (a.kind == "const" and a.value < 0 and parts):
                s = f"({s})"
            parts.append(s)
        return "*".join(parts)
    if k == "add":
        out = to_str(e.args[0])
        for a in e.args[1:]:
            c, _ = _split_coeff(a)
            if c < 0:
                # print t + (-c)*mono as a subtraction
                pos = _norm_mul([const(-1), a])
                s = to_str(pos)
                if _prec(pos) < 2:
                    s = f"({s})"
                out += f" - {s}"
            else:
                s = to_str(a)
                if _prec(a) < 1:
                    s = f"({s})"
                out += f" + {s}"
        return out
    raise ExprError(f"unknown node kind {k!r}")


# ---------------------------------------------------------------------------
# compiled evaluation (fast path for tensor machinery)

_compile_cache: dict = {}


def compile_exprs(exprs: Sequence[Expr], coordinates: Sequence[str],
                  constants: Mapping[str, float] | None = None) -> Callable:
    """Compile a list of expressions into one fast function values -> list.

    The returned callable takes a sequence of coordinate values (same order
    as `coordinates`) and returns a list of floats.  Semantics match
    `evaluate`, including domain errors (raised as EvaluationError).
    """
    key = (tuple(normalize(e) for e in exprs), tuple(coordinates),
           tuple(sorted((constants or {}).items())))
    got = _compile_cache.get(key)
    if got is not None:
        return got

    names = {}
    env = {"_m": math, "_pw": _pow_val, "_F": Fraction}
    for i, c in enumerate(coordinates):
        names[c] = f"_x[{i}]"
    for cn, cv in (constants or {}).items():
        if cn not in names:
            names[cn] = repr(float(cv))

    def emit(e: Expr) -> str:
        k = e.kind
        if k == "const":
            if e.value.denominator == 1:
                return f"({float(e.value)!r})"
            return f"({e.value.numerator}/{e.value.denominator})"
        if k in ("coord", "sym"):
            if e.name not in names:
                raise EvaluationError(f"unbound symbol {e.name!r}", e)
            return names[e.name]
        if k == "add":
            return "(" + "+".join(emit(a) for a in e.args) + ")"
        if k == "mul":
            return "(" + "*".join(emit(a) for a in e.args) + ")"
        if k == "pow":
            q = e.value
            if q.denominator == 1 and -4 <= q.numerator <= 4:
                return f"({emit(e.args[0])})**({q.numerator})"
            return f"_pw({emit(e.args[0])}, _F({q.numerator},{q.denominator}))"
        if k == "fn":
            inner = emit(e.args[0])
            if e.name == "abs":
                return f"abs({inner})"
            return f"_m.{e.name}({inner})"
        if k == "div":
            return f"({emit(e.args[0])})/({emit(e.args[1])})"
        if k == "neg":
            return f"(-({emit(e.args[0])}))"
        raise ExprError(k)

    body = ",".join(emit(normalize(e)) for e in exprs)
    src = f"def _f(_x):\n    return [{body}]\n"
    ns = dict(env)
    exec(src, ns)  # noqa: S102 - generated from our own AST
    raw = ns["_f"]

    def wrapped(values):
        try:
            return raw(values)
        except ZeroDivisionError:
            raise EvaluationError("division by zero") from None
        except (ValueError, OverflowError) as exc:
            raise EvaluationError(f"domain error: {exc}") from None

    _compile_cache[key] = wrapped
    return wrapped

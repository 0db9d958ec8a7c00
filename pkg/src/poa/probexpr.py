"""Symbolic probability expressions.

The analysis manipulates expressions built from exact rationals, symbolic
parameters, arithmetic, min/max, indicator terms C(condition), sums over the
whole integer domain and finite indexed products.  Source-program fragments
that have not been eliminated yet are carried as embedded expressions with an
explicit environment, so every intermediate form stays evaluable.

Everything here is immutable; evaluation is exact rational arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Union

from . import lang


# ---------------------------------------------------------------------------
# Expression nodes


@dataclass(frozen=True)
class Lit:
    value: object  # Fraction | bool | tuple


@dataclass(frozen=True)
class Sym:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "ProbExpr"


@dataclass(frozen=True)
class Add:
    left: "ProbExpr"
    right: "ProbExpr"


@dataclass(frozen=True)
class Sub:
    left: "ProbExpr"
    right: "ProbExpr"


@dataclass(frozen=True)
class Mul:
    left: "ProbExpr"
    right: "ProbExpr"


@dataclass(frozen=True)
class Div:
    left: "ProbExpr"
    right: "ProbExpr"


@dataclass(frozen=True)
class Pow:
    base: "ProbExpr"
    exponent: "ProbExpr"


@dataclass(frozen=True)
class MinE:
    left: "ProbExpr"
    right: "ProbExpr"


@dataclass(frozen=True)
class MaxE:
    left: "ProbExpr"
    right: "ProbExpr"


@dataclass(frozen=True)
class Len:
    arg: "ProbExpr"


@dataclass(frozen=True)
class Indicator:
    cond: "BoolExpr"


@dataclass(frozen=True)
class SumOver:
    """Sum of `body` over every integer value of `var`."""

    var: str
    body: "ProbExpr"


@dataclass(frozen=True)
class FinProd:
    """Product of `body` for var = lower..upper; empty ranges give 1."""

    var: str
    lower: "ProbExpr"
    upper: "ProbExpr"
    body: "ProbExpr"


@dataclass(frozen=True)
class CallP:
    name: str
    args: tuple


@dataclass(frozen=True)
class SrcExpr:
    """A source-language fragment embedded in a probability expression.

    `env` binds the fragment's free variables to probability expressions; the
    fragment is interpreted once those evaluate to concrete values.
    """

    expr: object  # lang.Expr
    env: tuple  # ((name, ProbExpr), ...) sorted by name

    def env_map(self) -> dict:
        return dict(self.env)


ProbExpr = Union[Lit, Sym, Neg, Add, Sub, Mul, Div, Pow, MinE, MaxE, Len, Indicator, SumOver, FinProd, CallP, SrcExpr]


# Boolean layer


@dataclass(frozen=True)
class BLit:
    value: bool


@dataclass(frozen=True)
class Cmp:
    op: str  # = != < <= > >=
    left: ProbExpr
    right: ProbExpr


@dataclass(frozen=True)
class Range:
    """lower <= var <= upper with either bound optional."""

    var: str
    lower: Optional[ProbExpr]
    upper: Optional[ProbExpr]


@dataclass(frozen=True)
class BAnd:
    left: "BoolExpr"
    right: "BoolExpr"


@dataclass(frozen=True)
class BOr:
    left: "BoolExpr"
    right: "BoolExpr"


@dataclass(frozen=True)
class BNot:
    arg: "BoolExpr"


@dataclass(frozen=True)
class ElemsIn:
    """All elements of the list `var` lie in [lower, upper]."""

    var: str
    lower: ProbExpr
    upper: ProbExpr


BoolExpr = Union[BLit, Cmp, Range, BAnd, BOr, BNot, ElemsIn]


def rat(x) -> Lit:
    return Lit(Fraction(x))


ZERO = rat(0)
ONE = rat(1)


def make_src(expr, env: Mapping[str, ProbExpr]) -> SrcExpr:
    return SrcExpr(expr, tuple(sorted(env.items())))


# ---------------------------------------------------------------------------
# Errors


class ProbError(Exception):
    """Base error for probability-expression evaluation."""


class UnboundSymbolError(ProbError):
    pass


class UnboundedSumError(ProbError):
    pass


class DivisionByZeroError(ProbError):
    pass


class EvalBudgetError(ProbError):
    pass


class EvalNonTerminated(ProbError):
    """An embedded source call did not terminate within the step budget."""


# ---------------------------------------------------------------------------
# Free symbols and substitution


def free_symbols(e) -> frozenset:
    if isinstance(e, Lit):
        return frozenset()
    if isinstance(e, Sym):
        return frozenset([e.name])
    if isinstance(e, (Neg, Len)):
        return free_symbols(e.arg)
    if isinstance(e, (Add, Sub, Mul, Div, MinE, MaxE)):
        return free_symbols(e.left) | free_symbols(e.right)
    if isinstance(e, Pow):
        return free_symbols(e.base) | free_symbols(e.exponent)
    if isinstance(e, Indicator):
        return free_symbols(e.cond)
    if isinstance(e, SumOver):
        return free_symbols(e.body) - {e.var}
    if isinstance(e, FinProd):
        return free_symbols(e.lower) | free_symbols(e.upper) | (free_symbols(e.body) - {e.var})
    if isinstance(e, CallP):
        out: frozenset = frozenset()
        for a in e.args:
            out |= free_symbols(a)
        return out
    if isinstance(e, SrcExpr):
        out = frozenset()
        for _, v in e.env:
            out |= free_symbols(v)
        return out
    if isinstance(e, BLit):
        return frozenset()
    if isinstance(e, Cmp):
        return free_symbols(e.left) | free_symbols(e.right)
    if isinstance(e, Range):
        out = frozenset([e.var])
        if e.lower is not None:
            out |= free_symbols(e.lower)
        if e.upper is not None:
            out |= free_symbols(e.upper)
        return out
    if isinstance(e, (BAnd, BOr)):
        return free_symbols(e.left) | free_symbols(e.right)
    if isinstance(e, BNot):
        return free_symbols(e.arg)
    if isinstance(e, ElemsIn):
        return frozenset([e.var]) | free_symbols(e.lower) | free_symbols(e.upper)
    raise TypeError(f"not an expression: {e!r}")


class NameSupply:
    """Deterministic fresh-name source; never returns a name already in use."""

    def __init__(self, used: Iterable[str] = ()):
        self._used = set(used)

    def reserve(self, names: Iterable[str]) -> None:
        self._used.update(names)

    def fresh(self, base: str) -> str:
        if base not in self._used:
            self._used.add(base)
            return base
        k = 1
        while f"{base}{k}" in self._used:
            k += 1
        name = f"{base}{k}"
        self._used.add(name)
        return name


def subst(e, mapping: Mapping[str, ProbExpr], supply: Optional[NameSupply] = None):
    """Capture-avoiding substitution of free symbols."""
    if not mapping:
        return e
    if supply is None:
        used = set(free_symbols(e))
        for v in mapping.values():
            used |= free_symbols(v)
        supply = NameSupply(used)

    def go(x, m):
        if not m:
            return x
        if isinstance(x, (Lit, BLit)):
            return x
        if isinstance(x, Sym):
            return m.get(x.name, x)
        if isinstance(x, Neg):
            return Neg(go(x.arg, m))
        if isinstance(x, Len):
            return Len(go(x.arg, m))
        if isinstance(x, (Add, Sub, Mul, Div, MinE, MaxE)):
            return type(x)(go(x.left, m), go(x.right, m))
        if isinstance(x, Pow):
            return Pow(go(x.base, m), go(x.exponent, m))
        if isinstance(x, Indicator):
            return Indicator(go(x.cond, m))
        if isinstance(x, SumOver):
            inner = {k: v for k, v in m.items() if k != x.var}
            var = x.var
            body = x.body
            if any(var in free_symbols(v) for v in inner.values()):
                new = supply.fresh(var)
                body = go(body, {var: Sym(new)})
                var = new
            return SumOver(var, go(body, inner))
        if isinstance(x, FinProd):
            lower = go(x.lower, m)
            upper = go(x.upper, m)
            inner = {k: v for k, v in m.items() if k != x.var}
            var = x.var
            body = x.body
            if any(var in free_symbols(v) for v in inner.values()):
                new = supply.fresh(var)
                body = go(body, {var: Sym(new)})
                var = new
            return FinProd(var, lower, upper, go(body, inner))
        if isinstance(x, CallP):
            return CallP(x.name, tuple(go(a, m) for a in x.args))
        if isinstance(x, SrcExpr):
            return SrcExpr(x.expr, tuple((k, go(v, m)) for k, v in x.env))
        if isinstance(x, Cmp):
            return Cmp(x.op, go(x.left, m), go(x.right, m))
        if isinstance(x, Range):
            lower = None if x.lower is None else go(x.lower, m)
            upper = None if x.upper is None else go(x.upper, m)
            if x.var in m:
                target = m[x.var]
                if isinstance(target, Sym):
                    return Range(target.name, lower, upper)
                # a non-variable replacement turns the range into plain comparisons
                conj = []
                if lower is not None:
                    conj.append(Cmp("<=", lower, target))
                if upper is not None:
                    conj.append(Cmp("<=", target, upper))
                if not conj:
                    return BLit(True)
                out = conj[0]
                for c in conj[1:]:
                    out = BAnd(out, c)
                return out
            return Range(x.var, lower, upper)
        if isinstance(x, (BAnd, BOr)):
            return type(x)(go(x.left, m), go(x.right, m))
        if isinstance(x, BNot):
            return BNot(go(x.arg, m))
        if isinstance(x, ElemsIn):
            if x.var in m:
                target = m[x.var]
                if not isinstance(target, Sym):
                    raise ProbError("cannot substitute a non-variable into a list constraint")
                return ElemsIn(target.name, go(x.lower, m), go(x.upper, m))
            return ElemsIn(x.var, go(x.lower, m), go(x.upper, m))
        raise TypeError(f"not an expression: {x!r}")

    return go(e, dict(mapping))


# ---------------------------------------------------------------------------
# Evaluation


class _Poison:
    def __repr__(self) -> str:
        return "<nonterminated>"


_NONTERM = _Poison()


@dataclass
class EvalContext:
    """Everything evaluation may need besides variable bindings."""

    prob_functions: Mapping[str, tuple] = field(default_factory=dict)  # name -> (params, body)
    program: Optional[lang.Program] = None
    step_budget: int = 10_000
    max_summands: int = 500_000

    def __post_init__(self):
        self._summands = 0

    def spend_summand(self, n: int = 1) -> None:
        self._summands += n
        if self._summands > self.max_summands:
            raise EvalBudgetError(f"evaluation exceeded {self.max_summands} summand expansions")


def eval_prob(expr: ProbExpr, bindings: Mapping[str, object], ctx: Optional[EvalContext] = None) -> Fraction:
    """Evaluate to an exact rational; all free symbols must be bound."""
    ctx = ctx or EvalContext()
    v = _eval(expr, dict(bindings), ctx)
    if v is _NONTERM:
        raise EvalNonTerminated("embedded call did not terminate")
    if isinstance(v, bool) or isinstance(v, tuple):
        raise ProbError(f"expression evaluated to a non-numeric value: {v!r}")
    return Fraction(v)


def eval_bool(cond: BoolExpr, bindings: Mapping[str, object], ctx: Optional[EvalContext] = None) -> bool:
    ctx = ctx or EvalContext()
    v = _eval_bool(cond, dict(bindings), ctx)
    if v is _NONTERM:
        raise EvalNonTerminated("embedded call did not terminate")
    return v


def _coerce_value(v):
    """Convert an evaluation result to a source-language value."""
    if v is _NONTERM:
        return _NONTERM
    if isinstance(v, Fraction):
        if v.denominator != 1:
            raise ProbError(f"non-integer value {v} used where a source value is required")
        return int(v)
    return v


def _eval(e, env: dict, ctx: EvalContext):
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Sym):
        if e.name not in env:
            raise UnboundSymbolError(f"unbound symbol {e.name!r}")
        v = env[e.name]
        if isinstance(v, bool) or isinstance(v, tuple):
            return v
        return Fraction(v)
    if isinstance(e, Neg):
        v = _eval(e.arg, env, ctx)
        return _NONTERM if v is _NONTERM else -_as_num(v)
    if isinstance(e, (Add, Sub, Mul, Div, Pow, MinE, MaxE)):
        a = _eval(e.left if not isinstance(e, Pow) else e.base, env, ctx)
        if a is _NONTERM:
            return _NONTERM
        # short-circuit: zero absorbs in products before the right side runs
        if isinstance(e, Mul) and _as_num(a) == 0:
            return Fraction(0)
        b = _eval(e.right if not isinstance(e, Pow) else e.exponent, env, ctx)
        if b is _NONTERM:
            return _NONTERM
        if isinstance(e, Add):
            return _as_num(a) + _as_num(b)
        if isinstance(e, Sub):
            return _as_num(a) - _as_num(b)
        if isinstance(e, Mul):
            return _as_num(a) * _as_num(b)
        if isinstance(e, Div):
            bn = _as_num(b)
            if bn == 0:
                raise DivisionByZeroError("division by zero")
            return _as_num(a) / bn
        if isinstance(e, MinE):
            return min(_as_num(a), _as_num(b))
        if isinstance(e, MaxE):
            return max(_as_num(a), _as_num(b))
        # Pow
        base = _as_num(a)
        expo = _as_num(b)
        if expo.denominator != 1:
            raise ProbError(f"non-integer exponent {expo}")
        k = int(expo)
        if k < 0 and base == 0:
            raise DivisionByZeroError("zero raised to a negative power")
        return base ** k
    if isinstance(e, Len):
        v = _eval(e.arg, env, ctx)
        if v is _NONTERM:
            return _NONTERM
        if not isinstance(v, tuple):
            raise ProbError("len expects a list value")
        return Fraction(len(v))
    if isinstance(e, Indicator):
        b = _eval_bool(e.cond, env, ctx)
        if b is _NONTERM:
            return Fraction(0)  # diverging inputs contribute no mass
        return Fraction(1) if b else Fraction(0)
    if isinstance(e, SumOver):
        lo, hi = sum_support(e.body, e.var, env, ctx)
        if lo is None or hi is None:
            raise UnboundedSumError(f"no finite range derivable for summation variable {e.var!r}")
        total = Fraction(0)
        if hi >= lo:
            ctx.spend_summand(hi - lo + 1)
        for v in range(lo, hi + 1):
            env[e.var] = v
            total += _as_num(_eval_strict(e.body, env, ctx))
        env.pop(e.var, None)
        return total
    if isinstance(e, FinProd):
        lo = _as_int(_eval_strict(e.lower, env, ctx), "finite product lower bound")
        hi = _as_int(_eval_strict(e.upper, env, ctx), "finite product upper bound")
        total = Fraction(1)
        if hi >= lo:
            ctx.spend_summand(hi - lo + 1)
        for v in range(lo, hi + 1):
            env[e.var] = v
            total *= _as_num(_eval_strict(e.body, env, ctx))
            if total == 0:
                break
        env.pop(e.var, None)
        return total
    if isinstance(e, CallP):
        if e.name not in ctx.prob_functions:
            raise UnboundSymbolError(f"unknown probability function {e.name!r}")
        params, body = ctx.prob_functions[e.name]
        if len(params) != len(e.args):
            raise ProbError(f"{e.name} expects {len(params)} arguments, got {len(e.args)}")
        inner = dict(env)
        for p, a in zip(params, e.args):
            v = _eval(a, env, ctx)
            if v is _NONTERM:
                return _NONTERM
            inner[p] = v
        return _eval(body, inner, ctx)
    if isinstance(e, SrcExpr):
        if ctx.program is None:
            raise ProbError("no source program attached; cannot evaluate embedded expression")
        src_env = {}
        for name, sub_e in e.env:
            v = _eval(sub_e, env, ctx)
            if v is _NONTERM:
                return _NONTERM
            src_env[name] = _coerce_value(v)
        out = lang.eval_expr_in(ctx.program, e.expr, src_env, ctx.step_budget)
        if out is lang.NONTERMINATED:
            return _NONTERM
        return Fraction(out) if isinstance(out, int) and not isinstance(out, bool) else out
    raise TypeError(f"not a probability expression: {e!r}")


def _eval_strict(e, env, ctx):
    v = _eval(e, env, ctx)
    if v is _NONTERM:
        raise EvalNonTerminated("embedded call did not terminate")
    return v


def _as_num(v) -> Fraction:
    if isinstance(v, bool) or isinstance(v, tuple):
        raise ProbError(f"expected a number, got {v!r}")
    return Fraction(v)


def _as_int(v, what: str) -> int:
    n = _as_num(v)
    if n.denominator != 1:
        raise ProbError(f"{what} is not an integer: {n}")
    return int(n)


def _values_eq(a, b) -> bool:
    ta = isinstance(a, bool)
    tb = isinstance(b, bool)
    if ta != tb:
        return False
    if isinstance(a, tuple) != isinstance(b, tuple):
        return False
    return a == b


def _eval_bool(c, env: dict, ctx: EvalContext):
    if isinstance(c, BLit):
        return c.value
    if isinstance(c, Cmp):
        a = _eval(c.left, env, ctx)
        if a is _NONTERM:
            return _NONTERM
        b = _eval(c.right, env, ctx)
        if b is _NONTERM:
            return _NONTERM
        if c.op == "=":
            return _values_eq(a, b)
        if c.op == "!=":
            return not _values_eq(a, b)
        an, bn = _as_num(a), _as_num(b)
        return {"<": an < bn, "<=": an <= bn, ">": an > bn, ">=": an >= bn}[c.op]
    if isinstance(c, Range):
        if c.var not in env:
            raise UnboundSymbolError(f"unbound symbol {c.var!r}")
        bound = env[c.var]
        if isinstance(bound, (bool, tuple)):
            raise ProbError(f"range constraint on non-numeric variable {c.var!r}")
        v = Fraction(bound)
        if c.lower is not None:
            lo = _eval(c.lower, env, ctx)
            if lo is _NONTERM:
                return _NONTERM
            if not _as_num(lo) <= v:
                return False
        if c.upper is not None:
            hi = _eval(c.upper, env, ctx)
            if hi is _NONTERM:
                return _NONTERM
            if not v <= _as_num(hi):
                return False
        return True
    if isinstance(c, BAnd):
        a = _eval_bool(c.left, env, ctx)
        if a is False:
            return False
        b = _eval_bool(c.right, env, ctx)
        if a is _NONTERM or b is _NONTERM:
            return _NONTERM
        return a and b
    if isinstance(c, BOr):
        a = _eval_bool(c.left, env, ctx)
        if a is True:
            return True
        b = _eval_bool(c.right, env, ctx)
        if a is _NONTERM or b is _NONTERM:
            return _NONTERM
        return a or b
    if isinstance(c, BNot):
        v = _eval_bool(c.arg, env, ctx)
        return _NONTERM if v is _NONTERM else not v
    if isinstance(c, ElemsIn):
        if c.var not in env:
            raise UnboundSymbolError(f"unbound symbol {c.var!r}")
        xs = env[c.var]
        if not isinstance(xs, tuple):
            raise ProbError("elems expects a list value")
        lo = _as_num(_eval_strict(c.lower, env, ctx))
        hi = _as_num(_eval_strict(c.upper, env, ctx))
        return all(isinstance(x, int) and not isinstance(x, bool) and lo <= x <= hi for x in xs)
    raise TypeError(f"not a boolean expression: {c!r}")


# ---------------------------------------------------------------------------
# Support analysis: conservative integer ranges where an expression can be
# non-zero (or a condition can hold).  Used to evaluate residual sums and to
# enumerate oracle supports.

_FULL = (None, None)


def _isect(a, b):
    if a == "empty" or b == "empty":
        return "empty"
    lo = a[0] if b[0] is None else (b[0] if a[0] is None else max(a[0], b[0]))
    hi = a[1] if b[1] is None else (b[1] if a[1] is None else min(a[1], b[1]))
    if lo is not None and hi is not None and lo > hi:
        return "empty"
    return (lo, hi)


def _hull(a, b):
    if a == "empty":
        return b
    if b == "empty":
        return a
    lo = None if a[0] is None or b[0] is None else min(a[0], b[0])
    hi = None if a[1] is None or b[1] is None else max(a[1], b[1])
    return (lo, hi)


def _try_eval_num(e, env: dict, ctx: EvalContext):
    try:
        v = _eval(e, env, ctx)
    except (UnboundSymbolError, ProbError):
        return None
    if v is _NONTERM or isinstance(v, (bool, tuple)):
        return None
    return Fraction(v)


def linear_in(e, var: str, env: dict, ctx: EvalContext):
    """Return (a, b) with e = a*var + b when e is affine in var, else None."""
    if var not in free_symbols(e):
        v = _try_eval_num(e, env, ctx)
        return None if v is None else (Fraction(0), v)
    if isinstance(e, Sym) and e.name == var:
        return (Fraction(1), Fraction(0))
    if isinstance(e, Neg):
        r = linear_in(e.arg, var, env, ctx)
        return None if r is None else (-r[0], -r[1])
    if isinstance(e, Add):
        l, r = linear_in(e.left, var, env, ctx), linear_in(e.right, var, env, ctx)
        return None if l is None or r is None else (l[0] + r[0], l[1] + r[1])
    if isinstance(e, Sub):
        l, r = linear_in(e.left, var, env, ctx), linear_in(e.right, var, env, ctx)
        return None if l is None or r is None else (l[0] - r[0], l[1] - r[1])
    if isinstance(e, Mul):
        l, r = linear_in(e.left, var, env, ctx), linear_in(e.right, var, env, ctx)
        if l is None or r is None:
            return None
        if l[0] == 0:
            return (l[1] * r[0], l[1] * r[1])
        if r[0] == 0:
            return (r[1] * l[0], r[1] * l[1])
        return None
    if isinstance(e, Div):
        l, r = linear_in(e.left, var, env, ctx), linear_in(e.right, var, env, ctx)
        if l is None or r is None or r[0] != 0 or r[1] == 0:
            return None
        return (l[0] / r[1], l[1] / r[1])
    return None


def _ceil_div(a: Fraction) -> int:
    return -((-a.numerator) // a.denominator)


def _floor_div(a: Fraction) -> int:
    return a.numerator // a.denominator


def cond_support(c, var: str, env: dict, ctx: EvalContext):
    """Conservative cover of the integer values of `var` where `c` can hold."""
    if isinstance(c, BLit):
        return _FULL if c.value else "empty"
    if isinstance(c, Cmp):
        diff = linear_in(Sub(c.left, c.right), var, env, ctx)
        if diff is None:
            return _FULL
        a, b = diff
        if a == 0:
            holds = {"=": b == 0, "!=": b != 0, "<": b < 0, "<=": b <= 0, ">": b > 0, ">=": b >= 0}[c.op]
            return _FULL if holds else "empty"
        # a*var + b  op  0
        root = -b / a
        if c.op == "=":
            if root.denominator != 1:
                return "empty"
            return (int(root), int(root))
        if c.op == "!=":
            return _FULL
        op = c.op
        if a < 0:
            op = {"<": ">", "<=": ">=", ">": "<", ">=": "<="}[op]
        if op == "<":
            return (None, _ceil_div(root) - 1)
        if op == "<=":
            return (None, _floor_div(root))
        if op == ">":
            return (_floor_div(root) + 1, None)
        return (_ceil_div(root), None)
    if isinstance(c, Range):
        if c.var != var:
            return _FULL
        lo = None if c.lower is None else _try_eval_num(c.lower, env, ctx)
        hi = None if c.upper is None else _try_eval_num(c.upper, env, ctx)
        lo_i = None if lo is None else _ceil_div(lo)
        hi_i = None if hi is None else _floor_div(hi)
        if c.lower is not None and lo is None:
            lo_i = None
        if c.upper is not None and hi is None:
            hi_i = None
        out = (lo_i, hi_i)
        if lo_i is not None and hi_i is not None and lo_i > hi_i:
            return "empty"
        return out
    if isinstance(c, BAnd):
        return _isect(cond_support(c.left, var, env, ctx), cond_support(c.right, var, env, ctx))
    if isinstance(c, BOr):
        return _hull(cond_support(c.left, var, env, ctx), cond_support(c.right, var, env, ctx))
    if isinstance(c, (BNot, ElemsIn)):
        return _FULL
    raise TypeError(f"not a boolean expression: {c!r}")


def expr_support(e, var: str, env: dict, ctx: EvalContext, depth: int = 0):
    """Conservative cover of the integer values of `var` where `e` can be non-zero."""
    if isinstance(e, Lit):
        return "empty" if e.value == Fraction(0) else _FULL
    if isinstance(e, Indicator):
        return cond_support(e.cond, var, env, ctx)
    if isinstance(e, Mul):
        return _isect(expr_support(e.left, var, env, ctx, depth), expr_support(e.right, var, env, ctx, depth))
    if isinstance(e, (Add, Sub)):
        return _hull(expr_support(e.left, var, env, ctx, depth), expr_support(e.right, var, env, ctx, depth))
    if isinstance(e, Neg):
        return expr_support(e.arg, var, env, ctx, depth)
    if isinstance(e, Div):
        return expr_support(e.left, var, env, ctx, depth)
    if isinstance(e, (SumOver, FinProd)):
        if e.var == var:
            return _FULL
        sup = expr_support(e.body, var, env, ctx, depth)
        if sup != "empty" and (sup[0] is None or sup[1] is None) and depth < 8:
            # chase equalities through the bound variable: C(var = f(w)) with
            # w itself finitely ranged bounds var by the affine image
            w = e.var
            w_sup = expr_support(e.body, w, env, ctx, depth + 1)
            if w_sup != "empty" and w_sup[0] is not None and w_sup[1] is not None:
                sup = _isect(sup, _eq_chain_support(e.body, var, w, w_sup, env, ctx))
        return sup
    if isinstance(e, CallP) and depth < 8 and e.name in ctx.prob_functions:
        # a probability-function call constrains an argument through the
        # callee's own support for the matching formal
        params, body = ctx.prob_functions[e.name]
        out = _FULL
        for formal, arg in zip(params, e.args):
            if arg == Sym(var):
                inner_env = dict(env)
                inner_env.pop(formal, None)
                out = _isect(out, expr_support(body, formal, inner_env, ctx, depth + 1))
        return out
    return _FULL


def linear2(e, u: str, w: str, env: dict, ctx: EvalContext):
    """Return (a, b, c) with e = a*u + b*w + c, or None."""
    frees = free_symbols(e)
    if u not in frees and w not in frees:
        v = _try_eval_num(e, env, ctx)
        return None if v is None else (Fraction(0), Fraction(0), v)
    if isinstance(e, Sym):
        if e.name == u:
            return (Fraction(1), Fraction(0), Fraction(0))
        if e.name == w:
            return (Fraction(0), Fraction(1), Fraction(0))
        return None
    if isinstance(e, Neg):
        r = linear2(e.arg, u, w, env, ctx)
        return None if r is None else (-r[0], -r[1], -r[2])
    if isinstance(e, (Add, Sub)):
        l, r = linear2(e.left, u, w, env, ctx), linear2(e.right, u, w, env, ctx)
        if l is None or r is None:
            return None
        s = 1 if isinstance(e, Add) else -1
        return (l[0] + s * r[0], l[1] + s * r[1], l[2] + s * r[2])
    if isinstance(e, Mul):
        l, r = linear2(e.left, u, w, env, ctx), linear2(e.right, u, w, env, ctx)
        if l is None or r is None:
            return None
        if l[0] == 0 and l[1] == 0:
            return (l[2] * r[0], l[2] * r[1], l[2] * r[2])
        if r[0] == 0 and r[1] == 0:
            return (r[2] * l[0], r[2] * l[1], r[2] * l[2])
        return None
    return None


def _product_indicator_atoms(e) -> list:
    """Comparison atoms that are required factors of a product expression."""
    atoms: list = []

    def conjuncts(c):
        if isinstance(c, BAnd):
            conjuncts(c.left)
            conjuncts(c.right)
        else:
            atoms.append(c)

    def walk(x):
        if isinstance(x, Mul):
            walk(x.left)
            walk(x.right)
        elif isinstance(x, Indicator):
            conjuncts(x.cond)
        elif isinstance(x, (SumOver, FinProd)):
            return  # different scope

    walk(e)
    return atoms


def _eq_chain_support(body, var: str, w: str, w_sup: tuple, env: dict, ctx: EvalContext):
    """Bound `var` through equalities var = a*w + c over w's finite range."""
    out = _FULL
    for atom in _product_indicator_atoms(body):
        if not (isinstance(atom, Cmp) and atom.op == "="):
            continue
        lin = linear2(Sub(atom.left, atom.right), var, w, env, ctx)
        if lin is None:
            continue
        a, b, c = lin
        if a == 0:
            continue
        # var = -(b*w + c)/a; the image of an interval under an affine map is
        # spanned by its endpoints
        ends = []
        for wv in w_sup:
            ends.append((-(b * wv + c)) / a)
        lo, hi = min(ends), max(ends)
        out = _isect(out, (_ceil_div(lo), _floor_div(hi)))
    return out


def sum_support(body, var: str, env: dict, ctx: EvalContext):
    sup = expr_support(body, var, env, ctx)
    if sup == "empty":
        return (0, -1)
    return sup


# ---------------------------------------------------------------------------
# Printing


def _is_tight(e) -> bool:
    """Atoms and atom-only arithmetic print without spaces around +/-."""
    if isinstance(e, (Lit, Sym)):
        return True
    if isinstance(e, Neg):
        return _is_tight(e.arg)
    if isinstance(e, (Add, Sub, Mul)):
        return _is_tight(e.left) and _is_tight(e.right)
    return False


def print_prob(e, prec: int = 0) -> str:
    """Render an expression; `prec` levels: 0 additive, 1 multiplicative, 2 unary/power."""

    def wrap(s: str, level: int) -> str:
        return f"({s})" if level < prec else s

    if isinstance(e, Lit):
        v = e.value
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return lang.format_value(v)
        f = Fraction(v)
        if f.denominator == 1:
            s = str(f.numerator)
            return wrap(s, 0) if f.numerator < 0 else s
        return wrap(f"{f.numerator}/{f.denominator}", 1)
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, Neg):
        return wrap(f"-{print_prob(e.arg, 2)}", 1)
    if isinstance(e, (Add, Sub)):
        parts = _additive_parts(e)
        spaced = not all(_is_tight(p) for _, p in parts)
        out = print_prob(parts[0][1], 1)
        if parts[0][0] < 0:
            out = f"-{out}"
        for sign, part in parts[1:]:
            opch = "-" if sign < 0 else "+"
            rendered = print_prob(part, 1)
            out += f" {opch} {rendered}" if spaced else f"{opch}{rendered}"
        return wrap(out, 0)
    if isinstance(e, Mul):
        return wrap(f"{print_prob(e.left, 1)}*{print_prob(e.right, 2)}", 1)
    if isinstance(e, Div):
        return wrap(f"{print_prob(e.left, 2)}/{print_prob(e.right, 2)}", 1)
    if isinstance(e, Pow):
        return wrap(f"{print_prob(e.base, 2)}^{print_prob(e.exponent, 2)}", 2)
    if isinstance(e, MinE):
        return f"min({print_prob(e.left)},{print_prob(e.right)})"
    if isinstance(e, MaxE):
        return f"max({print_prob(e.left)},{print_prob(e.right)})"
    if isinstance(e, Len):
        return f"len({print_prob(e.arg)})"
    if isinstance(e, Indicator):
        return f"C({print_bool(e.cond)})"
    if isinstance(e, SumOver):
        return wrap(f"sum_{e.var} {print_prob(e.body, 1)}", 1)
    if isinstance(e, FinProd):
        rng = f"{e.var}={print_prob(e.lower)}..{print_prob(e.upper)}"
        return wrap(f"prod_{{{rng}}} {print_prob(e.body, 2)}", 1)
    if isinstance(e, CallP):
        return f"{e.name}({','.join(print_prob(a) for a in e.args)})"
    if isinstance(e, SrcExpr):
        return _print_src(e.expr, e.env_map())
    raise TypeError(f"not a probability expression: {e!r}")


def _additive_parts(e, sign: int = 1) -> list:
    if isinstance(e, Add):
        return _additive_parts(e.left, sign) + _additive_parts(e.right, sign)
    if isinstance(e, Sub):
        return _additive_parts(e.left, sign) + _additive_parts(e.right, -sign)
    if isinstance(e, Neg):
        return _additive_parts(e.arg, -sign)
    return [(sign, e)]


def _print_src(expr, env: dict, prec: int = 0) -> str:
    if isinstance(expr, lang.Var):
        return print_prob(env[expr.name]) if expr.name in env else expr.name
    if isinstance(expr, lang.Const):
        return lang.print_expr(expr)
    if isinstance(expr, lang.Call):
        return f"{expr.func}({','.join(_print_src(a, env) for a in expr.args)})"
    if isinstance(expr, lang.If):
        return f"if ({_print_src(expr.cond, env)}) then {_print_src(expr.then, env)} else {_print_src(expr.orelse, env)}"
    if isinstance(expr, lang.Prim):
        if expr.op in ("hd", "tl", "nil"):
            return f"{expr.op}({_print_src(expr.args[0], env)})"
        if expr.op == "not":
            return f"not {_print_src(expr.args[0], env)}"
        if expr.op == "cons":
            return f"{_print_src(expr.args[0], env)}::{_print_src(expr.args[1], env)}"
        sep = expr.op if expr.op in ("+", "-", "*") else f" {expr.op} "
        return f"({sep.join(_print_src(a, env) for a in expr.args)})" if expr.op in ("+", "-", "*") else sep.join(
            _print_src(a, env) for a in expr.args
        )
    raise TypeError(f"not a source expression: {expr!r}")


def print_bool(c) -> str:
    if isinstance(c, BLit):
        return "true" if c.value else "false"
    if isinstance(c, Cmp):
        return f"{print_prob(c.left)} {c.op} {print_prob(c.right)}"
    if isinstance(c, Range):
        if c.lower is not None and c.upper is not None:
            return f"{print_prob(c.lower)} <= {c.var} <= {print_prob(c.upper)}"
        if c.lower is not None:
            return f"{c.var} >= {print_prob(c.lower)}"
        if c.upper is not None:
            return f"{c.var} <= {print_prob(c.upper)}"
        return "true"
    if isinstance(c, BAnd):
        return f"{_print_bool_nested(c.left)} and {_print_bool_nested(c.right)}"
    if isinstance(c, BOr):
        return f"{_print_bool_nested(c.left)} or {_print_bool_nested(c.right)}"
    if isinstance(c, BNot):
        return f"not ({print_bool(c.arg)})"
    if isinstance(c, ElemsIn):
        return f"elems({c.var},{print_prob(c.lower)},{print_prob(c.upper)})"
    raise TypeError(f"not a boolean expression: {c!r}")


def _print_bool_nested(c) -> str:
    if isinstance(c, (BAnd, BOr)):
        return f"({print_bool(c)})"
    return print_bool(c)


# ---------------------------------------------------------------------------
# Text parser for probability expressions (distribution files, assumptions)


class ProbSyntaxError(ProbError):
    pass


class _PTok:
    __slots__ = ("kind", "text")

    def __init__(self, kind: str, text: str):
        self.kind = kind
        self.text = text


def _ptokenize(text: str) -> list:
    two = ("<=", ">=", "!=", "..")
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if text[i : i + 2] in two:
            out.append(_PTok("op", text[i : i + 2]))
            i += 2
            continue
        if c.isdigit():
            j = i
            while j < len(text) and text[j].isdigit():
                j += 1
            out.append(_PTok("int", text[i:j]))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            out.append(_PTok("name", text[i:j]))
            i = j
            continue
        if c in "()[],;=<>+-*/^":
            out.append(_PTok("op", c))
            i += 1
            continue
        raise ProbSyntaxError(f"unexpected character {c!r} in expression")
    out.append(_PTok("eof", ""))
    return out


class _PParser:
    def __init__(self, tokens: list):
        self._toks = tokens
        self._pos = 0

    def peek(self) -> _PTok:
        return self._toks[self._pos]

    def advance(self) -> _PTok:
        t = self._toks[self._pos]
        if t.kind != "eof":
            self._pos += 1
        return t

    def expect(self, text: str) -> None:
        t = self.peek()
        if t.text != text:
            raise ProbSyntaxError(f"expected {text!r}, found {t.text or 'end of input'!r}")
        self.advance()

    def bool_expr(self):
        left = self.bool_term()
        while self.peek().text == "or":
            self.advance()
            left = BOr(left, self.bool_term())
        return left

    def bool_term(self):
        left = self.bool_factor()
        while self.peek().text == "and":
            self.advance()
            left = BAnd(left, self.bool_factor())
        return left

    def bool_factor(self):
        t = self.peek()
        if t.text == "not":
            self.advance()
            return BNot(self.bool_factor())
        if t.text == "true":
            self.advance()
            return BLit(True)
        if t.text == "false":
            self.advance()
            return BLit(False)
        if t.text == "elems":
            self.advance()
            self.expect("(")
            var = self.advance()
            if var.kind != "name":
                raise ProbSyntaxError("elems expects a variable name")
            self.expect(",")
            lo = self.expr()
            self.expect(",")
            hi = self.expr()
            self.expect(")")
            return ElemsIn(var.text, lo, hi)
        # comparison chain over arithmetic expressions
        first = self.expr()
        ops = []
        items = [first]
        while self.peek().text in ("=", "!=", "<", "<=", ">", ">="):
            ops.append(self.advance().text)
            items.append(self.expr())
        if not ops:
            raise ProbSyntaxError("expected a comparison")
        out = None
        for i, op in enumerate(ops):
            c = Cmp(op, items[i], items[i + 1])
            out = c if out is None else BAnd(out, c)
        return out

    def expr(self):
        left = self.term()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            right = self.term()
            left = Add(left, right) if op == "+" else Sub(left, right)
        return left

    def term(self):
        left = self.power()
        while self.peek().text in ("*", "/"):
            op = self.advance().text
            right = self.power()
            left = Mul(left, right) if op == "*" else Div(left, right)
        return left

    def power(self):
        base = self.atom()
        if self.peek().text == "^":
            self.advance()
            return Pow(base, self.power())
        return base

    def atom(self):
        t = self.peek()
        if t.kind == "int":
            self.advance()
            return rat(int(t.text))
        if t.text == "-":
            self.advance()
            return Neg(self.atom())
        if t.text == "(":
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        if t.text == "C":
            self.advance()
            self.expect("(")
            cond = self.bool_expr()
            self.expect(")")
            return Indicator(cond)
        if t.text in ("min", "max"):
            self.advance()
            self.expect("(")
            a = self.expr()
            self.expect(",")
            b = self.expr()
            self.expect(")")
            return MinE(a, b) if t.text == "min" else MaxE(a, b)
        if t.text == "len":
            self.advance()
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return Len(e)
        if t.kind == "name":
            self.advance()
            if self.peek().text == "(":
                self.advance()
                args = [self.expr()]
                while self.peek().text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                return CallP(t.text, tuple(args))
            return Sym(t.text)
        raise ProbSyntaxError(f"unexpected token {t.text or 'end of input'!r}")

    def at_end(self) -> bool:
        return self.peek().kind == "eof"


def parse_prob(text: str) -> ProbExpr:
    p = _PParser(_ptokenize(text))
    e = p.expr()
    if not p.at_end():
        raise ProbSyntaxError(f"trailing input {p.peek().text!r}")
    return e


def parse_bool(text: str) -> BoolExpr:
    p = _PParser(_ptokenize(text))
    c = p.bool_expr()
    if not p.at_end():
        raise ProbSyntaxError(f"trailing input {p.peek().text!r}")
    return c


# ---------------------------------------------------------------------------
# Distribution programs


@dataclass(frozen=True)
class ProbFunction:
    name: str
    params: tuple
    body: ProbExpr


@dataclass(frozen=True)
class DistProgram:
    """A set of probability functions plus the source program they refer to."""

    prob_functions: tuple
    source: lang.Program
    output_function: str
    flags: tuple = ()  # names of source functions left opaque (no closed iterate)

    def function(self, name: str) -> ProbFunction:
        for f in self.prob_functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def output(self) -> ProbFunction:
        return self.function(self.output_function)

    def replace_function(self, name: str, body: ProbExpr) -> "DistProgram":
        funcs = tuple(ProbFunction(f.name, f.params, body) if f.name == name else f for f in self.prob_functions)
        return DistProgram(funcs, self.source, self.output_function, self.flags)

    def add_function(self, fn: ProbFunction) -> "DistProgram":
        return DistProgram(self.prob_functions + (fn,), self.source, self.output_function, self.flags)

    def add_flag(self, name: str) -> "DistProgram":
        if name in self.flags:
            return self
        return DistProgram(self.prob_functions, self.source, self.output_function, self.flags + (name,))

    def used_names(self) -> set:
        used = set()
        for f in self.prob_functions:
            used.add(f.name)
            used.update(f.params)
            used.update(free_symbols(f.body))
        for sf in self.source.functions:
            used.add(sf.name)
            used.update(sf.params)
        return used


def serialize_dist_program(dp: DistProgram) -> str:
    """Stable line-oriented rendering used for golden tests."""
    lines = [f"output {dp.output_function}"]
    if dp.flags:
        lines.append("opaque " + ",".join(dp.flags))
    for f in dp.prob_functions:
        lines.append(f"prob {f.name}({','.join(f.params)}) = {print_prob(f.body)}")
    for sf in dp.source.functions:
        lines.append(f"source {lang.print_function(sf)}")
    return "\n".join(lines) + "\n"

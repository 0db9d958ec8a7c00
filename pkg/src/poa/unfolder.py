"""Eliminate source-program calls from indicator terms.

Three rewrites do all the work:

* conditionals: C(z = if b then g else h) splits into the two guarded branches;
* calls with composite arguments: the enclosing sum is re-expressed over fresh
  variables whose joint distribution becomes a new probability function;
* the recursion template: C(z = f(args)) becomes a sum over the number of
  unfoldings, with the argument tuple after i steps given in closed form when
  every component update is affine in its own variable.

Functions whose iterate has no closed form are left embedded and flagged; the
approximation stage picks those up.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

from . import lang
from .probexpr import (
    Add,
    BAnd,
    BLit,
    BNot,
    BOr,
    BoolExpr,
    CallP,
    Cmp,
    DistProgram,
    ElemsIn,
    FinProd,
    Indicator,
    Lit,
    MaxE,
    MinE,
    Mul,
    NameSupply,
    Neg,
    Pow,
    ProbExpr,
    ProbFunction,
    Range,
    SrcExpr,
    Sub,
    Sym,
    SumOver,
    make_src,
)


class NonAffineIterationError(Exception):
    """The recursion's argument updates have no implemented closed form."""


class UnfoldError(Exception):
    pass


# ---------------------------------------------------------------------------
# Source-expression helpers


def src_free_vars(expr) -> set:
    if isinstance(expr, lang.Const):
        return set()
    if isinstance(expr, lang.Var):
        return {expr.name}
    if isinstance(expr, lang.Prim):
        out: set = set()
        for a in expr.args:
            out |= src_free_vars(a)
        return out
    if isinstance(expr, lang.If):
        return src_free_vars(expr.cond) | src_free_vars(expr.then) | src_free_vars(expr.orelse)
    if isinstance(expr, lang.Call):
        out = set()
        for a in expr.args:
            out |= src_free_vars(a)
        return out
    raise TypeError(f"not a source expression: {expr!r}")


def subst_src(expr, mapping: dict):
    if isinstance(expr, lang.Const):
        return expr
    if isinstance(expr, lang.Var):
        return mapping.get(expr.name, expr)
    if isinstance(expr, lang.Prim):
        return lang.Prim(expr.op, tuple(subst_src(a, mapping) for a in expr.args))
    if isinstance(expr, lang.If):
        return lang.If(subst_src(expr.cond, mapping), subst_src(expr.then, mapping), subst_src(expr.orelse, mapping))
    if isinstance(expr, lang.Call):
        return lang.Call(expr.func, tuple(subst_src(a, mapping) for a in expr.args))
    raise TypeError(f"not a source expression: {expr!r}")


def inline_nonrecursive(expr, program: lang.Program):
    """Substitute bodies of non-recursive callees until only recursive calls remain."""
    if isinstance(expr, (lang.Const, lang.Var)):
        return expr
    if isinstance(expr, lang.Prim):
        return lang.Prim(expr.op, tuple(inline_nonrecursive(a, program) for a in expr.args))
    if isinstance(expr, lang.If):
        return lang.If(
            inline_nonrecursive(expr.cond, program),
            inline_nonrecursive(expr.then, program),
            inline_nonrecursive(expr.orelse, program),
        )
    assert isinstance(expr, lang.Call)
    args = tuple(inline_nonrecursive(a, program) for a in expr.args)
    fd = program.function(expr.func)
    if fd.kind is lang.FunKind.NON_RECURSIVE:
        body = subst_src(fd.body, dict(zip(fd.params, args)))
        return inline_nonrecursive(body, program)
    return lang.Call(expr.func, args)


def _restricted_src(expr, env: dict) -> SrcExpr:
    needed = src_free_vars(expr)
    return make_src(expr, {k: v for k, v in env.items() if k in needed})


_BOOL_OPS = ("=", "!=", "<", "<=", ">", ">=", "and", "or", "not", "nil")


def embed(expr, env: dict, program: lang.Program) -> ProbExpr:
    """Translate a source expression into the probability language.

    Integer arithmetic maps structurally; non-recursive calls are inlined at
    the source level first; anything without a numeric translation (list
    operations, conditionals, recursive calls, boolean values) stays embedded
    with the smallest possible environment.
    """
    if isinstance(expr, lang.Const):
        v = expr.value
        if isinstance(v, bool) or isinstance(v, tuple):
            return Lit(v)
        return Lit(Fraction(v))
    if isinstance(expr, lang.Var):
        return env[expr.name]
    if isinstance(expr, lang.Prim):
        if expr.op in ("+", "-", "*"):
            l = embed(expr.args[0], env, program)
            r = embed(expr.args[1], env, program)
            return {"+": Add, "-": Sub, "*": Mul}[expr.op](l, r)
        return _restricted_src(expr, env)
    if isinstance(expr, lang.If):
        return _restricted_src(expr, env)
    assert isinstance(expr, lang.Call)
    fd = program.function(expr.func)
    if fd.kind is lang.FunKind.NON_RECURSIVE:
        return embed(inline_nonrecursive(expr, program), env, program)
    return _restricted_src(expr, env)


def embed_bool(expr, env: dict, program: lang.Program) -> BoolExpr:
    """Translate a boolean-valued source expression."""
    expr = inline_nonrecursive(expr, program)
    if isinstance(expr, lang.Const) and isinstance(expr.value, bool):
        return BLit(expr.value)
    if isinstance(expr, lang.Prim):
        if expr.op in ("=", "!=", "<", "<=", ">", ">="):
            return Cmp(expr.op, embed(expr.args[0], env, program), embed(expr.args[1], env, program))
        if expr.op == "and":
            return BAnd(embed_bool(expr.args[0], env, program), embed_bool(expr.args[1], env, program))
        if expr.op == "or":
            return BOr(embed_bool(expr.args[0], env, program), embed_bool(expr.args[1], env, program))
        if expr.op == "not":
            return negate_bool(embed_bool(expr.args[0], env, program))
    return Cmp("=", embed(expr, env, program) if not isinstance(expr, lang.If) else _restricted_src(expr, env), Lit(True))


def negate_bool(c: BoolExpr) -> BoolExpr:
    """Push negation down to comparison atoms."""
    if isinstance(c, BLit):
        return BLit(not c.value)
    if isinstance(c, Cmp):
        flipped = {"=": "!=", "!=": "=", "<": ">=", "<=": ">", ">": "<=", ">=": "<"}
        return Cmp(flipped[c.op], c.left, c.right)
    if isinstance(c, Range):
        parts = []
        if c.lower is not None:
            parts.append(Cmp("<", Sym(c.var), c.lower))
        if c.upper is not None:
            parts.append(Cmp(">", Sym(c.var), c.upper))
        if not parts:
            return BLit(False)
        out = parts[0]
        for p in parts[1:]:
            out = BOr(out, p)
        return out
    if isinstance(c, BAnd):
        return BOr(negate_bool(c.left), negate_bool(c.right))
    if isinstance(c, BOr):
        return BAnd(negate_bool(c.left), negate_bool(c.right))
    if isinstance(c, BNot):
        return c.arg
    if isinstance(c, ElemsIn):
        return BNot(c)
    raise TypeError(f"not a boolean expression: {c!r}")


# ---------------------------------------------------------------------------
# Closed-form iterates for the recursion template


@dataclass(frozen=True)
class _AffineUpdate:
    scale: int
    shift: int


def _update_affine(expr, var: str) -> Optional[_AffineUpdate]:
    """Match `expr` = scale*var + shift where only `var` occurs and both are ints."""
    if src_free_vars(expr) - {var}:
        return None

    def lin(e):
        if isinstance(e, lang.Const):
            if isinstance(e.value, bool) or not isinstance(e.value, int):
                return None
            return (0, e.value)
        if isinstance(e, lang.Var):
            return (1, 0)
        if isinstance(e, lang.Prim):
            if e.op in ("+", "-"):
                l, r = lin(e.args[0]), lin(e.args[1])
                if l is None or r is None:
                    return None
                s = 1 if e.op == "+" else -1
                return (l[0] + s * r[0], l[1] + s * r[1])
            if e.op == "*":
                l, r = lin(e.args[0]), lin(e.args[1])
                if l is None or r is None:
                    return None
                if l[0] == 0:
                    return (l[1] * r[0], l[1] * r[1])
                if r[0] == 0:
                    return (r[1] * l[0], r[1] * l[1])
                return None
        return None

    got = lin(expr)
    if got is None:
        return None
    return _AffineUpdate(got[0], got[1])


def _times(coeff: int, e: ProbExpr) -> ProbExpr:
    if coeff == 1:
        return e
    return Mul(Lit(Fraction(coeff)), e)


def _iterate_expr(start: ProbExpr, upd: _AffineUpdate, i: ProbExpr) -> ProbExpr:
    """Value of the variable after `i` applications of x -> scale*x + shift."""
    a, c = upd.scale, upd.shift
    if a == 1:
        if c == 0:
            return start
        if c > 0:
            return Add(start, _times(c, i))
        return Sub(start, _times(-c, i))
    if a == 0:
        # first step jumps to the constant; 0^0 = 1 keeps step zero exact
        dead = Pow(Lit(Fraction(0)), i)
        out: ProbExpr = Mul(start, dead)
        if c != 0:
            out = Add(out, _times(c, Sub(Lit(Fraction(1)), dead)))
        return out
    # a^i * start + c * (a^i - 1) / (a - 1)
    growth = Pow(Lit(Fraction(a)), i)
    out = Mul(growth, start)
    if c != 0:
        out = Add(out, Mul(Lit(Fraction(c, a - 1)), Sub(growth, Lit(Fraction(1)))))
    return out


@dataclass(frozen=True)
class IterateScheme:
    """Closed-form argument tuple after i recursion steps."""

    params: tuple
    updates: tuple  # _AffineUpdate per parameter

    def env_at(self, starts: dict, i: ProbExpr) -> dict:
        return {p: _iterate_expr(starts[p], u, i) for p, u in zip(self.params, self.updates)}


def solve_iterate(fd: lang.FunctionDef) -> IterateScheme:
    """Closed-form the recursion's argument updates, or raise NonAffineIterationError."""
    parts = lang.primrec_parts(fd)
    updates = []
    for param, step in zip(fd.params, parts.steps):
        upd = _update_affine(step, param)
        if upd is None:
            raise NonAffineIterationError(
                f"{fd.name}: update for {param!r} ({lang.print_expr(step)}) has no closed-form iterate"
            )
        updates.append(upd)
    return IterateScheme(fd.params, tuple(updates))


# ---------------------------------------------------------------------------
# The three unfolding rules


def _find_src_eq(e: ProbExpr, want) -> bool:
    """Does `e` contain an indicator C(lhs = <embedded>) whose fragment satisfies `want`?"""
    found = False

    def walk(x):
        nonlocal found
        if found:
            return
        if isinstance(x, Indicator) and isinstance(x.cond, Cmp) and x.cond.op == "=":
            if isinstance(x.cond.right, SrcExpr) and want(x.cond.right):
                found = True
                return
        for child in _children(x):
            walk(child)

    walk(e)
    return found


def _children(x):
    if isinstance(x, (Lit, Sym, BLit)):
        return ()
    if isinstance(x, (Neg,)):
        return (x.arg,)
    if isinstance(x, (Add, Sub, Mul, MinE, MaxE)):
        return (x.left, x.right)
    if isinstance(x, Pow):
        return (x.base, x.exponent)
    if isinstance(x, Indicator):
        return (x.cond,)
    if isinstance(x, SumOver):
        return (x.body,)
    if isinstance(x, FinProd):
        return (x.lower, x.upper, x.body)
    if isinstance(x, CallP):
        return x.args
    if isinstance(x, SrcExpr):
        return tuple(v for _, v in x.env)
    if isinstance(x, Cmp):
        return (x.left, x.right)
    if isinstance(x, (BAnd, BOr)):
        return (x.left, x.right)
    if isinstance(x, BNot):
        return (x.arg,)
    if isinstance(x, Range):
        return tuple(b for b in (x.lower, x.upper) if b is not None)
    if isinstance(x, ElemsIn):
        return (x.lower, x.upper)
    from .probexpr import Div, Len

    if isinstance(x, Div):
        return (x.left, x.right)
    if isinstance(x, Len):
        return (x.arg,)
    raise TypeError(f"unknown node {x!r}")


def _rewrite_first(e, matcher: Callable, builder: Callable):
    """Replace the first (outermost, left-to-right) matching node."""
    done = False

    def go(x):
        nonlocal done
        if done:
            return x
        if matcher(x):
            done = True
            return builder(x)
        if isinstance(x, (Lit, Sym, BLit)):
            return x
        if isinstance(x, Neg):
            return Neg(go(x.arg))
        if isinstance(x, (Add, Sub, Mul, MinE, MaxE)):
            return type(x)(go(x.left), go(x.right))
        if isinstance(x, Pow):
            return Pow(go(x.base), go(x.exponent))
        if isinstance(x, Indicator):
            return Indicator(go(x.cond))
        if isinstance(x, SumOver):
            return SumOver(x.var, go(x.body))
        if isinstance(x, FinProd):
            return FinProd(x.var, go(x.lower), go(x.upper), go(x.body))
        if isinstance(x, CallP):
            return CallP(x.name, tuple(go(a) for a in x.args))
        if isinstance(x, SrcExpr):
            return SrcExpr(x.expr, tuple((k, go(v)) for k, v in x.env))
        if isinstance(x, Cmp):
            return Cmp(x.op, go(x.left), go(x.right))
        if isinstance(x, (BAnd, BOr)):
            return type(x)(go(x.left), go(x.right))
        if isinstance(x, BNot):
            return BNot(go(x.arg))
        if isinstance(x, Range):
            lower = None if x.lower is None else go(x.lower)
            upper = None if x.upper is None else go(x.upper)
            return Range(x.var, lower, upper)
        if isinstance(x, ElemsIn):
            return ElemsIn(x.var, go(x.lower), go(x.upper))
        from .probexpr import Div, Len

        if isinstance(x, Div):
            return Div(go(x.left), go(x.right))
        if isinstance(x, Len):
            return Len(go(x.arg))
        raise TypeError(f"unknown node {x!r}")

    out = go(e)
    return out, done


def lower_embedded(e: ProbExpr, program: lang.Program) -> ProbExpr:
    """Re-translate embedded fragments so arithmetic becomes native and
    non-recursive source calls disappear."""

    def matcher(x):
        if not isinstance(x, SrcExpr):
            return False
        lowered = embed(x.expr, x.env_map(), program)
        return lowered != x

    def builder(x):
        return embed(x.expr, x.env_map(), program)

    out = e
    while True:
        out, changed = _rewrite_first(out, matcher, builder)
        if not changed:
            return out


def unfold_conditional(e: ProbExpr, program: lang.Program) -> ProbExpr:
    """Split one C(lhs = if b then g else h) factor into guarded branches."""

    def matcher(x):
        return (
            isinstance(x, Indicator)
            and isinstance(x.cond, Cmp)
            and x.cond.op == "="
            and isinstance(x.cond.right, SrcExpr)
            and isinstance(x.cond.right.expr, lang.If)
        )

    def builder(x):
        src = x.cond.right
        env = src.env_map()
        lhs = x.cond.left
        cond = embed_bool(src.expr.cond, env, program)
        then_eq = Indicator(Cmp("=", lhs, embed(src.expr.then, env, program)))
        else_eq = Indicator(Cmp("=", lhs, embed(src.expr.orelse, env, program)))
        return Add(Mul(Indicator(cond), then_eq), Mul(Indicator(negate_bool(cond)), else_eq))

    out, _ = _rewrite_first(e, matcher, builder)
    return out


def unfold_primrec(e: ProbExpr, fd: lang.FunctionDef, program: lang.Program, supply: NameSupply) -> ProbExpr:
    """Expand one C(lhs = f(args)) factor for a recursion-template function.

    Raises NonAffineIterationError when the argument updates cannot be
    closed-formed; callers leave the factor embedded and flag the function.
    """
    scheme = solve_iterate(fd)
    parts = lang.primrec_parts(fd)
    cond_src = inline_nonrecursive(parts.cond, program)
    base_src = inline_nonrecursive(parts.base, program)

    def matcher(x):
        return (
            isinstance(x, Indicator)
            and isinstance(x.cond, Cmp)
            and x.cond.op == "="
            and isinstance(x.cond.right, SrcExpr)
            and isinstance(x.cond.right.expr, lang.Call)
            and x.cond.right.expr.func == fd.name
        )

    def builder(x):
        src = x.cond.right
        env = src.env_map()
        lhs = x.cond.left
        starts = {p: embed(a, env, program) for p, a in zip(fd.params, src.expr.args)}
        i_var = supply.fresh("i")
        j_var = supply.fresh("j")
        env_i = scheme.env_at(starts, Sym(i_var))
        env_j = scheme.env_at(starts, Sym(j_var))
        guard = Indicator(Cmp(">=", Sym(i_var), Lit(Fraction(0))))
        not_yet = FinProd(
            j_var,
            Lit(Fraction(0)),
            Sub(Sym(i_var), Lit(Fraction(1))),
            Indicator(negate_bool(embed_bool(cond_src, env_j, program))),
        )
        stop = Indicator(embed_bool(cond_src, env_i, program))
        result = Indicator(Cmp("=", lhs, embed(base_src, env_i, program)))
        return SumOver(i_var, Mul(Mul(Mul(guard, not_yet), stop), result))

    out, _ = _rewrite_first(e, matcher, builder)
    return out


def _peel_sums(e: ProbExpr) -> tuple:
    sum_vars = []
    while isinstance(e, SumOver):
        sum_vars.append(e.var)
        e = e.body
    return sum_vars, e


def _flatten_product(e: ProbExpr) -> list:
    if isinstance(e, Mul):
        return _flatten_product(e.left) + _flatten_product(e.right)
    return [e]


def _product(factors: list) -> ProbExpr:
    out = factors[0]
    for f in factors[1:]:
        out = Mul(out, f)
    return out


def _flatten_sum(e: ProbExpr) -> list:
    if isinstance(e, Add):
        return _flatten_sum(e.left) + _flatten_sum(e.right)
    return [e]


def _wrap_sums(sum_vars: list, e: ProbExpr) -> ProbExpr:
    for v in reversed(sum_vars):
        e = SumOver(v, e)
    return e


def unfold_call(
    dp: DistProgram,
    fn_name: str,
    supply: Optional[NameSupply] = None,
    select: Optional[Callable] = None,
) -> DistProgram:
    """Apply the composite-argument call rule once inside `fn_name`.

    The enclosing sums are re-expressed over fresh variables and a new
    probability function for their joint distribution is appended.  `select`
    narrows which embedded call to target (defaults to any).
    """
    supply = supply or NameSupply(dp.used_names())
    select = select or (lambda s: isinstance(s.expr, lang.Call))
    fn = dp.function(fn_name)
    sum_vars, inner = _peel_sums(fn.body)
    addends = _flatten_sum(inner)

    for a_idx, addend in enumerate(addends):
        factors = _flatten_product(addend)
        target_idx = None
        for idx, f in enumerate(factors):
            if (
                isinstance(f, Indicator)
                and isinstance(f.cond, Cmp)
                and f.cond.op == "="
                and isinstance(f.cond.right, SrcExpr)
                and isinstance(f.cond.right.expr, lang.Call)
                and select(f.cond.right)
            ):
                target_idx = idx
                break
        if target_idx is None:
            continue

        target = factors[target_idx]
        src = target.cond.right
        env = src.env_map()
        lhs = target.cond.left
        call = src.expr
        others = factors[:target_idx] + factors[target_idx + 1:]

        u_vars = [supply.fresh("u") for _ in call.args]
        aux_name = supply.fresh("P_u")

        arg_constraints = [
            Indicator(Cmp("=", Sym(u), embed(a, env, dp.source))) for u, a in zip(u_vars, call.args)
        ]
        aux_body: ProbExpr = _product((others or [Lit(Fraction(1))]) + arg_constraints)
        aux = ProbFunction(aux_name, tuple(u_vars), _wrap_sums(sum_vars, aux_body))

        new_call = Indicator(
            Cmp(
                "=",
                lhs,
                make_src(
                    lang.Call(call.func, tuple(lang.Var(u) for u in u_vars)),
                    {u: Sym(u) for u in u_vars},
                ),
            )
        )
        rewritten = _wrap_sums(u_vars, Mul(CallP(aux_name, tuple(Sym(u) for u in u_vars)), new_call))

        pieces = [
            rewritten if k == a_idx else _wrap_sums(sum_vars, other) for k, other in enumerate(addends)
        ]
        new_body = pieces[0]
        for p in pieces[1:]:
            new_body = Add(new_body, p)
        return dp.replace_function(fn_name, new_body).add_function(aux)
    return dp


# ---------------------------------------------------------------------------
# Driver


def _has_conditional(e) -> bool:
    return _find_src_eq(e, lambda s: isinstance(s.expr, lang.If))


def _trivial_args(src: SrcExpr) -> bool:
    return all(isinstance(a, lang.Var) for a in src.expr.args)


def unfold_all(dp: DistProgram, trace: Optional[list] = None) -> DistProgram:
    """Run the three rules to a fixpoint over every probability function."""
    supply = NameSupply(dp.used_names())
    queue = [f.name for f in dp.prob_functions]
    seen_cap = 10_000

    while queue:
        name = queue.pop(0)
        for _ in range(seen_cap):
            fn = dp.function(name)
            body = lower_embedded(fn.body, dp.source)
            if body != fn.body:
                dp = dp.replace_function(name, body)
                continue

            if _has_conditional(body):
                new_body = unfold_conditional(body, dp.source)
                if trace is not None:
                    trace.append(f"unfold conditional in {name}")
                dp = dp.replace_function(name, new_body)
                continue

            flags = set(dp.flags)

            def match_prim(s):
                if not isinstance(s.expr, lang.Call) or s.expr.func in flags:
                    return False
                fd = dp.source.function(s.expr.func)
                return fd.kind is lang.FunKind.PRIMITIVE_RECURSIVE and _trivial_args(s)

            # recursion template with plain-variable arguments
            if _find_src_eq(body, match_prim):
                fname = _first_src_call(body, match_prim)
                fd = dp.source.function(fname)
                try:
                    new_body = unfold_primrec(body, fd, dp.source, supply)
                    if trace is not None:
                        trace.append(f"unfold recursion {fname} in {name}")
                    dp = dp.replace_function(name, new_body)
                except NonAffineIterationError:
                    if trace is not None:
                        trace.append(f"no closed iterate for {fname}: kept opaque")
                    dp = dp.add_flag(fname)
                continue

            def match_complex(s):
                if not isinstance(s.expr, lang.Call) or s.expr.func in flags:
                    return False
                return not _trivial_args(s)

            # remaining calls with composite arguments: introduce a joint
            # distribution over fresh variables
            if _find_src_eq(body, match_complex):
                before = len(dp.prob_functions)
                dp = unfold_call(dp, name, supply, select=match_complex)
                if len(dp.prob_functions) > before:
                    new_name = dp.prob_functions[-1].name
                    queue.append(new_name)
                    if trace is not None:
                        trace.append(f"introduce {new_name} for a composite call in {name}")
                    continue
            break
        else:
            raise UnfoldError(f"unfolding did not stabilize in {name}")

    # calls that stayed embedded anywhere (e.g. inside plain conditions) are
    # flagged when their iterate has no closed form
    for fn in dp.prob_functions:
        for called in sorted(_embedded_call_names(fn.body)):
            if called in dp.flags:
                continue
            fd = dp.source.function(called)
            if fd.kind is lang.FunKind.PRIMITIVE_RECURSIVE:
                try:
                    solve_iterate(fd)
                except NonAffineIterationError:
                    if trace is not None:
                        trace.append(f"no closed iterate for {called}: kept opaque")
                    dp = dp.add_flag(called)
    return dp


def _embedded_call_names(e) -> set:
    found: set = set()

    def walk(x):
        if isinstance(x, SrcExpr):
            for call in lang.calls_in(x.expr):
                found.add(call.func)
            for _, v in x.env:
                walk(v)
            return
        for child in _children(x):
            walk(child)

    walk(e)
    return found


def _first_src_call(e, want) -> str:
    found = None

    def walk(x):
        nonlocal found
        if found is not None:
            return
        if isinstance(x, Indicator) and isinstance(x.cond, Cmp) and x.cond.op == "=":
            rhs = x.cond.right
            if isinstance(rhs, SrcExpr) and isinstance(rhs.expr, lang.Call) and want(rhs):
                found = rhs.expr.func
                return
        for child in _children(x):
            walk(child)

    walk(e)
    assert found is not None
    return found

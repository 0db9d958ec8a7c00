"""Rewrite engine: drive probability expressions to closed form.

The engine normalizes to sums of guarded products, closes sums via point-mass
substitution, interval counting, the first-moment formula and geometric-series
identities, fuses and prunes interval constraints, eliminates finite products,
and folds min/max using a small linear-arithmetic entailment check over the
guards that sit next to a factor.  Every structural rule is catalogued and
property-checked with randomized exact trials.

All comparisons on bound variables are over integers; strict inequalities are
normalized with unit slack on that basis.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional

from .probexpr import (
    Add,
    BAnd,
    BLit,
    BNot,
    BOr,
    BoolExpr,
    CallP,
    Cmp,
    Div,
    FinProd,
    Indicator,
    Lit,
    MaxE,
    MinE,
    Mul,
    Neg,
    Pow,
    ProbExpr,
    Range,
    SrcExpr,
    Sub,
    Sym,
    SumOver,
    eval_prob,
    free_symbols,
    print_prob,
    subst,
)
from .unfolder import negate_bool

_CONST = None  # key for the constant part of an affine map


# ---------------------------------------------------------------------------
# Affine maps over atoms and entailment


def affine_of(e: ProbExpr) -> dict:
    """Decompose into a linear combination of atoms; opaque nodes become atoms."""
    if isinstance(e, Lit) and isinstance(e.value, Fraction):
        return {_CONST: e.value}
    if isinstance(e, Sym):
        return {e: Fraction(1)}
    if isinstance(e, Neg):
        return _scale(affine_of(e.arg), Fraction(-1))
    if isinstance(e, Add):
        return _madd(affine_of(e.left), affine_of(e.right), Fraction(1))
    if isinstance(e, Sub):
        return _madd(affine_of(e.left), affine_of(e.right), Fraction(-1))
    if isinstance(e, Mul):
        l, r = affine_of(e.left), affine_of(e.right)
        if _is_const(l):
            return _scale(r, l.get(_CONST, Fraction(0)))
        if _is_const(r):
            return _scale(l, r.get(_CONST, Fraction(0)))
        return {e: Fraction(1)}
    if isinstance(e, Div):
        r = affine_of(e.right)
        if _is_const(r) and r.get(_CONST, Fraction(0)) != 0:
            return _scale(affine_of(e.left), Fraction(1) / r[_CONST])
        return {e: Fraction(1)}
    return {e: Fraction(1)}


def _is_const(m: dict) -> bool:
    return all(k is _CONST for k in m)


def _scale(m: dict, c: Fraction) -> dict:
    if c == 0:
        return {}
    return {k: v * c for k, v in m.items()}


def _madd(a: dict, b: dict, s: Fraction) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, Fraction(0)) + s * v
        if out[k] == 0:
            del out[k]
    return out


def _const_of(m: dict) -> Optional[Fraction]:
    if _is_const(m):
        return m.get(_CONST, Fraction(0))
    return None


def build_affine(m: dict) -> ProbExpr:
    """Rebuild an expression from an affine map, deterministically ordered."""

    def order_key(atom):
        if isinstance(atom, Sym):
            return (0, atom.name)
        return (1, print_prob(atom))

    pos = sorted([(k, v) for k, v in m.items() if k is not _CONST and v > 0], key=lambda kv: order_key(kv[0]))
    neg = sorted([(k, v) for k, v in m.items() if k is not _CONST and v < 0], key=lambda kv: order_key(kv[0]))
    const = m.get(_CONST, Fraction(0))

    def piece(atom, coeff: Fraction) -> ProbExpr:
        return atom if coeff == 1 else Mul(Lit(coeff), atom)

    expr: Optional[ProbExpr] = None
    for atom, coeff in pos:
        expr = piece(atom, coeff) if expr is None else Add(expr, piece(atom, coeff))
    for atom, coeff in neg:
        p = piece(atom, -coeff)
        expr = Neg(p) if expr is None else Sub(expr, p)
    if const != 0 or expr is None:
        lit = Lit(const)
        if expr is None:
            expr = lit
        elif const > 0:
            expr = Add(expr, lit)
        else:
            expr = Sub(expr, Lit(-const))
    return expr


def fact_maps(cond: BoolExpr) -> list:
    """Affine facts (each map means expr >= 0) implied by a condition."""
    if isinstance(cond, BLit):
        return []
    if isinstance(cond, Cmp):
        l, r = affine_of(cond.left), affine_of(cond.right)
        if cond.op == "<=":
            return [_madd(r, l, Fraction(-1))]
        if cond.op == ">=":
            return [_madd(l, r, Fraction(-1))]
        if cond.op == "<":
            return [_madd(_madd(r, l, Fraction(-1)), {_CONST: Fraction(1)}, Fraction(-1))]
        if cond.op == ">":
            return [_madd(_madd(l, r, Fraction(-1)), {_CONST: Fraction(1)}, Fraction(-1))]
        if cond.op == "=":
            return [_madd(l, r, Fraction(-1)), _madd(r, l, Fraction(-1))]
        return []
    if isinstance(cond, Range):
        out = []
        v = {Sym(cond.var): Fraction(1)}
        if cond.lower is not None:
            out.append(_madd(v, affine_of(cond.lower), Fraction(-1)))
        if cond.upper is not None:
            out.append(_madd(affine_of(cond.upper), v, Fraction(-1)))
        return out
    if isinstance(cond, BAnd):
        return fact_maps(cond.left) + fact_maps(cond.right)
    return []


def entail(facts: list, target: dict) -> bool:
    """Can target >= 0 be proven from the facts (each fact >= 0)?"""
    c = _const_of(target)
    if c is not None:
        return c >= 0
    for f in facts:
        c = _const_of(_madd(target, f, Fraction(-1)))
        if c is not None and c >= 0:
            return True
    n = len(facts)
    for i in range(n):
        for j in range(i, n):
            m = _madd(_madd(target, facts[i], Fraction(-1)), facts[j], Fraction(-1))
            c = _const_of(m)
            if c is not None and c >= 0:
                return True
    return False


def _leq(a: ProbExpr, b: ProbExpr, facts: list) -> bool:
    """a <= b provable?"""
    return entail(facts, _madd(affine_of(b), affine_of(a), Fraction(-1)))


def prove_cond(cond: BoolExpr, facts: list) -> bool:
    if isinstance(cond, BLit):
        return cond.value
    if isinstance(cond, Cmp):
        l, r = affine_of(cond.left), affine_of(cond.right)
        if cond.op == "<=":
            return entail(facts, _madd(r, l, Fraction(-1)))
        if cond.op == ">=":
            return entail(facts, _madd(l, r, Fraction(-1)))
        if cond.op == "<":
            return entail(facts, _madd(_madd(r, l, Fraction(-1)), {_CONST: Fraction(1)}, Fraction(-1)))
        if cond.op == ">":
            return entail(facts, _madd(_madd(l, r, Fraction(-1)), {_CONST: Fraction(1)}, Fraction(-1)))
        if cond.op == "=":
            d = _madd(l, r, Fraction(-1))
            return entail(facts, d) and entail(facts, _scale(d, Fraction(-1)))
        if cond.op == "!=":
            return refute_cond(Cmp("=", cond.left, cond.right), facts)
        return False
    if isinstance(cond, Range):
        ok = True
        v = {Sym(cond.var): Fraction(1)}
        if cond.lower is not None:
            ok = ok and entail(facts, _madd(v, affine_of(cond.lower), Fraction(-1)))
        if cond.upper is not None:
            ok = ok and entail(facts, _madd(affine_of(cond.upper), v, Fraction(-1)))
        return ok
    if isinstance(cond, BAnd):
        return prove_cond(cond.left, facts) and prove_cond(cond.right, facts)
    return False


def refute_cond(cond: BoolExpr, facts: list) -> bool:
    """Is the condition provably false (so its indicator is 0)?"""
    if isinstance(cond, BLit):
        return not cond.value
    if isinstance(cond, Cmp):
        if cond.op == "!=":
            return prove_cond(Cmp("=", cond.left, cond.right), facts)
        if cond.op == "=":
            return prove_cond(Cmp("<", cond.left, cond.right), facts) or prove_cond(
                Cmp(">", cond.left, cond.right), facts
            )
        return prove_cond(negate_bool(cond), facts)
    if isinstance(cond, Range):
        one = {_CONST: Fraction(1)}
        v = {Sym(cond.var): Fraction(1)}
        if cond.lower is not None and cond.upper is not None:
            lo, hi = affine_of(cond.lower), affine_of(cond.upper)
            if entail(facts, _madd(_madd(lo, hi, Fraction(-1)), one, Fraction(-1))):
                return True  # lower > upper: empty interval
        if cond.lower is not None:
            lo = affine_of(cond.lower)
            if entail(facts, _madd(_madd(lo, v, Fraction(-1)), one, Fraction(-1))):
                return True  # var < lower
        if cond.upper is not None:
            hi = affine_of(cond.upper)
            if entail(facts, _madd(_madd(v, hi, Fraction(-1)), one, Fraction(-1))):
                return True  # var > upper
        return False
    if isinstance(cond, BAnd):
        return refute_cond(cond.left, facts) or refute_cond(cond.right, facts)
    if isinstance(cond, BOr):
        return refute_cond(cond.left, facts) and refute_cond(cond.right, facts)
    return False


# ---------------------------------------------------------------------------
# Terms: coefficient plus ordered factor powers


@dataclass
class Term:
    coeff: Fraction
    factors: list  # list of [base, exponent]; first-seen order

    @classmethod
    def of(cls, e: ProbExpr) -> "Term":
        t = cls(Fraction(1), [])
        t._absorb(e, 1)
        return t

    def _absorb(self, e: ProbExpr, sign_exp: int) -> None:
        if isinstance(e, Mul):
            self._absorb(e.left, sign_exp)
            self._absorb(e.right, sign_exp)
            return
        if isinstance(e, Div):
            self._absorb(e.left, sign_exp)
            self._absorb(e.right, -sign_exp)
            return
        if isinstance(e, Neg):
            self.coeff = -self.coeff
            self._absorb(e.arg, sign_exp)
            return
        if isinstance(e, Lit) and isinstance(e.value, Fraction):
            if e.value == 0:
                if sign_exp > 0:
                    self.coeff = Fraction(0)
                else:
                    self._push(e, sign_exp)  # symbolic division by zero: leave for evaluation
                return
            self.coeff *= e.value ** sign_exp
            return
        if isinstance(e, Pow) and isinstance(e.exponent, Lit) and isinstance(e.exponent.value, Fraction) \
                and e.exponent.value.denominator == 1:
            k = int(e.exponent.value)
            if isinstance(e.base, Lit) and isinstance(e.base.value, Fraction) and (e.base.value != 0 or k >= 0):
                self._absorb(Lit(e.base.value ** k), sign_exp)
                return
            if not (isinstance(e.base, Lit) and isinstance(e.base.value, Fraction)):
                self._push(e.base, k * sign_exp)
                return
        self._push(e, sign_exp)

    def _push(self, base: ProbExpr, exp: int) -> None:
        for entry in self.factors:
            if entry[0] == base:
                entry[1] += exp
                return
        self.factors.append([base, exp])

    def factor_list(self) -> list:
        """Factors with exponents materialized (x^k for k not in {0, 1})."""
        out = []
        for b, e in self.factors:
            if e == 0:
                continue
            out.append(b if e == 1 else Pow(b, Lit(Fraction(e))))
        return out

    def to_expr(self) -> ProbExpr:
        if self.coeff == 0:
            return Lit(Fraction(0))
        nums: list = []
        dens: list = []
        for base, exp in self.factors:
            if exp > 0:
                nums.extend([base] * exp if exp <= 4 else [Pow(base, Lit(Fraction(exp)))])
            elif exp < 0:
                dens.extend([base] * (-exp) if -exp <= 4 else [Pow(base, Lit(Fraction(-exp)))])
        negative = self.coeff < 0
        p = abs(self.coeff.numerator)
        q = self.coeff.denominator

        expr: Optional[ProbExpr] = None
        if q != 1:
            dens = [Lit(Fraction(q))] + dens
        if dens:
            den = dens[0]
            for d in dens[1:]:
                den = Mul(den, d)
            expr = Div(Lit(Fraction(p)), den)
        elif p != 1 or not nums:
            expr = Lit(Fraction(p))
        for f in nums:
            expr = f if expr is None else Mul(expr, f)
        assert expr is not None
        return Neg(expr) if negative else expr


def flatten_sum(e: ProbExpr) -> list:
    """Signed addends of an expression."""
    out = []

    def go(x, sign):
        if isinstance(x, Add):
            go(x.left, sign)
            go(x.right, sign)
        elif isinstance(x, Sub):
            go(x.left, sign)
            go(x.right, -sign)
        elif isinstance(x, Neg):
            go(x.arg, -sign)
        else:
            out.append((sign, x))

    go(e, 1)
    return out


def rebuild_sum(addends: list) -> ProbExpr:
    if not addends:
        return Lit(Fraction(0))
    expr = addends[0]
    for a in addends[1:]:
        expr = Sub(expr, a.arg) if isinstance(a, Neg) else Add(expr, a)
    return expr


def term_of_factors(coeff: Fraction, factors: list) -> Term:
    """Build a term from materialized factors, re-absorbing powers and literals."""
    t = Term(coeff, [])
    for f in factors:
        t._absorb(f, 1)
    return t


def is_closed(e) -> bool:
    """No residual sums, finite products, embedded source or function calls."""
    if isinstance(e, (SumOver, FinProd, SrcExpr, CallP)):
        return False
    from .unfolder import _children

    return all(is_closed(c) for c in _children(e))


# ---------------------------------------------------------------------------
# Pure identity builders (catalogued rules share these with the engine)


def or_partition(cond: BOr) -> ProbExpr:
    """C(a or b) = C(a) + C(not a)*C(b)."""
    return Add(Indicator(cond.left), Mul(Indicator(negate_bool(cond.left)), Indicator(cond.right)))


def and_product(cond: BAnd) -> ProbExpr:
    """C(a and b) = C(a)*C(b)."""
    return Mul(Indicator(cond.left), Indicator(cond.right))


def interval_count(lo: ProbExpr, hi: ProbExpr) -> ProbExpr:
    """sum_x C(lo <= x <= hi) = (hi - lo + 1) * C(lo <= hi)."""
    width = Add(Sub(hi, lo), Lit(Fraction(1)))
    return Mul(width, Indicator(Cmp("<=", lo, hi)))


def interval_moment(lo: ProbExpr, hi: ProbExpr) -> ProbExpr:
    """sum_x x * C(lo <= x <= hi) = (hi(hi+1)/2 - lo(lo-1)/2) * C(lo <= hi)."""
    two = Lit(Fraction(2))
    upper = Div(Mul(hi, Add(hi, Lit(Fraction(1)))), two)
    lower = Div(Mul(lo, Sub(lo, Lit(Fraction(1)))), two)
    return Mul(Sub(upper, lower), Indicator(Cmp("<=", lo, hi)))


def geometric_sum(a: ProbExpr) -> ProbExpr:
    """sum_x C(x >= 0) a^x = 1/(1-a) for 0 < a < 1."""
    return Div(Lit(Fraction(1)), Sub(Lit(Fraction(1)), a))


def geometric_moment(a: ProbExpr) -> ProbExpr:
    """sum_x C(x >= 0) x a^x = 1/(1-a)^2 - 1/(1-a) for 0 < a < 1."""
    one = Lit(Fraction(1))
    om = Sub(one, a)
    return Sub(Div(one, Mul(om, om)), Div(one, om))


def finprod_neq(lo: ProbExpr, hi: ProbExpr, point: ProbExpr) -> ProbExpr:
    """prod_{j=lo..hi} C(j != e) = C(e <= lo-1) + C(e >= lo) C(e >= hi+1)."""
    before = Indicator(Cmp("<=", point, Sub(lo, Lit(Fraction(1)))))
    after = Mul(
        Indicator(Cmp(">=", point, lo)),
        Indicator(Cmp(">=", point, Add(hi, Lit(Fraction(1))))),
    )
    return Add(before, after)


def finprod_const_pow(lo: ProbExpr, hi: ProbExpr, body: ProbExpr, nonneg_width: bool) -> ProbExpr:
    """prod_{j=lo..hi} body = body^(hi-lo+1) when the body is independent of j."""
    width: ProbExpr = Add(Sub(hi, lo), Lit(Fraction(1)))
    if not nonneg_width:
        width = MaxE(width, Lit(Fraction(0)))
    return Pow(body, width)


def count_to_max(width: ProbExpr, lo: ProbExpr, hi: ProbExpr) -> ProbExpr:
    """(hi - lo + 1) * C(lo <= hi) = max(hi - lo + 1, 0) over integers."""
    return MaxE(width, Lit(Fraction(0)))


def neq_split(lo: Optional[ProbExpr], hi: Optional[ProbExpr], c: ProbExpr, var: str) -> ProbExpr:
    """C(lo <= v <= hi) C(v != c) as two disjoint interval indicators."""
    c_minus = Sub(c, Lit(Fraction(1)))
    c_plus = Add(c, Lit(Fraction(1)))
    left = Range(var, lo, c_minus if hi is None else MinE(hi, c_minus))
    right = Range(var, c_plus if lo is None else MaxE(lo, c_plus), hi)
    return Add(Indicator(left), Indicator(right))


def split_min(a: ProbExpr, b: ProbExpr) -> list:
    """min(a,b) piecewise: [(guard, value), ...] with disjoint integer guards."""
    return [(Cmp("<=", a, b), a), (Cmp("<=", b, Sub(a, Lit(Fraction(1)))), b)]


def split_max(a: ProbExpr, b: ProbExpr) -> list:
    return [(Cmp(">=", a, b), a), (Cmp(">=", b, Add(a, Lit(Fraction(1)))), b)]


def max_le_split(e1: ProbExpr, e2: ProbExpr, e3: ProbExpr) -> ProbExpr:
    """C(max(e1,e2) <= e3) = C(e1 > e2) C(e1 <= e3) + C(e1 <= e2) C(e2 <= e3)."""
    return Add(
        Mul(Indicator(Cmp(">", e1, e2)), Indicator(Cmp("<=", e1, e3))),
        Mul(Indicator(Cmp("<=", e1, e2)), Indicator(Cmp("<=", e2, e3))),
    )


def min_ge_split(e1: ProbExpr, e2: ProbExpr, e3: ProbExpr) -> ProbExpr:
    """C(min(e1,e2) >= e3) = C(e1 < e2) C(e1 >= e3) + C(e1 >= e2) C(e2 >= e3)."""
    return Add(
        Mul(Indicator(Cmp("<", e1, e2)), Indicator(Cmp(">=", e1, e3))),
        Mul(Indicator(Cmp(">=", e1, e2)), Indicator(Cmp(">=", e2, e3))),
    )


# ---------------------------------------------------------------------------
# Engine


@dataclass
class SimplifyResult:
    expr: ProbExpr
    status: str  # "closed" | "residual"
    steps: int
    budget_exhausted: bool = False

    @property
    def closed(self) -> bool:
        return self.status == "closed"


class _Budget:
    def __init__(self, limit: int):
        self.limit = limit
        self.steps = 0
        self.exhausted = False

    def spend(self) -> bool:
        if self.steps >= self.limit:
            self.exhausted = True
            return False
        self.steps += 1
        return True


class Simplifier:
    def __init__(self, assumptions: Iterable[BoolExpr] = (), budget: int = 10_000, trace: Optional[list] = None):
        self.assumption_conds = tuple(assumptions)
        self.base_facts = []
        for a in self.assumption_conds:
            self.base_facts.extend(fact_maps(a))
        self.budget = _Budget(budget)
        self.trace = trace

    def _log(self, rule: str, detail: str) -> None:
        if self.trace is not None:
            self.trace.append(f"{rule}: {detail}")

    # -- public entry points

    def run(self, e: ProbExpr) -> SimplifyResult:
        prev = None
        cur = e
        while prev != cur and not self.budget.exhausted:
            prev = cur
            cur = self._simplify(cur, list(self.base_facts))
        status = "closed" if is_closed(cur) else "residual"
        return SimplifyResult(cur, status, self.budget.steps, self.budget.exhausted)

    # -- recursive simplification

    def _simplify(self, e: ProbExpr, facts: list) -> ProbExpr:
        addends = flatten_sum(e)
        out_terms: list = []
        for sign, a in addends:
            pieces = self._simplify_term(a, facts)
            for coeff, factors in pieces:
                out_terms.append((sign * coeff, factors))
        return self._combine(out_terms)

    def _combine(self, terms: list) -> ProbExpr:
        # merge identical factor sequences first
        merged: list = []
        for coeff, factors in terms:
            if coeff == 0:
                continue
            key = tuple(print_prob(f) for f in factors)
            for entry in merged:
                if entry[2] == key:
                    entry[0] += coeff
                    break
            else:
                merged.append([coeff, list(factors), key])
        merged = [m for m in merged if m[0] != 0]

        # then merge terms that differ only in one affine factor
        groups: list = []  # [rest_key, rest, accumulated_affine, insert_pos]
        misc: list = []
        for coeff, factors, _ in merged:
            aff_idx = [i for i, f in enumerate(factors) if _plain_affine(f)]
            if len(aff_idx) > 1:
                misc.append((coeff, factors))
                continue
            if aff_idx:
                pos = aff_idx[0]
                aff = affine_of(factors[pos])
                rest = factors[:pos] + factors[pos + 1:]
            else:
                pos = 0
                aff = {_CONST: Fraction(1)}
                rest = factors
            rest_key = tuple(sorted(print_prob(f) for f in rest))
            for g in groups:
                if g[0] == rest_key:
                    g[2] = _madd(g[2], aff, coeff)
                    break
            else:
                groups.append([rest_key, rest, _scale(dict(aff), coeff), pos])

        if len(groups) > 1:
            self._widen_merge(groups)

        exprs = []
        for _, rest, aff, pos in groups:
            aff = {k: v for k, v in aff.items() if v != 0}
            c = _const_of(aff)
            if c is not None:
                if c == 0:
                    continue
                exprs.append(term_of_factors(c, rest).to_expr())
                continue
            coeff, reduced = _extract_content(aff)
            factors = rest[:pos] + [build_affine(reduced)] + rest[pos:]
            exprs.append(term_of_factors(coeff, factors).to_expr())
        for coeff, factors in misc:
            exprs.append(term_of_factors(coeff, factors).to_expr())
        return rebuild_sum(exprs)

    def _simplify_term(self, e: ProbExpr, facts: list) -> list:
        """Simplify one addend; returns a list of (coeff, factor-list) pieces."""
        t = Term.of(e)
        if t.coeff == 0:
            return []
        factors = t.factor_list()
        changed = True
        rounds = 0
        while changed and rounds < 200:
            changed = False
            rounds += 1
            # facts contributed by each indicator factor
            factor_facts = [fact_maps(f.cond) if isinstance(f, Indicator) else [] for f in factors]

            def sibling_facts(skip: int) -> list:
                fs = list(facts)
                for j, fl in enumerate(factor_facts):
                    if j != skip:
                        fs.extend(fl)
                return fs

            for i, f in enumerate(factors):
                fs = sibling_facts(i)
                if isinstance(f, (Add, Sub, Neg)) and _should_distribute(f):
                    parts = flatten_sum(f)
                    if len(parts) > 1 or parts[0][0] < 0:
                        rest = factors[:i] + factors[i + 1:]
                        if not self.budget.spend():
                            return [(t.coeff, factors)]
                        self._log("distribute", print_prob(f)[:80])
                        return self._distribute(t.coeff, rest, f, facts)
                new = self._rewrite_factor(f, fs)
                if new is None:
                    continue
                kind, payload = new
                if kind == "zero":
                    return []
                if kind == "one":
                    factors = factors[:i] + factors[i + 1:]
                    changed = True
                    break
                if kind == "replace":
                    if isinstance(payload, (Add, Sub)) or isinstance(payload, Neg):
                        # the factor split into a sum: distribute and restart
                        rest = factors[:i] + factors[i + 1:]
                        return self._distribute(t.coeff, rest, payload, facts)
                    lit = Term.of(payload)
                    if lit.coeff != 1 or len(lit.factor_list()) != 1 or lit.factor_list()[0] != payload:
                        # payload carries coefficients or several factors
                        rest = factors[:i] + factors[i + 1:]
                        return self._distribute(t.coeff, rest, payload, facts)
                    factors = factors[:i] + [payload] + factors[i + 1:]
                    changed = True
                    break
            if changed:
                continue

            fused = self._fuse_ranges(factors, facts)
            if fused is not None:
                factors = fused
                changed = True
                continue

            pair = self._count_to_max(factors)
            if pair is not None:
                factors = pair
                changed = True
                continue

        return [(t.coeff, factors)]

    def _distribute(self, coeff: Fraction, rest: list, summed: ProbExpr, facts: list) -> list:
        pieces = []
        for sign, addend in flatten_sum(summed):
            sub = Term.of(addend)
            new_factors = rest + sub.factor_list()
            merged = term_of_factors(Fraction(sign) * coeff * sub.coeff, new_factors)
            if merged.coeff == 0:
                continue
            pieces.extend(self._simplify_term(merged.to_expr(), facts))
        return pieces

    # -- individual factor rewriting

    def _rewrite_factor(self, f: ProbExpr, facts: list):
        if isinstance(f, Indicator):
            return self._rewrite_indicator(f, facts)
        if isinstance(f, (MinE, MaxE)):
            folded = self._fold_minmax(f, facts)
            if folded is not None:
                return ("replace", folded)
            return None
        if isinstance(f, Pow):
            return self._rewrite_pow(f, facts)
        if isinstance(f, FinProd):
            return self._rewrite_finprod(f, facts)
        if isinstance(f, SumOver):
            return self._rewrite_sum(f, facts)
        if isinstance(f, (Add, Sub, Neg)):
            inner = self._simplify(f, facts)
            if inner != f:
                return ("replace", inner)
            return None
        if isinstance(f, Div):
            # normalize nested arithmetic inside quotients
            num = self._simplify(f.left, facts)
            den = self._simplify(f.right, facts)
            if num != f.left or den != f.right:
                return ("replace", Div(num, den))
            return None
        return None

    def _rewrite_indicator(self, f: Indicator, facts: list):
        cond = f.cond
        if isinstance(cond, BLit):
            return ("one", None) if cond.value else ("zero", None)
        if isinstance(cond, BNot):
            if not self.budget.spend():
                return None
            self._log("push_negation", print_prob(f))
            return ("replace", Indicator(negate_bool(cond.arg)))
        if isinstance(cond, BAnd):
            if not self.budget.spend():
                return None
            self._log("and_product", print_prob(f))
            return ("replace", and_product(cond))
        if isinstance(cond, BOr):
            if not self.budget.spend():
                return None
            self._log("or_partition", print_prob(f))
            return ("replace", or_partition(cond))
        if prove_cond(cond, facts):
            if not self.budget.spend():
                return None
            self._log("prove_guard", print_prob(f))
            return ("one", None)
        if refute_cond(cond, facts):
            if not self.budget.spend():
                return None
            self._log("refute_guard", print_prob(f))
            return ("zero", None)
        folded = self._fold_minmax_in_cond(cond, facts)
        if folded is not None:
            if not self.budget.spend():
                return None
            self._log("minmax_fold", print_bool_short(cond))
            return ("replace", Indicator(folded))
        # canonical one-variable ranges
        if isinstance(cond, Cmp) and cond.op in ("<", "<=", ">", ">="):
            r = self._cmp_to_range(cond)
            if r is not None:
                return ("replace", Indicator(r))
        if isinstance(cond, Range):
            lo = None if cond.lower is None else build_affine(affine_of(cond.lower))
            hi = None if cond.upper is None else build_affine(affine_of(cond.upper))
            if lo != cond.lower or hi != cond.upper:
                return ("replace", Indicator(Range(cond.var, lo, hi)))
            if cond.lower is not None and cond.lower == cond.upper:
                if not self.budget.spend():
                    return None
                self._log("interval_point", print_bool_short(cond))
                return ("replace", Indicator(Cmp("=", Sym(cond.var), cond.lower)))
        return None

    def _cmp_to_range(self, cond: Cmp) -> Optional[Range]:
        """Turn a comparison isolating a single variable into a range atom."""
        syms = sorted(free_symbols(cond.left) | free_symbols(cond.right))
        d = _madd(affine_of(cond.left), affine_of(cond.right), Fraction(-1))
        candidates = []
        for name in syms:
            a = d.get(Sym(name), Fraction(0))
            if a not in (1, -1):
                continue
            if any(k is not _CONST and k != Sym(name) and name in free_symbols(k) for k in d):
                continue
            candidates.append((name, a))
        if len(candidates) != 1:
            return None
        name, a = candidates[0]
        rest = {k: v for k, v in d.items() if k != Sym(name)}
        solved = build_affine(_scale(rest, Fraction(-1) / a))
        op = cond.op
        if a < 0:
            op = {"<": ">", "<=": ">=", ">": "<", ">=": "<="}[op]
        one = Lit(Fraction(1))
        if op == "<=":
            return Range(name, None, solved)
        if op == "<":
            return Range(name, None, Sub(solved, one))
        if op == ">=":
            return Range(name, solved, None)
        return Range(name, Add(solved, one), None)

    def _fold_minmax(self, f: ProbExpr, facts: list) -> Optional[ProbExpr]:
        if isinstance(f, MinE):
            if _leq(f.left, f.right, facts):
                if not self.budget.spend():
                    return None
                self._log("minmax_fold", print_prob(f))
                return f.left
            if _leq(f.right, f.left, facts):
                if not self.budget.spend():
                    return None
                self._log("minmax_fold", print_prob(f))
                return f.right
            return None
        if isinstance(f, MaxE):
            if _leq(f.left, f.right, facts):
                if not self.budget.spend():
                    return None
                self._log("minmax_fold", print_prob(f))
                return f.right
            if _leq(f.right, f.left, facts):
                if not self.budget.spend():
                    return None
                self._log("minmax_fold", print_prob(f))
                return f.left
            return None
        return None

    def _fold_minmax_in_cond(self, cond: BoolExpr, facts: list) -> Optional[BoolExpr]:
        """Fold one min/max occurrence inside a condition's bound expressions."""

        def fold_expr(e: ProbExpr) -> Optional[ProbExpr]:
            if isinstance(e, (MinE, MaxE)):
                got = self._try_fold_value(e, facts)
                if got is not None:
                    return got
            for name, child in _expr_children(e):
                got = fold_expr(child)
                if got is not None:
                    return _replace_child(e, name, got)
            return None

        if isinstance(cond, Cmp):
            l = fold_expr(cond.left)
            if l is not None:
                return Cmp(cond.op, l, cond.right)
            r = fold_expr(cond.right)
            if r is not None:
                return Cmp(cond.op, cond.left, r)
            return None
        if isinstance(cond, Range):
            if cond.lower is not None:
                l = fold_expr(cond.lower)
                if l is not None:
                    return Range(cond.var, l, cond.upper)
            if cond.upper is not None:
                u = fold_expr(cond.upper)
                if u is not None:
                    return Range(cond.var, cond.lower, u)
            return None
        return None

    def _try_fold_value(self, e: ProbExpr, facts: list) -> Optional[ProbExpr]:
        if isinstance(e, MinE):
            if _leq(e.left, e.right, facts):
                return e.left
            if _leq(e.right, e.left, facts):
                return e.right
        if isinstance(e, MaxE):
            if _leq(e.left, e.right, facts):
                return e.right
            if _leq(e.right, e.left, facts):
                return e.left
        return None

    def _rewrite_pow(self, f: Pow, facts: list):
        base, expo = f.base, f.exponent
        if not isinstance(base, (Lit, Sym)):
            new_base = self._simplify(base, facts)
            if new_base != base:
                return ("replace", Pow(new_base, expo))
        if isinstance(expo, Lit) and isinstance(expo.value, Fraction) and expo.value == 0:
            return ("one", None)
        if isinstance(expo, Lit) and isinstance(expo.value, Fraction) and expo.value == 1:
            return ("replace", base)
        if isinstance(base, Lit) and isinstance(base.value, Fraction) and isinstance(expo, Lit) \
                and isinstance(expo.value, Fraction) and expo.value.denominator == 1:
            k = int(expo.value)
            if k >= 0 or base.value != 0:
                return ("replace", Lit(base.value ** k))
        if isinstance(base, Lit) and isinstance(base.value, Fraction) and base.value == 0:
            if entail(facts, _madd(affine_of(expo), {_CONST: Fraction(1)}, Fraction(-1))):
                if not self.budget.spend():
                    return None
                self._log("zero_pow", print_prob(f))
                return ("zero", None)  # exponent >= 1
            if entail(facts, affine_of(expo)):
                if not self.budget.spend():
                    return None
                self._log("zero_pow", print_prob(f))
                return ("replace", Indicator(Cmp("=", expo, Lit(Fraction(0)))))
        if isinstance(base, Lit) and isinstance(base.value, Fraction) and base.value == 1:
            return ("one", None)
        if isinstance(base, Indicator) and isinstance(expo, Lit) and isinstance(expo.value, Fraction) \
                and expo.value.denominator == 1 and expo.value >= 1:
            return ("replace", base)
        return None

    def _rewrite_finprod(self, f: FinProd, facts: list):
        body_facts = list(facts)
        body_facts.append(_madd({Sym(f.var): Fraction(1)}, affine_of(f.lower), Fraction(-1)))
        body_facts.append(_madd(affine_of(f.upper), {Sym(f.var): Fraction(1)}, Fraction(-1)))
        body = self._simplify(f.body, body_facts)
        if body != f.body:
            return ("replace", FinProd(f.var, f.lower, f.upper, body))
        if f.var not in free_symbols(body):
            if not self.budget.spend():
                return None
            width_nonneg = entail(facts, affine_of(Add(Sub(f.upper, f.lower), Lit(Fraction(1)))))
            self._log("finprod_const", print_prob(f))
            return ("replace", finprod_const_pow(f.lower, f.upper, body, width_nonneg))
        if isinstance(body, Indicator) and isinstance(body.cond, Cmp) and body.cond.op == "!=":
            d = _madd(affine_of(body.cond.left), affine_of(body.cond.right), Fraction(-1))
            a = d.get(Sym(f.var), Fraction(0))
            if a in (1, -1) and not any(
                k is not _CONST and k != Sym(f.var) and f.var in free_symbols(k) for k in d
            ):
                rest = {k: v for k, v in d.items() if k != Sym(f.var)}
                point = build_affine(_scale(rest, Fraction(-1) / a))
                if not self.budget.spend():
                    return None
                self._log("finprod_neq", print_prob(f))
                return ("replace", finprod_neq(f.lower, f.upper, point))
        return None

    # -- sum closure

    def _rewrite_sum(self, f: SumOver, facts: list):
        v = f.var
        body = self._simplify(f.body, facts)
        addends = flatten_sum(body)
        if len(addends) > 1 or addends[0][0] < 0:
            # distribute the sum over the addends
            pieces = []
            for sign, a in addends:
                piece = SumOver(v, a)
                pieces.append(piece if sign > 0 else Neg(piece))
            if not self.budget.spend():
                return None
            self._log("sum_distribute", f"sum_{v}")
            return ("replace", rebuild_sum(pieces))
        if body != f.body:
            return ("replace", SumOver(v, body))

        t = Term.of(body)
        if t.coeff == 0:
            return ("zero", None)
        factors = t.factor_list()
        hoist = [g for g in factors if v not in free_symbols(g)]
        dep = [g for g in factors if v in free_symbols(g)]
        if not dep:
            return None  # sum over the whole domain of a constant: residual
        if hoist or t.coeff != 1:
            if not self.budget.spend():
                return None
            self._log("hoist", f"sum_{v}")
            inner = term_of_factors(Fraction(1), dep).to_expr()
            outer = term_of_factors(t.coeff, hoist).to_expr()
            return ("replace", Mul(outer, SumOver(v, inner)))

        closed = self._close_sum(v, dep, list(facts))
        if closed is not None:
            return ("replace", closed)

        # an additive factor under the sum blocks the closure rules: split the
        # sum over its parts (each part gets its own sum, so recombination
        # upstream cannot undo the step)
        for g in dep:
            if isinstance(g, (Add, Sub, Neg)) and len(flatten_sum(g)) > 1:
                if not self.budget.spend():
                    return None
                self._log("distribute", f"sum_{v}")
                rest = [h for h in dep if h is not g]
                pieces = []
                for sign, part in flatten_sum(g):
                    inner = term_of_factors(Fraction(1), rest + [part]).to_expr()
                    piece: ProbExpr = SumOver(v, inner)
                    pieces.append(piece if sign > 0 else Neg(piece))
                return ("replace", rebuild_sum(pieces))

        # min/max involving the summation variable blocks isolation: case
        # split, as the last resort because it duplicates the term
        for g in dep:
            node = _find_minmax_with(g, v)
            if node is None:
                continue
            if not self.budget.spend():
                return None
            self._log("minmax_split", print_prob(node))
            cases = split_min(node.left, node.right) if isinstance(node, MinE) else split_max(node.left, node.right)
            pieces = []
            for guard, value in cases:
                new_dep = [_subst_node(h, node, value) for h in dep]
                inner = term_of_factors(Fraction(1), new_dep + [Indicator(guard)]).to_expr()
                pieces.append(SumOver(v, inner))
            return ("replace", rebuild_sum(pieces))
        return None

    def _close_sum(self, v: str, dep: list, facts: list) -> Optional[ProbExpr]:
        # decompose dependent factors into atoms on v
        points: list = []
        neqs: list = []
        lowers: list = []
        uppers: list = []
        passthrough: list = []
        extras: list = []
        sym_count = 0
        pow_factor: Optional[Pow] = None

        for g in dep:
            if g == Sym(v):
                sym_count += 1
                continue
            if isinstance(g, Pow) and isinstance(g.exponent, Sym) and g.exponent.name == v \
                    and v not in free_symbols(g.base):
                if pow_factor is None:
                    pow_factor = g
                    continue
                extras.append(g)
                continue
            if isinstance(g, Indicator):
                atoms = _cond_atoms(g.cond)
                local: list = []
                ok = atoms is not None
                if ok:
                    for atom in atoms:
                        if v not in free_symbols(atom):
                            local.append(("passthrough", atom))
                            continue
                        got = _isolate_atom(atom, v)
                        if got is None:
                            ok = False
                            break
                        local.extend(got)
                if not ok:
                    extras.append(g)
                    continue
                for kind, payload in local:
                    if kind == "point":
                        points.append(payload)
                    elif kind == "neq":
                        neqs.append(payload)
                    elif kind == "lower":
                        lowers.append(payload)
                    elif kind == "upper":
                        uppers.append(payload)
                    else:
                        passthrough.append(Indicator(payload))
                continue
            extras.append(g)

        if points:
            if not self.budget.spend():
                return None
            point = points[0]
            self._log("point_sum", f"sum_{v} at {v} = {print_prob(point)}")
            rest: list = []
            for e in points[1:]:
                rest.append(Indicator(Cmp("=", point, e)))
            for e in neqs:
                rest.append(Indicator(Cmp("!=", point, e)))
            for e in lowers:
                rest.append(Indicator(Cmp("<=", e, point)))
            for e in uppers:
                rest.append(Indicator(Cmp("<=", point, e)))
            rest.extend(passthrough)
            if sym_count:
                rest.extend([point] * sym_count)
            if pow_factor is not None:
                rest.append(Pow(pow_factor.base, point))
            for g in extras:
                rest.append(subst(g, {v: point}))
            if not rest:
                return Lit(Fraction(1))
            out = term_of_factors(Fraction(1), rest).to_expr()
            return self._simplify(out, facts)

        if extras:
            return None

        lo = self._fold_bound(lowers, facts, is_lower=True)
        hi = self._fold_bound(uppers, facts, is_lower=False)

        if neqs:
            if not self.budget.spend():
                return None
            self._log("neq_split", f"sum_{v} without {v} = {print_prob(neqs[0])}")
            split = neq_split(lo, hi, neqs[0], v)
            halves = [a for _, a in flatten_sum(split)]
            rebuilt: list = []
            for half in halves:
                factors = [half] + [Indicator(Cmp("!=", Sym(v), e)) for e in neqs[1:]] + passthrough
                if sym_count:
                    factors.extend([Sym(v)] * sym_count)
                if pow_factor is not None:
                    factors.append(pow_factor)
                rebuilt.append(SumOver(v, term_of_factors(Fraction(1), factors).to_expr()))
            return self._simplify(rebuild_sum(rebuilt), facts)

        if sym_count > 1:
            return None

        def with_passthrough(closed_part: ProbExpr) -> ProbExpr:
            out = term_of_factors(Fraction(1), passthrough + [closed_part]).to_expr()
            return self._simplify(out, facts)

        if pow_factor is not None:
            base = pow_factor.base
            if lo is not None and hi is None and _is_zero(lo) and self._unit_interval(base):
                if not self.budget.spend():
                    return None
                if sym_count == 0:
                    self._log("geometric_sum", f"sum_{v} {print_prob(pow_factor)}")
                    return with_passthrough(geometric_sum(base))
                self._log("geometric_moment", f"sum_{v} {v}*{print_prob(pow_factor)}")
                return with_passthrough(geometric_moment(base))
            return None

        if lo is None or hi is None:
            return None
        if not self.budget.spend():
            return None
        if sym_count == 0:
            self._log("interval_count", f"sum_{v} C({print_prob(lo)} <= {v} <= {print_prob(hi)})")
            return with_passthrough(interval_count(lo, hi))
        self._log("interval_moment", f"sum_{v} {v}*C({print_prob(lo)} <= {v} <= {print_prob(hi)})")
        return with_passthrough(interval_moment(lo, hi))

    def _fold_bound(self, bounds: list, facts: list, is_lower: bool) -> Optional[ProbExpr]:
        if not bounds:
            return None
        acc = bounds[0]
        for b in bounds[1:]:
            if _lit_value(acc) is not None and _lit_value(b) is not None:
                va, vb = _lit_value(acc), _lit_value(b)
                acc = Lit(max(va, vb) if is_lower else min(va, vb))
                continue
            if is_lower:
                acc = b if _leq(acc, b, facts) else (acc if _leq(b, acc, facts) else MaxE(acc, b))
            else:
                acc = b if _leq(b, acc, facts) else (acc if _leq(acc, b, facts) else MinE(acc, b))
        return acc

    def _unit_interval(self, a: ProbExpr) -> bool:
        """Is 0 < a < 1 known, either literally or by declared assumption?"""
        if isinstance(a, Lit) and isinstance(a.value, Fraction):
            return 0 < a.value < 1
        conjuncts = [c for cond in self.assumption_conds for c in _conjunct_list(cond)]
        above_zero = any(
            isinstance(c, Cmp) and c.op == "<" and c.left == Lit(Fraction(0)) and c.right == a for c in conjuncts
        ) or any(
            isinstance(c, Cmp) and c.op == ">" and c.left == a and c.right == Lit(Fraction(0)) for c in conjuncts
        )
        below_one = any(
            isinstance(c, Cmp) and c.op == "<" and c.left == a and c.right == Lit(Fraction(1)) for c in conjuncts
        ) or any(
            isinstance(c, Cmp) and c.op == ">" and c.left == Lit(Fraction(1)) and c.right == a for c in conjuncts
        )
        return above_zero and below_one

    # -- interval fusion at term level

    def _fuse_ranges(self, factors: list, facts: list) -> Optional[list]:
        # a factor joins the group of variable v when it resolves into pure
        # lower/upper bounds on v; the variable with the most members wins
        groups: dict = {}
        for i, f in enumerate(factors):
            if not isinstance(f, Indicator):
                continue
            atoms = _cond_atoms(f.cond)
            if atoms is None:
                continue
            for v in sorted(free_symbols(f.cond)):
                entries: list = []
                ok = True
                for atom in atoms:
                    got = _isolate_atom(atom, v) if v in free_symbols(atom) else None
                    if got is None or any(kind not in ("lower", "upper") for kind, _ in got):
                        ok = False
                        break
                    entries.extend(got)
                if ok and entries:
                    groups.setdefault(v, []).append((i, entries))
        candidates = [(len(g), v) for v, g in groups.items() if len(g) >= 2]
        if not candidates:
            return None
        _, var = max(candidates, key=lambda t: (t[0], t[1]))
        members = groups[var]
        if not self.budget.spend():
            return None
        idxs = {i for i, _ in members}
        other_facts = list(facts)
        for i, f in enumerate(factors):
            if i not in idxs and isinstance(f, Indicator):
                other_facts.extend(fact_maps(f.cond))
        lowers = [e for _, entries in members for kind, e in entries if kind == "lower"]
        uppers = [e for _, entries in members for kind, e in entries if kind == "upper"]
        lo = self._fold_bound(lowers, other_facts, is_lower=True)
        hi = self._fold_bound(uppers, other_facts, is_lower=False)
        self._log("interval_fuse", f"{len(members)} constraints on {var}")
        fused = Indicator(Range(var, lo, hi))
        first = min(idxs)
        out = []
        for i, f in enumerate(factors):
            if i == first:
                out.append(fused)
            elif i not in idxs:
                out.append(f)
        return out

    def _widen_merge(self, groups: list) -> None:
        """Merge term groups whose ranges differ only where the affine part vanishes.

        (z-1)*C(2 <= z <= n) may widen to (z-1)*C(1 <= z <= n) because the
        added point contributes zero; widening happens only when it makes two
        groups identical.
        """
        changed = True
        while changed:
            changed = False
            for i in range(len(groups)):
                for j in range(len(groups)):
                    if i == j or groups[i] is None or groups[j] is None:
                        continue
                    gi, gj = groups[i], groups[j]
                    if len(gi[1]) != len(gj[1]):
                        continue
                    diff = [
                        (a, b)
                        for a, b in zip(sorted(gi[1], key=print_prob), sorted(gj[1], key=print_prob))
                        if a != b
                    ]
                    if len(diff) != 1:
                        continue
                    fa, fb = diff[0]
                    if not (
                        isinstance(fa, Indicator) and isinstance(fa.cond, Range)
                        and isinstance(fb, Indicator) and isinstance(fb.cond, Range)
                        and fa.cond.var == fb.cond.var
                    ):
                        continue
                    widened = self._widen_range_to(gi[2], fa.cond, fb.cond)
                    if widened is None:
                        continue
                    if not self.budget.spend():
                        return
                    self._log("widen_guard", f"{fa.cond.var}")
                    gj[2] = _madd(gj[2], gi[2], Fraction(1))
                    groups[i] = None
                    changed = True
                    break
                if changed:
                    break
        groups[:] = [g for g in groups if g is not None]

    def _widen_range_to(self, aff: dict, src: Range, dst: Range, max_steps: int = 3):
        """Can `src` widen into `dst` one vanishing step at a time?"""
        a = aff.get(Sym(src.var), Fraction(0))
        if a == 0:
            return None
        rest = {k: v for k, v in aff.items() if k != Sym(src.var)}

        def vanishes(at: ProbExpr) -> bool:
            return _const_of(_madd(rest, affine_of(at), a)) == 0

        lo, hi = src.lower, src.upper
        for _ in range(max_steps):
            if lo == dst.lower and hi == dst.upper:
                return (lo, hi)
            if lo is not None and dst.lower is not None and lo != dst.lower:
                step = build_affine(affine_of(Sub(lo, Lit(Fraction(1)))))
                if vanishes(step):
                    lo = step
                    continue
            if hi is not None and dst.upper is not None and hi != dst.upper:
                step = build_affine(affine_of(Add(hi, Lit(Fraction(1)))))
                if vanishes(step):
                    hi = step
                    continue
            return None
        if lo == dst.lower and hi == dst.upper:
            return (lo, hi)
        return None

    def _count_to_max(self, factors: list) -> Optional[list]:
        for i, f in enumerate(factors):
            if not (isinstance(f, Indicator) and isinstance(f.cond, Cmp) and f.cond.op == "<="):
                continue
            lo, hi = f.cond.left, f.cond.right
            want = _madd(affine_of(Add(Sub(hi, lo), Lit(Fraction(1)))), {}, Fraction(1))
            for j, g in enumerate(factors):
                if i == j:
                    continue
                if _const_of(_madd(affine_of(g), want, Fraction(-1))) == 0:
                    if not self.budget.spend():
                        return None
                    self._log("count_to_max", print_prob(g))
                    out = []
                    for k, h in enumerate(factors):
                        if k == i:
                            continue
                        out.append(count_to_max(g, lo, hi) if k == j else h)
                    return out
        return None


def print_bool_short(cond: BoolExpr) -> str:
    from .probexpr import print_bool

    s = print_bool(cond)
    return s if len(s) < 120 else s[:117] + "..."


def _extract_content(aff: dict) -> tuple:
    """Pull the common rational factor out of an affine map, sign-normalized."""
    import math

    vals = [v for v in aff.values() if v != 0]
    num = 0
    den = 1
    for v in vals:
        num = math.gcd(num, abs(v.numerator))
        den = den * v.denominator // math.gcd(den, v.denominator)
    content = Fraction(num, den)

    def order_key(atom):
        if atom is _CONST:
            return (2, "")
        if isinstance(atom, Sym):
            return (0, atom.name)
        return (1, print_prob(atom))

    lead = min((k for k in aff if aff[k] != 0), key=order_key)
    if aff[lead] < 0:
        content = -content
    return content, _scale(aff, Fraction(1) / content)


def _should_distribute(e) -> bool:
    """Distribute a sum factor only when its addends carry guarded structure."""
    if isinstance(e, (Indicator, SumOver, FinProd, SrcExpr, CallP)):
        return True
    from .unfolder import _children

    return any(_should_distribute(c) for c in _children(e))


def _plain_affine(f: ProbExpr) -> bool:
    """Affine purely over symbols (no opaque atoms)."""
    m = affine_of(f)
    return all(k is _CONST or isinstance(k, Sym) for k in m) and not isinstance(f, (Indicator, SumOver, FinProd))


def _lit_value(e: ProbExpr) -> Optional[Fraction]:
    if isinstance(e, Lit) and isinstance(e.value, Fraction):
        return e.value
    return None


def _is_zero(e: ProbExpr) -> bool:
    return _lit_value(e) == 0


def _conjunct_list(c: BoolExpr) -> list:
    if isinstance(c, BAnd):
        return _conjunct_list(c.left) + _conjunct_list(c.right)
    return [c]


def _cond_atoms(c: BoolExpr) -> Optional[list]:
    """Flatten a condition into comparison/range atoms; None when disjunctive."""
    if isinstance(c, BAnd):
        l = _cond_atoms(c.left)
        r = _cond_atoms(c.right)
        if l is None or r is None:
            return None
        return l + r
    if isinstance(c, (Cmp, Range, BLit)):
        return [c]
    return None


def _isolate_atom(atom: BoolExpr, v: str) -> Optional[list]:
    """Express an atomic condition as bounds on v.

    Returns a list of ("point"|"neq"|"lower"|"upper", bound-expr) entries, or
    None when v cannot be isolated (the enclosing sum stays residual).
    """
    if isinstance(atom, BLit):
        return []
    if isinstance(atom, Range):
        pieces: list = []
        if atom.var == v:
            if atom.lower is not None:
                if v in free_symbols(atom.lower):
                    return None
                pieces.append(("lower", atom.lower))
            if atom.upper is not None:
                if v in free_symbols(atom.upper):
                    return None
                pieces.append(("upper", atom.upper))
            return pieces
        # a range on another variable can still constrain v through its bounds;
        # v-free parts are kept as they stand
        if atom.lower is not None:
            low_cmp = Cmp("<=", atom.lower, Sym(atom.var))
            if v in free_symbols(atom.lower):
                got = _isolate_atom(low_cmp, v)
                if got is None:
                    return None
                pieces.extend(got)
            else:
                pieces.append(("passthrough", low_cmp))
        if atom.upper is not None:
            up_cmp = Cmp("<=", Sym(atom.var), atom.upper)
            if v in free_symbols(atom.upper):
                got = _isolate_atom(up_cmp, v)
                if got is None:
                    return None
                pieces.extend(got)
            else:
                pieces.append(("passthrough", up_cmp))
        return pieces
    if not isinstance(atom, Cmp):
        return None
    d = _madd(affine_of(atom.left), affine_of(atom.right), Fraction(-1))
    a = d.get(Sym(v), Fraction(0))
    if a not in (1, -1):
        return None
    if any(k is not _CONST and k != Sym(v) and v in free_symbols(k) for k in d):
        return None
    rest = {k: w for k, w in d.items() if k != Sym(v)}
    solved = build_affine(_scale(rest, Fraction(-1) / a))
    op = atom.op
    if a < 0:
        op = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "=": "=", "!=": "!="}[op]
    one = Lit(Fraction(1))
    if op == "=":
        return [("point", solved)]
    if op == "!=":
        return [("neq", solved)]
    if op == "<=":
        return [("upper", solved)]
    if op == "<":
        return [("upper", Sub(solved, one))]
    if op == ">=":
        return [("lower", solved)]
    return [("lower", Add(solved, one))]


def _expr_children(e: ProbExpr) -> list:
    if isinstance(e, (Add, Sub, Mul, Div, MinE, MaxE)):
        return [("left", e.left), ("right", e.right)]
    if isinstance(e, Neg):
        return [("arg", e.arg)]
    if isinstance(e, Pow):
        return [("base", e.base), ("exponent", e.exponent)]
    return []


def _replace_child(e: ProbExpr, name: str, new: ProbExpr) -> ProbExpr:
    kwargs = {f: getattr(e, f) for f in e.__dataclass_fields__}
    kwargs[name] = new
    return type(e)(**kwargs)


# ---------------------------------------------------------------------------
# Public entry points


def simplify(
    expr: ProbExpr,
    assumptions: Iterable[BoolExpr] = (),
    budget: int = 10_000,
    trace: Optional[list] = None,
) -> SimplifyResult:
    """Drive one expression toward closed form."""
    return Simplifier(assumptions, budget, trace).run(expr)


def inline_prob_calls(e: ProbExpr, bodies: dict, supply=None) -> ProbExpr:
    """Replace probability-function calls by their (already simplified) bodies."""
    from .probexpr import NameSupply

    if supply is None:
        used = set(free_symbols(e))
        for params, body in bodies.values():
            used |= set(params) | set(free_symbols(body))
        supply = NameSupply(used)

    from .unfolder import _children, _rewrite_first

    def matcher(x):
        return isinstance(x, CallP) and x.name in bodies

    def builder(x):
        params, body = bodies[x.name]
        args = [inline_prob_calls(a, bodies, supply) for a in x.args]
        return subst(body, dict(zip(params, args)), supply)

    out = e
    while True:
        out, changed = _rewrite_first(out, matcher, builder)
        if not changed:
            return out


def simplify_dist_program(
    dp,
    assumptions: Iterable[BoolExpr] = (),
    budget: int = 10_000,
    trace: Optional[list] = None,
):
    """Simplify every probability function bottom-up, inlining callees.

    Returns (DistProgram with simplified bodies, SimplifyResult for the output
    function whose expression has all calls inlined).
    """
    deps = {}
    for fn in dp.prob_functions:
        called = set()

        def scan(x):
            if isinstance(x, CallP):
                called.add(x.name)
            from .unfolder import _children

            for c in _children(x):
                scan(c)

        scan(fn.body)
        deps[fn.name] = {c for c in called if any(f.name == c for f in dp.prob_functions)}

    order: list = []
    state: dict = {}

    def visit(name):
        if state.get(name) == "done":
            return
        if state.get(name) == "active":
            raise ValueError(f"cyclic probability functions at {name}")
        state[name] = "active"
        for d in sorted(deps[name]):
            visit(d)
        state[name] = "done"
        order.append(name)

    for fn in dp.prob_functions:
        visit(fn.name)

    engine = Simplifier(assumptions, budget, trace)
    simplified: dict = {}
    out_dp = dp
    result = None
    for name in order:
        fn = dp.function(name)
        body = inline_prob_calls(fn.body, {n: (dp.function(n).params, simplified[n]) for n in simplified})
        res = engine.run(body)
        simplified[name] = res.expr
        out_dp = out_dp.replace_function(name, res.expr)
        if name == dp.output_function:
            result = res
    assert result is not None
    return out_dp, result


def _subst_node(e, old, new):
    if e == old:
        return new
    from .unfolder import _rewrite_first

    out = e
    while True:
        out, changed = _rewrite_first(out, lambda x: x == old, lambda x: new)
        if not changed:
            return out


def _find_unbound_minmax(e):
    """First min/max node not under a binder, pre-order."""
    if isinstance(e, (MinE, MaxE)):
        return e
    if isinstance(e, (SumOver, FinProd)):
        return None
    from .unfolder import _children

    for c in _children(e):
        got = _find_unbound_minmax(c)
        if got is not None:
            return got
    return None


def _find_minmax_with(e, var: str):
    """First min/max node mentioning `var`, not under a binder."""
    if isinstance(e, (MinE, MaxE)) and var in free_symbols(e):
        return e
    if isinstance(e, (SumOver, FinProd)):
        return None
    from .unfolder import _children

    for c in _children(e):
        got = _find_minmax_with(c, var)
        if got is not None:
            return got
    return None


def to_cases(
    expr: ProbExpr,
    assumptions: Iterable[BoolExpr] = (),
    budget: int = 10_000,
    trace: Optional[list] = None,
) -> ProbExpr:
    """Case-split normal form: eliminate min/max into guarded branches.

    The result is a sum of guard-times-monomial terms with disjoint guards per
    split; unsatisfiable branches are pruned by the engine.
    """
    engine = Simplifier(assumptions, budget, trace)
    cur = engine.run(expr).expr
    for _ in range(budget):
        addends = flatten_sum(cur)
        target = None
        for idx, (sign, a) in enumerate(addends):
            node = _find_unbound_minmax(a)
            if node is not None:
                target = (idx, sign, a, node)
                break
        if target is None:
            break
        idx, sign, a, node = target
        cases = split_min(node.left, node.right) if isinstance(node, MinE) else split_max(node.left, node.right)
        replacements = []
        for guard, value in cases:
            replacements.append(Mul(Indicator(guard), _subst_node(a, node, value)))
        pieces = []
        for k, (s, other) in enumerate(addends):
            if k == idx:
                for r in replacements:
                    pieces.append(r if sign > 0 else Neg(r))
            else:
                pieces.append(other if s > 0 else Neg(other))
        if trace is not None:
            trace.append(f"case_split: {print_prob(node)}")
        cur = engine.run(rebuild_sum(pieces)).expr
        if engine.budget.exhausted:
            break
    return cur


# ---------------------------------------------------------------------------
# Rule catalogue with randomized exact checking


class CounterexampleFound(AssertionError):
    pass


@dataclass(frozen=True)
class RewriteRule:
    name: str
    description: str
    trial: Callable  # trial(rng) -> None, raises CounterexampleFound


@dataclass
class RuleReport:
    name: str
    trials: int
    ok: bool
    message: str = ""


def check_rule(rule: RewriteRule, trials: int = 1000, seed: int = 0) -> RuleReport:
    """Randomized exact-equality trials for one catalogued rule."""
    rng = random.Random(f"{rule.name}/{seed}")
    try:
        for _ in range(trials):
            rule.trial(rng)
    except CounterexampleFound as exc:
        return RuleReport(rule.name, trials, False, str(exc))
    return RuleReport(rule.name, trials, True)


def _expect_equal(lhs, rhs, bindings, what: str) -> None:
    a = eval_prob(lhs, bindings)
    b = eval_prob(rhs, bindings)
    if a != b:
        raise CounterexampleFound(f"{what}: {print_prob(lhs)} = {a} but {print_prob(rhs)} = {b} at {bindings}")


def _rand_const(rng) -> Lit:
    return Lit(Fraction(rng.randint(-6, 6)))


def _rand_affine(rng, syms) -> ProbExpr:
    e: ProbExpr = _rand_const(rng)
    for s in syms:
        if rng.random() < 0.7:
            c = rng.randint(-3, 3)
            if c:
                e = Add(e, Mul(Lit(Fraction(c)), Sym(s)))
    return e


def _rand_body(rng, var: str) -> ProbExpr:
    """Small expression in one variable, safe to evaluate anywhere."""
    choice = rng.randrange(4)
    x = Sym(var)
    if choice == 0:
        return Add(x, _rand_const(rng))
    if choice == 1:
        return Mul(x, x)
    if choice == 2:
        return MaxE(x, _rand_const(rng))
    return MinE(Mul(Lit(Fraction(2)), x), _rand_const(rng))


def _trial_point_sum(rng) -> None:
    point = _rand_affine(rng, ["m"])
    body = _rand_body(rng, "x")
    lhs = SumOver("x", Mul(Indicator(Cmp("=", Sym("x"), point)), body))
    rhs = subst(body, {"x": point})
    _expect_equal(lhs, rhs, {"m": rng.randint(-5, 5)}, "point_sum")


def _trial_interval_count(rng) -> None:
    lo = _rand_affine(rng, ["m"])
    hi = _rand_affine(rng, ["m"])
    lhs = SumOver("x", Indicator(Range("x", lo, hi)))
    rhs = interval_count(lo, hi)
    _expect_equal(lhs, rhs, {"m": rng.randint(-4, 4)}, "interval_count")


def _trial_interval_moment(rng) -> None:
    lo = _rand_affine(rng, ["m"])
    hi = _rand_affine(rng, ["m"])
    lhs = SumOver("x", Mul(Sym("x"), Indicator(Range("x", lo, hi))))
    rhs = interval_moment(lo, hi)
    _expect_equal(lhs, rhs, {"m": rng.randint(-4, 4)}, "interval_moment")


def _trial_interval_fuse(rng) -> None:
    a, b, c, d = (_rand_const(rng) for _ in range(4))
    lhs = Mul(Indicator(Range("x", a, b)), Indicator(Range("x", c, d)))
    rhs = Indicator(Range("x", MaxE(a, c), MinE(b, d)))
    _expect_equal(lhs, rhs, {"x": rng.randint(-8, 8)}, "interval_fuse")


def _trial_max_le_split(rng) -> None:
    e1, e2, e3 = (_rand_const(rng) for _ in range(3))
    lhs = Indicator(Cmp("<=", MaxE(e1, e2), e3))
    rhs = max_le_split(e1, e2, e3)
    _expect_equal(lhs, rhs, {}, "max_le_split")


def _trial_min_ge_split(rng) -> None:
    e1, e2, e3 = (_rand_const(rng) for _ in range(3))
    lhs = Indicator(Cmp(">=", MinE(e1, e2), e3))
    rhs = min_ge_split(e1, e2, e3)
    _expect_equal(lhs, rhs, {}, "min_ge_split")


def _trial_min_value_split(rng) -> None:
    a = _rand_affine(rng, ["x"])
    b = _rand_affine(rng, ["x"])
    cases = split_min(a, b)
    rhs = rebuild_sum([Mul(Indicator(g), v) for g, v in cases])
    _expect_equal(MinE(a, b), rhs, {"x": rng.randint(-5, 5)}, "min_value_split")


def _trial_max_value_split(rng) -> None:
    a = _rand_affine(rng, ["x"])
    b = _rand_affine(rng, ["x"])
    cases = split_max(a, b)
    rhs = rebuild_sum([Mul(Indicator(g), v) for g, v in cases])
    _expect_equal(MaxE(a, b), rhs, {"x": rng.randint(-5, 5)}, "max_value_split")


def _geom_tail_bound(a: Fraction, n: int) -> Fraction:
    # covers both geometric identities: a^(N+1) * (N+2) / (1-a)^2
    return a ** (n + 1) * (n + 2) / (1 - a) ** 2


def _trial_geometric_sum(rng) -> None:
    a = Fraction(rng.randint(1, 9), 10)
    n = 64
    partial = sum((a ** x for x in range(n + 1)), Fraction(0))
    rhs = eval_prob(geometric_sum(Lit(a)), {})
    if abs(partial - rhs) > _geom_tail_bound(a, n):
        raise CounterexampleFound(f"geometric_sum at a={a}: partial {partial} vs {rhs}")


def _trial_geometric_moment(rng) -> None:
    a = Fraction(rng.randint(1, 9), 10)
    n = 96
    partial = sum((x * a ** x for x in range(n + 1)), Fraction(0))
    rhs = eval_prob(geometric_moment(Lit(a)), {})
    if abs(partial - rhs) > _geom_tail_bound(a, n):
        raise CounterexampleFound(f"geometric_moment at a={a}: partial {partial} vs {rhs}")


def _trial_finprod_neq(rng) -> None:
    lo = _rand_const(rng)
    hi = _rand_const(rng)
    e = _rand_affine(rng, ["m"])
    lhs = FinProd("j", lo, hi, Indicator(Cmp("!=", Sym("j"), e)))
    rhs = finprod_neq(lo, hi, e)
    _expect_equal(lhs, rhs, {"m": rng.randint(-4, 4)}, "finprod_neq")


def _trial_finprod_const(rng) -> None:
    lo = Lit(Fraction(rng.randint(-3, 3)))
    hi = Lit(Fraction(rng.randint(-3, 6)))
    body = Lit(Fraction(rng.randint(-3, 3)))
    lhs = FinProd("j", lo, hi, body)
    rhs = finprod_const_pow(lo, hi, body, nonneg_width=False)
    _expect_equal(lhs, rhs, {}, "finprod_const")


def _trial_neq_split(rng) -> None:
    lo = _rand_const(rng)
    hi = _rand_const(rng)
    c = _rand_const(rng)
    lhs = Mul(Indicator(Range("x", lo, hi)), Indicator(Cmp("!=", Sym("x"), c)))
    rhs = neq_split(lo, hi, c, "x")
    _expect_equal(lhs, rhs, {"x": rng.randint(-8, 8)}, "neq_split")


def _rand_cmp(rng, syms) -> Cmp:
    op = rng.choice(["=", "!=", "<", "<=", ">", ">="])
    return Cmp(op, _rand_affine(rng, syms), _rand_affine(rng, syms))


def _trial_or_partition(rng) -> None:
    a = _rand_cmp(rng, ["x"])
    b = _rand_cmp(rng, ["x"])
    lhs = Indicator(BOr(a, b))
    rhs = or_partition(BOr(a, b))
    _expect_equal(lhs, rhs, {"x": rng.randint(-6, 6)}, "or_partition")


def _trial_and_product(rng) -> None:
    a = _rand_cmp(rng, ["x"])
    b = _rand_cmp(rng, ["x"])
    lhs = Indicator(BAnd(a, b))
    rhs = and_product(BAnd(a, b))
    _expect_equal(lhs, rhs, {"x": rng.randint(-6, 6)}, "and_product")


def _trial_count_to_max(rng) -> None:
    lo = _rand_affine(rng, ["m"])
    hi = _rand_affine(rng, ["m"])
    width = Add(Sub(hi, lo), Lit(Fraction(1)))
    lhs = Mul(width, Indicator(Cmp("<=", lo, hi)))
    rhs = count_to_max(width, lo, hi)
    _expect_equal(lhs, rhs, {"m": rng.randint(-5, 5)}, "count_to_max")


def _trial_zero_pow(rng) -> None:
    e = Lit(Fraction(rng.randint(0, 6)))  # side condition: exponent >= 0
    lhs = Pow(Lit(Fraction(0)), e)
    rhs = Indicator(Cmp("=", e, Lit(Fraction(0))))
    _expect_equal(lhs, rhs, {}, "zero_pow")


def _trial_push_negation(rng) -> None:
    from .probexpr import eval_bool

    c = _rand_cmp(rng, ["x"])
    if rng.random() < 0.4:
        c = BAnd(c, _rand_cmp(rng, ["x"])) if rng.random() < 0.5 else BOr(c, _rand_cmp(rng, ["x"]))
    bindings = {"x": rng.randint(-6, 6)}
    if eval_bool(negate_bool(c), bindings) == eval_bool(c, bindings):
        raise CounterexampleFound(f"push_negation on {c} at {bindings}")


def _trial_trivial_cmp(rng) -> None:
    from .probexpr import eval_bool

    c = Cmp(rng.choice(["=", "!=", "<", "<=", ">", ">="]), _rand_const(rng), _rand_const(rng))
    truth = eval_bool(c, {})
    if prove_cond(c, []) and not truth:
        raise CounterexampleFound(f"trivial_cmp proved false condition {c}")
    if refute_cond(c, []) and truth:
        raise CounterexampleFound(f"trivial_cmp refuted true condition {c}")
    if not (prove_cond(c, []) or refute_cond(c, [])):
        raise CounterexampleFound(f"trivial_cmp undecided on constants {c}")


def _trial_isolate_var(rng) -> None:
    from .probexpr import eval_bool, eval_prob as _ev

    sign = rng.choice([1, -1])
    lhs_e = Add(Mul(Lit(Fraction(sign)), Sym("x")), _rand_affine(rng, ["m"]))
    rhs_e = _rand_affine(rng, ["m"])
    c = Cmp(rng.choice(["<", "<=", ">", ">=", "=", "!="]), lhs_e, rhs_e)
    entries = _isolate_atom(c, "x")
    if entries is None:
        raise CounterexampleFound(f"isolate_var failed on {c}")
    bindings = {"x": rng.randint(-8, 8), "m": rng.randint(-4, 4)}
    x = Fraction(bindings["x"])
    truth = True
    for kind, payload in entries:
        if kind == "passthrough":
            truth = truth and eval_bool(payload, bindings)
            continue
        val = _ev(payload, bindings)
        if kind == "point":
            truth = truth and x == val
        elif kind == "neq":
            truth = truth and x != val
        elif kind == "lower":
            truth = truth and x >= val
        else:
            truth = truth and x <= val
    if eval_bool(c, bindings) != truth:
        raise CounterexampleFound(f"isolate_var changed {print_bool_short(c)} at {bindings}")


def _trial_hoist(rng) -> None:
    c = _rand_const(rng)
    lo, hi = _rand_const(rng), _rand_const(rng)
    body = Indicator(Range("x", lo, hi))
    lhs = SumOver("x", Mul(c, body))
    rhs = Mul(c, SumOver("x", body))
    _expect_equal(lhs, rhs, {}, "hoist")


def _trial_sum_distribute(rng) -> None:
    lo, hi = _rand_const(rng), _rand_const(rng)
    f = Indicator(Range("x", lo, hi))
    g = Indicator(Cmp("=", Sym("x"), _rand_const(rng)))
    lhs = SumOver("x", Add(f, g))
    rhs = Add(SumOver("x", f), SumOver("x", g))
    _expect_equal(lhs, rhs, {}, "sum_distribute")


def _trial_minmax_fold(rng) -> None:
    a = _rand_affine(rng, ["x"])
    b = _rand_affine(rng, ["x"])
    guard = Indicator(Cmp("<=", a, b))
    lhs = Mul(guard, MinE(a, b))
    rhs = Mul(guard, a)
    _expect_equal(lhs, rhs, {"x": rng.randint(-6, 6)}, "minmax_fold")


def _trial_interval_point(rng) -> None:
    from .probexpr import eval_bool

    e = _rand_const(rng)
    r = Range("x", e, e)
    c = Cmp("=", Sym("x"), e)
    bindings = {"x": rng.randint(-8, 8)}
    if eval_bool(r, bindings) != eval_bool(c, bindings):
        raise CounterexampleFound(f"interval_point at {bindings}")


RULES = [
    RewriteRule("point_sum", "sum over x of C(x = e) f(x) is f(e)", _trial_point_sum),
    RewriteRule("interval_count", "sum of an interval indicator is its width", _trial_interval_count),
    RewriteRule("interval_moment", "first moment of an interval indicator", _trial_interval_moment),
    RewriteRule("interval_fuse", "product of interval indicators is the intersection", _trial_interval_fuse),
    RewriteRule("max_le_split", "split C(max(a,b) <= c) into ordered cases", _trial_max_le_split),
    RewriteRule("min_ge_split", "split C(min(a,b) >= c) into ordered cases", _trial_min_ge_split),
    RewriteRule("min_value_split", "min as guarded cases", _trial_min_value_split),
    RewriteRule("max_value_split", "max as guarded cases", _trial_max_value_split),
    RewriteRule("geometric_sum", "sum of a^x over x >= 0", _trial_geometric_sum),
    RewriteRule("geometric_moment", "sum of x a^x over x >= 0", _trial_geometric_moment),
    RewriteRule("finprod_neq", "finite product of point exclusions", _trial_finprod_neq),
    RewriteRule("finprod_const", "finite product with constant body is a power", _trial_finprod_const),
    RewriteRule("neq_split", "interval minus a point splits in two", _trial_neq_split),
    RewriteRule("or_partition", "C(a or b) partitioned disjointly", _trial_or_partition),
    RewriteRule("and_product", "C(a and b) = C(a) C(b)", _trial_and_product),
    RewriteRule("count_to_max", "width times emptiness guard is a max", _trial_count_to_max),
    RewriteRule("zero_pow", "0^e = C(e = 0) for e >= 0", _trial_zero_pow),
    RewriteRule("push_negation", "negation pushed to comparison atoms", _trial_push_negation),
    RewriteRule("trivial_cmp", "constant comparisons decide", _trial_trivial_cmp),
    RewriteRule("isolate_var", "unit-coefficient comparisons become ranges", _trial_isolate_var),
    RewriteRule("hoist", "constants move out of sums", _trial_hoist),
    RewriteRule("sum_distribute", "sums distribute over addition", _trial_sum_distribute),
    RewriteRule("minmax_fold", "guarded min/max collapses to a side", _trial_minmax_fold),
    RewriteRule("interval_point", "one-point interval is an equality", _trial_interval_point),
]

"""Sound bounds for distributions the rewriter could not close.

Residual terms are bounded from above by dropping factors that are provably
at most one (indicator terms over embedded calls, finite products of
indicators) and re-simplifying; anything that still will not close collapses
to the trivial bound.  The under side keeps only fully resolved terms.  From
the upper mass bound we derive monotone cumulative envelopes and an interval
for the expected value.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional

from .oracle import OracleDist
from .probexpr import (
    CallP,
    EvalContext,
    FinProd,
    Indicator,
    Lit,
    Neg,
    Pow,
    ProbExpr,
    SrcExpr,
    SumOver,
    eval_prob,
    expr_support,
)
from .simplifier import Simplifier, Term, flatten_sum, is_closed, rebuild_sum, term_of_factors


class ApproximationError(Exception):
    pass


class UnboundedSupportError(ApproximationError):
    pass


class WeightDeficitError(ApproximationError):
    """Mass below one: the program may diverge, a plain expected value is refused."""


@dataclass(frozen=True)
class PBox:
    """Pointwise bounds on a distribution in mass-function form."""

    over: ProbExpr
    under: ProbExpr
    out_var: str

    @property
    def exact(self) -> bool:
        return self.over == self.under

    def over_at(self, z, bindings: Mapping[str, object], ctx: Optional[EvalContext] = None) -> Fraction:
        b = dict(bindings)
        b[self.out_var] = z
        v = eval_prob(self.over, b, ctx)
        return min(max(v, Fraction(0)), Fraction(1))

    def under_at(self, z, bindings: Mapping[str, object], ctx: Optional[EvalContext] = None) -> Fraction:
        b = dict(bindings)
        b[self.out_var] = z
        v = eval_prob(self.under, b, ctx)
        return min(max(v, Fraction(0)), Fraction(1))

    def support_range(self, bindings: Mapping[str, object], ctx: Optional[EvalContext] = None):
        """Finite integer cover of the over-side support, or None when unbounded."""
        sup = expr_support(self.over, self.out_var, dict(bindings), ctx or EvalContext())
        if sup == "empty":
            return (0, -1)
        lo, hi = sup
        if lo is None or hi is None:
            return None
        return (lo, hi)


def _contains_embedded(e) -> bool:
    if isinstance(e, (SrcExpr, CallP)):
        return True
    from .unfolder import _children

    return any(_contains_embedded(c) for c in _children(e))


def _at_most_one(f: ProbExpr) -> bool:
    """Factors provably bounded by one (and nonnegative)."""
    if isinstance(f, Indicator):
        return True
    if isinstance(f, FinProd):
        return _at_most_one(f.body)
    if isinstance(f, Pow):
        return _at_most_one(f.base)
    return False


def _drop_embedded(e: ProbExpr) -> ProbExpr:
    """Remove unit-bounded factors that carry embedded calls, at any depth.

    Sound as an upper-bound transform on nonnegative structure: every dropped
    factor lies in [0, 1], and the walk only descends positions where raising
    a subterm raises the whole (products, sums, sum/product bodies and the
    left side of subtractions).
    """
    from .probexpr import Add, Mul, Sub

    if isinstance(e, Mul):
        factors = []

        def flatten(x):
            if isinstance(x, Mul):
                flatten(x.left)
                flatten(x.right)
            else:
                factors.append(x)

        flatten(e)
        kept = [
            _drop_embedded(f)
            for f in factors
            if not (_at_most_one(f) and _contains_embedded(f))
        ]
        if not kept:
            return Lit(Fraction(1))
        out = kept[0]
        for f in kept[1:]:
            out = Mul(out, f)
        return out
    if isinstance(e, SumOver):
        return SumOver(e.var, _drop_embedded(e.body))
    if isinstance(e, FinProd):
        return FinProd(e.var, e.lower, e.upper, _drop_embedded(e.body))
    if isinstance(e, Add):
        return Add(_drop_embedded(e.left), _drop_embedded(e.right))
    if isinstance(e, Sub):
        return Sub(_drop_embedded(e.left), e.right)
    if _at_most_one(e) and _contains_embedded(e):
        return Lit(Fraction(1))
    return e


def _obviously_nonneg(f: ProbExpr) -> bool:
    if isinstance(f, Indicator):
        return True
    if isinstance(f, Lit):
        return isinstance(f.value, Fraction) and f.value >= 0
    if isinstance(f, (FinProd, Pow)):
        return _obviously_nonneg(f.body if isinstance(f, FinProd) else f.base)
    if isinstance(f, CallP):
        return True  # probability functions map into [0, 1]
    if isinstance(f, SumOver):
        return _obviously_nonneg(f.body)
    from .probexpr import Mul

    if isinstance(f, Mul):
        return _obviously_nonneg(f.left) and _obviously_nonneg(f.right)
    return False


def over_approximate(expr: ProbExpr, out_var: str, assumptions: Iterable = (), budget: int = 10_000) -> PBox:
    """Build mass-function bounds around a (possibly residual) expression.

    Closed terms are kept exactly on both sides.  An unresolved term loses its
    unanalyzable at-most-one factors for the upper side; if it still will not
    close the bounds collapse to the trivial box.  The under side keeps closed
    terms only.
    """
    engine = Simplifier(assumptions, budget)
    top = PBox(Lit(Fraction(1)), Lit(Fraction(0)), out_var)

    over_terms: list = []
    under_terms: list = []
    for sign, addend in flatten_sum(expr):
        if is_closed(addend):
            over_terms.append((sign, addend))
            under_terms.append((sign, addend))
            continue
        t = Term.of(addend)
        coeff = t.coeff * sign
        factors = t.factor_list()
        if not all(_obviously_nonneg(f) or is_closed(f) for f in factors):
            return top
        candidate = _drop_embedded(term_of_factors(abs(coeff), factors).to_expr())
        res = engine.run(candidate)
        if not res.closed:
            return top
        if coeff < 0:
            # a nonnegative product with a negative sign: the dropped version
            # bounds it from below, and zero bounds it from above
            under_terms.append((-1, res.expr))
        else:
            over_terms.append((1, res.expr))

    def assemble(parts: list) -> ProbExpr:
        exprs = [a if sign > 0 else Neg(a) for sign, a in parts]
        return engine.run(rebuild_sum(exprs)).expr

    return PBox(assemble(over_terms), assemble(under_terms), out_var)


@dataclass
class CumulativeBounds:
    """Monotone envelopes of the cumulative distribution on a finite domain."""

    domain: list  # ordered z values (ints)
    f_up: list  # Fractions
    f_down: list

    def check_invariants(self) -> None:
        for seq in (self.f_up, self.f_down):
            for a, b in zip(seq, seq[1:]):
                if a > b:
                    raise ApproximationError("cumulative bound is not monotone")
            for v in seq:
                if not (0 <= v <= 1):
                    raise ApproximationError("cumulative bound out of [0, 1]")
        for lo, hi in zip(self.f_down, self.f_up):
            if lo > hi:
                raise ApproximationError("lower cumulative bound exceeds upper")

    def to_rows(self, pbox: PBox, bindings: Mapping[str, object]) -> list:
        rows = []
        for i, z in enumerate(self.domain):
            rows.append((z, pbox.under_at(z, bindings), pbox.over_at(z, bindings), self.f_down[i], self.f_up[i]))
        return rows


def cumulative_bounds(
    pbox: PBox,
    domain: Optional[Iterable[int]] = None,
    bindings: Mapping[str, object] = (),
    ctx: Optional[EvalContext] = None,
) -> CumulativeBounds:
    """Accumulate the upper mass bound into cumulative envelopes.

    The domain must cover the support of the upper bound; when omitted it is
    derived from the bound itself.
    """
    bindings = dict(bindings)
    if domain is None:
        sup = pbox.support_range(bindings, ctx)
        if sup is None:
            raise UnboundedSupportError("no finite support derivable; supply a domain")
        domain = range(sup[0], sup[1] + 1)
    zs = sorted(set(int(z) for z in domain))
    over = [pbox.over_at(z, bindings, ctx) for z in zs]

    f_up = []
    acc = Fraction(0)
    for w in over:
        acc += w
        f_up.append(min(acc, Fraction(1)))
    f_down = []
    tail = Fraction(0)
    for w in reversed(over):
        tail += w
        f_down.append(max(Fraction(1) - tail, Fraction(0)))
    f_down.reverse()
    # values below the first domain point carry no mass by assumption, and the
    # envelopes are clamped, so monotonicity holds by construction
    out = CumulativeBounds(zs, f_up, f_down)
    out.check_invariants()
    return out


@dataclass(frozen=True)
class ExpectedInterval:
    low: Fraction
    high: Fraction

    def __post_init__(self):
        if self.low > self.high:
            raise ApproximationError(f"inverted expected-value interval [{self.low}, {self.high}]")

    def contains(self, v: Fraction) -> bool:
        return self.low <= v <= self.high


def expected_interval(cum: CumulativeBounds) -> ExpectedInterval:
    """Bound the expected value from the cumulative envelopes.

    The lower end takes increments of the upper accumulation (which shifts
    mass left); the upper end takes increments of the tail accumulation that
    excludes each point itself, the predecessor convention applied the other
    way round, so an exact box collapses the interval.  Requires the upper
    accumulation to reach one: otherwise some weight may diverge and no
    expected value exists.
    """
    if not cum.domain:
        raise ApproximationError("empty domain")
    for z in cum.domain:
        if not isinstance(z, int) or isinstance(z, bool):
            raise ApproximationError("expected value needs a numeric domain")
    if cum.f_up[-1] != 1:
        raise WeightDeficitError(
            f"upper accumulation reaches {cum.f_up[-1]} < 1; the program may diverge"
        )
    low = Fraction(0)
    prev = Fraction(0)
    for z, up in zip(cum.domain, cum.f_up):
        low += z * (up - prev)
        prev = up
    # strict-tail accumulation: G(z_i) = f_down(z_{i+1}), G(z_last) = 1
    strict = list(cum.f_down[1:]) + [Fraction(1)]
    high = Fraction(0)
    prev = cum.f_down[0]
    for z, g in zip(cum.domain, strict):
        high += z * (g - prev)
        prev = g
    return ExpectedInterval(low, high)


def expected_value(
    dist,
    bindings: Mapping[str, object] = (),
    out_var: str = "z",
    domain: Optional[Iterable[int]] = None,
    ctx: Optional[EvalContext] = None,
) -> Fraction:
    """Exact expected value of a closed distribution (expression or oracle)."""
    if isinstance(dist, OracleDist):
        if dist.nonterm_mass != 0 or dist.unresolved_mass != 0:
            raise WeightDeficitError(f"weight deficit {dist.nonterm_mass + dist.unresolved_mass}")
        return dist.expected_value()
    bindings = dict(bindings)
    if domain is None:
        sup = expr_support(dist, out_var, bindings, ctx or EvalContext())
        if sup == "empty":
            sup = (0, -1)
        if sup[0] is None or sup[1] is None:
            raise UnboundedSupportError("no finite support derivable; supply a domain")
        domain = range(sup[0], sup[1] + 1)
    total = Fraction(0)
    mean = Fraction(0)
    for z in domain:
        b = dict(bindings)
        b[out_var] = z
        w = eval_prob(dist, b, ctx)
        total += w
        mean += z * w
    if total != 1:
        raise WeightDeficitError(f"total mass {total} is not 1; use the interval form")
    return mean


def check_termination_weight(
    under: ProbExpr,
    bindings: Mapping[str, object] = (),
    out_var: str = "z",
    ctx: Optional[EvalContext] = None,
) -> str:
    """"terminates" when the under-approximation provably carries weight one."""
    bindings = dict(bindings)
    sup = expr_support(under, out_var, bindings, ctx or EvalContext())
    if sup == "empty":
        return "unknown"
    lo, hi = sup
    if lo is None or hi is None:
        return "unknown"
    total = Fraction(0)
    for z in range(lo, hi + 1):
        b = dict(bindings)
        b[out_var] = z
        total += max(eval_prob(under, b, ctx), Fraction(0))
    return "terminates" if total == 1 else "unknown"


def bounds_csv(pbox: PBox, cum: CumulativeBounds, bindings: Mapping[str, object]) -> str:
    lines = ["z,under,over,f_down,f_up"]
    for z, under, over, fd, fu in cum.to_rows(pbox, bindings):
        lines.append(f"{z},{under},{over},{fd},{fu}")
    return "\n".join(lines) + "\n"

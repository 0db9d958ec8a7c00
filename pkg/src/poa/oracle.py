"""Exhaustive-enumeration oracle.

Instantiates the symbolic parameters of an input distribution, enumerates the
finite input support, runs the interpreter on every point and accumulates an
exact output distribution.  Every equivalence and soundness test in the suite
is checked against this module.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional

from . import lang
from .constructor import InputDist
from .probexpr import (
    BAnd,
    Cmp,
    ElemsIn,
    EvalContext,
    Indicator,
    Len,
    Mul,
    ProbExpr,
    Sym,
    eval_prob,
    expr_support,
)


class OracleError(Exception):
    pass


class UnboundedSupportError(OracleError):
    pass


class WeightNotOneError(OracleError):
    def __init__(self, total: Fraction):
        super().__init__(f"input weights sum to {total}, expected 1")
        self.total = total


@dataclass
class OracleDist:
    """Exact output distribution: value -> probability, plus leftover masses."""

    nonterm_mass: Fraction = Fraction(0)
    unresolved_mass: Fraction = Fraction(0)  # truncated-away input weight
    _mass: dict = field(default_factory=dict)  # value_key -> (value, Fraction)

    def add(self, value, weight: Fraction) -> None:
        key = lang.value_key(value)
        if key in self._mass:
            self._mass[key] = (value, self._mass[key][1] + weight)
        else:
            self._mass[key] = (value, weight)

    def prob(self, value) -> Fraction:
        entry = self._mass.get(lang.value_key(value))
        return entry[1] if entry else Fraction(0)

    def items(self) -> list:
        return [entry for _, entry in sorted(self._mass.items())]

    def support(self) -> list:
        return [v for v, _ in self.items()]

    def total_mass(self) -> Fraction:
        return sum((w for _, w in self.items()), Fraction(0))

    def expected_value(self) -> Fraction:
        if self.total_mass() + self.nonterm_mass + self.unresolved_mass != 1:
            raise OracleError("oracle distribution does not account for all input weight")
        total = Fraction(0)
        for v, w in self.items():
            if isinstance(v, bool) or not isinstance(v, int):
                raise OracleError("expected value needs numeric outputs")
            total += v * w
        return total

    def check_invariants(self) -> None:
        total = self.total_mass() + self.nonterm_mass + self.unresolved_mass
        if total != 1:
            raise OracleError(f"mass invariant violated: total {total}")
        for v, w in self.items():
            if not (0 <= w <= 1):
                raise OracleError(f"probability out of range at {lang.format_value(v)}: {w}")

    def to_csv(self) -> str:
        lines = ["value,numerator,denominator"]
        for v, w in self.items():
            lines.append(f"{lang.format_value(v)},{w.numerator},{w.denominator}")
        lines.append(f"<nonterminated>,{self.nonterm_mass.numerator},{self.nonterm_mass.denominator}")
        if self.unresolved_mass:
            lines.append(f"<unresolved>,{self.unresolved_mass.numerator},{self.unresolved_mass.denominator}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class _ListShape:
    length: int
    lower: int
    upper: int


def _flatten_factors(e: ProbExpr) -> list:
    if isinstance(e, Mul):
        return _flatten_factors(e.left) + _flatten_factors(e.right)
    return [e]


def _conjuncts(c) -> list:
    if isinstance(c, BAnd):
        return _conjuncts(c.left) + _conjuncts(c.right)
    return [c]


def _list_shape_for(var: str, body: ProbExpr, env: dict, ctx: EvalContext) -> Optional[_ListShape]:
    """Recognize the list-input shape: a fixed length and an element interval."""
    length = lower = upper = None
    for factor in _flatten_factors(body):
        if not isinstance(factor, Indicator):
            continue
        for c in _conjuncts(factor.cond):
            if isinstance(c, Cmp) and c.op == "=":
                sides = [(c.left, c.right), (c.right, c.left)]
                for lhs, rhs in sides:
                    if isinstance(lhs, Len) and isinstance(lhs.arg, Sym) and lhs.arg.name == var:
                        length = int(eval_prob(rhs, env, ctx))
            if isinstance(c, ElemsIn) and c.var == var:
                lower = int(eval_prob(c.lower, env, ctx))
                upper = int(eval_prob(c.upper, env, ctx))
    if length is None or lower is None or upper is None:
        return None
    return _ListShape(length, lower, upper)


def enumerate_support(
    input_dist: InputDist,
    param_bindings: Mapping[str, int],
    truncate: Optional[Mapping[str, tuple]] = None,
) -> tuple:
    """All input tuples with nonzero weight.

    Returns (points, unresolved) where points is a list of (value-tuple, weight)
    and unresolved is the input weight cut off by explicit truncation bounds.
    Raises UnboundedSupportError when a variable has no finite range and no
    truncation was supplied; raises WeightNotOneError when the enumerated
    weights (plus truncated tail) do not sum to 1.
    """
    missing = set(input_dist.symbolic_parameters) - set(param_bindings)
    if missing:
        raise OracleError(f"unbound symbolic parameters: {sorted(missing)}")
    env = {k: v for k, v in param_bindings.items()}
    ctx = EvalContext()
    truncate = dict(truncate or {})

    domains: list = []
    for var in input_dist.params:
        shape = _list_shape_for(var, input_dist.body, env, ctx)
        if shape is not None:
            values = [tuple(c) for c in itertools.product(range(shape.lower, shape.upper + 1), repeat=shape.length)]
            domains.append(values)
            continue
        sup = expr_support(input_dist.body, var, env, ctx)
        if sup == "empty":
            lo, hi = 0, -1
        else:
            lo, hi = sup
        if var in truncate:
            tlo, thi = truncate[var]
            lo = tlo if lo is None else max(lo, tlo)
            hi = thi if hi is None else min(hi, thi)
        if lo is None or hi is None:
            raise UnboundedSupportError(
                f"no finite support derivable for input variable {var!r}; supply a truncation"
            )
        domains.append(list(range(lo, hi + 1)))

    points = []
    total = Fraction(0)
    for combo in itertools.product(*domains):
        bindings = dict(env)
        bindings.update(zip(input_dist.params, combo))
        w = eval_prob(input_dist.body, bindings, ctx)
        if w < 0:
            raise OracleError(f"negative input weight {w} at {combo}")
        if w > 0:
            points.append((combo, w))
            total += w
    unresolved = Fraction(1) - total
    if truncate:
        if unresolved < 0:
            raise WeightNotOneError(total)
    elif total != 1:
        raise WeightNotOneError(total)
    return points, (unresolved if truncate else Fraction(0))


def run_oracle(
    program: lang.Program,
    input_dist: InputDist,
    param_bindings: Mapping[str, int],
    step_budget: int = 10_000,
    truncate: Optional[Mapping[str, tuple]] = None,
) -> OracleDist:
    """Enumerate the support and accumulate the exact output distribution."""
    points, unresolved = enumerate_support(input_dist, param_bindings, truncate)
    dist = OracleDist(unresolved_mass=unresolved)
    for combo, weight in points:
        try:
            out = lang.interpret(program, combo, step_budget)
        except lang.SourceTypeError as exc:
            raise OracleError(f"type error at input {combo}: {exc}") from exc
        if out is lang.NONTERMINATED:
            dist.nonterm_mass += weight
        else:
            dist.add(out, weight)
    dist.check_invariants()
    return dist


@dataclass(frozen=True)
class Discrepancy:
    value: object
    expected: Fraction  # oracle probability
    got_low: Fraction
    got_high: Fraction

    def describe(self) -> str:
        if self.got_low == self.got_high:
            return (
                f"z={lang.format_value(self.value)}: oracle {self.expected}, "
                f"analysis {self.got_low}"
            )
        return (
            f"z={lang.format_value(self.value)}: oracle {self.expected} outside "
            f"[{self.got_low}, {self.got_high}]"
        )


@dataclass
class CompareReport:
    ok: bool
    checked: int
    discrepancies: list
    slack: Fraction = Fraction(0)  # sandwich widening from truncated oracle mass
    kind: str = "exact"

    def describe(self) -> str:
        if self.ok:
            return f"OK ({self.checked} output values checked, {self.kind})"
        lines = [f"FAILED ({len(self.discrepancies)} of {self.checked} output values differ)"]
        lines += ["  " + d.describe() for d in self.discrepancies]
        return "\n".join(lines)


def _candidate_values(oracle_dist: OracleDist, z_values) -> list:
    seen = {}
    for v in oracle_dist.support():
        seen[lang.value_key(v)] = v
    for v in z_values or ():
        seen.setdefault(lang.value_key(v), v)
    return [seen[k] for k in sorted(seen)]


def compare_exact(
    closed: ProbExpr,
    oracle_dist: OracleDist,
    param_bindings: Mapping[str, object],
    z_values=None,
    out_var: str = "z",
    ctx: Optional[EvalContext] = None,
) -> CompareReport:
    """Exact per-value equality of a closed form against the oracle."""
    discrepancies = []
    values = _candidate_values(oracle_dist, z_values)
    for v in values:
        bindings = dict(param_bindings)
        bindings[out_var] = v
        got = eval_prob(closed, bindings, ctx)
        want = oracle_dist.prob(v)
        if got != want:
            discrepancies.append(Discrepancy(v, want, got, got))
    return CompareReport(not discrepancies, len(values), discrepancies)


def compare_sandwich(
    under_at,
    over_at,
    oracle_dist: OracleDist,
    z_values=None,
) -> CompareReport:
    """Check under(z) <= oracle(z) <= over(z); truncated oracle mass widens the check."""
    slack = oracle_dist.unresolved_mass
    discrepancies = []
    values = _candidate_values(oracle_dist, z_values)
    for v in values:
        want = oracle_dist.prob(v)
        lo = under_at(v)
        hi = over_at(v)
        if not (lo - slack <= want <= hi + slack):
            discrepancies.append(Discrepancy(v, want, lo, hi))
    return CompareReport(not discrepancies, len(values), discrepancies, slack, kind="bounds")

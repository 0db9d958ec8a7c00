"""End-to-end analysis: parse, construct, unfold, simplify, bound, check.

This is the core the HTTP service and the command line both call.  Reports
are deterministic: identical inputs produce byte-identical text.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional

from . import lang, oracle
from .approximator import (
    ApproximationError,
    PBox,
    WeightDeficitError,
    bounds_csv,
    check_termination_weight,
    cumulative_bounds,
    expected_interval,
    expected_value,
    over_approximate,
)
from .constructor import InputError, build_dist_program, parse_dist_file
from .probexpr import (
    EvalContext,
    ProbError,
    ProbSyntaxError,
    expr_support,
    parse_bool,
    print_prob,
    serialize_dist_program,
)
from .simplifier import simplify_dist_program, to_cases
from .unfolder import unfold_all


@dataclass
class AnalysisOutcome:
    status: str  # "closed" | "residual"
    closed_form: str
    normal_form: str
    output_function: str
    out_var: str
    serialized: str
    flags: list
    check_ok: Optional[bool]
    check_detail: str
    termination: Optional[str]
    expected: Optional[str]
    expected_interval: Optional[tuple]
    nonterm_mass: Optional[str]
    dist_csv: Optional[str]
    bounds_csv: Optional[str]
    trace: list
    report: str
    exit_code: int


def _format_bindings(bindings: Mapping[str, int]) -> str:
    return ",".join(f"{k}={bindings[k]}" for k in sorted(bindings))


def _frac(x: Fraction) -> str:
    return str(x)


def analyze(
    program_text: str,
    dist_text: str,
    check: Optional[Mapping[str, int]] = None,
    expect: bool = False,
    assume: tuple = (),
    budget: int = 10_000,
    oracle_budget: int = 10_000,
    want_trace: bool = False,
    want_csv: bool = False,
) -> AnalysisOutcome:
    """Run the full pipeline; raises InputError for unusable inputs."""
    try:
        program = lang.parse_program(program_text)
    except lang.LangError as exc:
        raise InputError(f"program: {exc}") from exc
    try:
        input_dist, file_assumptions = parse_dist_file(dist_text)
    except InputError:
        raise
    except ProbError as exc:
        raise InputError(f"distribution: {exc}") from exc

    assumptions = list(file_assumptions)
    for text in assume:
        try:
            assumptions.append(parse_bool(text))
        except ProbSyntaxError as exc:
            raise InputError(f"assumption {text!r}: {exc}") from exc

    trace: list = [] if want_trace else None
    dp = build_dist_program(program, input_dist)
    dp = unfold_all(dp, trace)
    dp, result = simplify_dist_program(dp, assumptions, budget, trace)

    out_fn = dp.output()
    out_var = out_fn.params[0]
    closed_form = print_prob(result.expr)
    status = result.status
    normal_form = ""
    approx_src = result.expr
    if result.closed:
        # the case-split form is evaluation-equal and keeps its guards
        # visible, which the support analysis needs
        approx_src = to_cases(result.expr, assumptions, budget)
        normal_form = print_prob(approx_src)

    pbox = over_approximate(approx_src, out_var, assumptions, budget)
    flags = list(dp.flags)

    bindings: dict = dict(check) if check else {}
    params_needed = set(input_dist.symbolic_parameters)
    have_bindings = params_needed <= set(bindings)

    check_ok: Optional[bool] = None
    check_detail = ""
    nonterm_mass: Optional[str] = None
    oracle_dist = None
    if check is not None:
        if not have_bindings:
            missing = sorted(params_needed - set(bindings))
            raise InputError(f"check needs values for parameters: {missing}")
        oracle_dist = oracle.run_oracle(program, input_dist, bindings, oracle_budget)
        nonterm_mass = _frac(oracle_dist.nonterm_mass)
        z_values = _candidate_range(result.expr if result.closed else pbox.over, out_var, bindings, oracle_dist)
        if result.closed:
            report = oracle.compare_exact(result.expr, oracle_dist, bindings, z_values, out_var)
        else:
            report = oracle.compare_sandwich(
                lambda z: pbox.under_at(z, bindings),
                lambda z: pbox.over_at(z, bindings),
                oracle_dist,
                z_values,
            )
        check_ok = report.ok
        check_detail = report.describe()

    termination: Optional[str] = None
    if have_bindings or not params_needed:
        try:
            termination = check_termination_weight(pbox.under, bindings, out_var)
        except ProbError:
            termination = "unknown"

    expected: Optional[str] = None
    interval: Optional[tuple] = None
    if expect:
        if params_needed and not have_bindings:
            raise InputError("expected value needs concrete parameters (use --check)")
        got = None
        if result.closed:
            try:
                got = expected_value(approx_src, bindings, out_var)
            except (ApproximationError, ProbError):
                got = None
        if got is not None:
            expected = _frac(got)
        else:
            try:
                cum = cumulative_bounds(pbox, _domain_for(pbox, bindings, oracle_dist), bindings)
                iv = expected_interval(cum)
                interval = (_frac(iv.low), _frac(iv.high))
            except (ApproximationError, ProbError):
                pass

    dist_csv = None
    bcsv = None
    if want_csv and (have_bindings or not params_needed):
        if result.closed:
            dist_csv = _closed_csv(result.expr, out_var, bindings, oracle_dist)
        try:
            cum = cumulative_bounds(pbox, _domain_for(pbox, bindings, oracle_dist), bindings)
            bcsv = bounds_csv(pbox, cum, bindings)
        except (ApproximationError, ProbError):
            bcsv = None

    exit_code = 0 if check_ok in (None, True) else 1

    suffix = f" {_format_bindings(bindings)}" if bindings else ""
    lines = [closed_form, f"status: {status}"]
    if normal_form and normal_form != closed_form:
        lines.append(f"normal form: {normal_form}")
    if flags:
        lines.append("opaque: " + ",".join(sorted(flags)))
    if check is not None:
        lines.append(f"check{suffix}: {check_detail}")
        lines.append(f"nonterminating mass{suffix}: {nonterm_mass}")
    if termination is not None:
        lines.append(f"termination{suffix}: {termination}")
    if expect:
        if expected is not None:
            lines.append(f"expected value{suffix}: {expected}")
        elif interval is not None:
            lines.append(f"expected interval{suffix}: [{interval[0]}, {interval[1]}]")
        else:
            lines.append(f"expected value{suffix}: unavailable (possible divergence)")
    report_text = "\n".join(lines) + "\n"

    return AnalysisOutcome(
        status=status,
        closed_form=closed_form,
        normal_form=normal_form,
        output_function=dp.output_function,
        out_var=out_var,
        serialized=serialize_dist_program(dp),
        flags=flags,
        check_ok=check_ok,
        check_detail=check_detail,
        termination=termination,
        expected=expected,
        expected_interval=interval,
        nonterm_mass=nonterm_mass,
        dist_csv=dist_csv,
        bounds_csv=bcsv,
        trace=trace or [],
        report=report_text,
        exit_code=exit_code,
    )


def _candidate_range(expr, out_var: str, bindings: dict, oracle_dist) -> list:
    values = list(oracle_dist.support())
    sup = expr_support(expr, out_var, dict(bindings), EvalContext())
    if sup not in ("empty",) and sup[0] is not None and sup[1] is not None and sup[1] - sup[0] <= 10_000:
        values.extend(range(sup[0], sup[1] + 1))
    ints = sorted({v for v in values if isinstance(v, int) and not isinstance(v, bool)})
    rest = [v for v in values if not (isinstance(v, int) and not isinstance(v, bool))]
    seen = []
    for v in rest:
        if all(lang.value_key(v) != lang.value_key(s) for s in seen):
            seen.append(v)
    return ints + seen


def _domain_for(pbox: PBox, bindings: dict, oracle_dist):
    sup = pbox.support_range(bindings)
    if sup is not None:
        lo, hi = sup
        if oracle_dist is not None:
            for v in oracle_dist.support():
                if isinstance(v, int) and not isinstance(v, bool):
                    lo = min(lo, v)
                    hi = max(hi, v)
        return range(lo, hi + 1)
    if oracle_dist is not None:
        ints = [v for v in oracle_dist.support() if isinstance(v, int) and not isinstance(v, bool)]
        if ints:
            return range(min(ints), max(ints) + 1)
    raise WeightDeficitError("no finite domain available")


def _closed_csv(expr, out_var: str, bindings: dict, oracle_dist) -> str:
    from .probexpr import eval_prob

    try:
        domain = _domain_for(PBox(expr, expr, out_var), bindings, oracle_dist)
    except WeightDeficitError:
        return "value,numerator,denominator\n"
    lines = ["value,numerator,denominator"]
    for z in domain:
        b = dict(bindings)
        b[out_var] = z
        w = eval_prob(expr, b)
        if w != 0:
            lines.append(f"{z},{w.numerator},{w.denominator}")
    return "\n".join(lines) + "\n"


@dataclass
class OracleOutcome:
    csv: str
    rows: list
    nonterm: tuple
    unresolved: tuple
    report: str


def oracle_only(
    program_text: str,
    dist_text: str,
    bindings: Mapping[str, int],
    budget: int = 10_000,
    truncate: Optional[Mapping[str, tuple]] = None,
) -> OracleOutcome:
    """Just enumerate: the ground-truth distribution as CSV plus a summary."""
    try:
        program = lang.parse_program(program_text)
    except lang.LangError as exc:
        raise InputError(f"program: {exc}") from exc
    try:
        input_dist, _ = parse_dist_file(dist_text)
    except ProbError as exc:
        raise InputError(f"distribution: {exc}") from exc
    try:
        dist = oracle.run_oracle(program, input_dist, dict(bindings), budget, truncate)
    except oracle.OracleError as exc:
        raise InputError(str(exc)) from exc
    rows = [(lang.format_value(v), w.numerator, w.denominator) for v, w in dist.items()]
    lines = [f"{v}: {num}/{den}" for v, num, den in rows]
    lines.append(f"nonterminating mass: {dist.nonterm_mass}")
    if dist.unresolved_mass:
        lines.append(f"unresolved (truncated) mass: {dist.unresolved_mass}")
    return OracleOutcome(
        csv=dist.to_csv(),
        rows=rows,
        nonterm=(dist.nonterm_mass.numerator, dist.nonterm_mass.denominator),
        unresolved=(dist.unresolved_mass.numerator, dist.unresolved_mass.denominator),
        report="\n".join(lines) + "\n",
    )

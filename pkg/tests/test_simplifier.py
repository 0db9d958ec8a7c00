"""Rewrite engine: closures, normal forms, determinism, budgets."""

from fractions import Fraction

import pytest

from poa.oracle import compare_exact, run_oracle
from poa.probexpr import (
    Cmp,
    Indicator,
    Mul,
    Pow,
    Sym,
    SumOver,
    eval_prob,
    parse_bool,
    parse_prob,
    print_prob,
    rat,
)
from poa.simplifier import Simplifier, is_closed, simplify, to_cases

from conftest import run_pipeline, sample


def test_point_mass_rule_direct():
    e = SumOver("x", Mul(Indicator(Cmp("=", Sym("x"), rat(7))), Mul(Sym("x"), Sym("x"))))
    res = simplify(e)
    assert res.closed
    assert eval_prob(res.expr, {}) == 49


def test_max_pipeline_reaches_reference_form():
    _, _, _, _, result = run_pipeline("max.fun", "uniform2.dist")
    assert result.closed
    assert print_prob(result.expr) == "1/(n*n)*C(1 <= z <= n)*(2*z-1)"
    for n in range(1, 11):
        for z in range(-2, n + 4):
            want = Fraction(2 * z - 1, n * n) if 1 <= z <= n else Fraction(0)
            assert eval_prob(result.expr, {"n": n, "z": z}) == want


def test_add_pipeline_prints_reference_form():
    _, _, _, _, result = run_pipeline("add.fun", "uniform2.dist")
    assert result.closed
    assert print_prob(result.expr) == "1/(n*n)*max(min(n,z-1) - max(1,z-n) + 1,0)"


def test_add_two_case_normal_form():
    _, _, assumptions, _, result = run_pipeline("add.fun", "uniform2.dist")
    cases = to_cases(result.expr, assumptions)
    assert is_closed(cases)
    for n in range(1, 11):
        for z in range(-2, 2 * n + 4):
            want = Fraction(0)
            if n < z <= 2 * n:
                want = Fraction(2 * n - z + 1, n * n)
            elif 1 <= z <= n:
                want = Fraction(z - 1, n * n)
            assert eval_prob(cases, {"n": n, "z": z}) == want


def test_add_asymmetric_ranges_match_oracle():
    from poa import lang
    from poa.constructor import build_dist_program, parse_dist_file
    from poa.simplifier import simplify_dist_program
    from poa.unfolder import unfold_all

    program = lang.parse_program(sample("add.fun"))
    dist_text = (
        "px(x; n) = C(1 <= x <= n) * 1/n\n"
        "py(y; m) = C(1 <= y <= m) * 1/m\n"
        "assume n >= 1\nassume m >= 1\n"
    )
    dist, assumptions = parse_dist_file(dist_text)
    dp = unfold_all(build_dist_program(program, dist), None)
    dp, result = simplify_dist_program(dp, assumptions, 10_000, None)
    assert result.closed
    for n, m in [(1, 1), (2, 5), (4, 3), (5, 2)]:
        oracle_dist = run_oracle(program, dist, {"n": n, "m": m})
        report = compare_exact(result.expr, oracle_dist, {"n": n, "m": m},
                               range(0, n + m + 3), dp.output().params[0])
        assert report.ok, report.describe()


def test_geometric_rules_fire_under_assumptions():
    a = parse_prob("1 - 1/n")
    e = SumOver("x", Mul(Indicator(Cmp(">=", Sym("x"), rat(0))), Pow(a, Sym("x"))))
    res_without = simplify(e)
    assert not res_without.closed  # no side condition, no rule
    assumptions = [parse_bool("0 < 1 - 1/n"), parse_bool("1 - 1/n < 1")]
    res = simplify(e, assumptions)
    assert res.closed
    assert eval_prob(res.expr, {"n": 4}) == 4


def test_engine_is_deterministic():
    runs = set()
    for _ in range(3):
        run_pipeline.cache_clear()
        _, _, _, _, result = run_pipeline("max.fun", "uniform2.dist")
        runs.add(print_prob(result.expr))
    assert len(runs) == 1


def test_budget_exhaustion_returns_residual():
    _, _, assumptions, dp, _ = run_pipeline("add.fun", "uniform2.dist")
    from poa import lang
    from poa.constructor import build_dist_program, parse_dist_file
    from poa.simplifier import simplify_dist_program
    from poa.unfolder import unfold_all

    program = lang.parse_program(sample("add.fun"))
    dist, assume = parse_dist_file(sample("uniform2.dist"))
    dp0 = unfold_all(build_dist_program(program, dist), None)
    dp1, result = simplify_dist_program(dp0, assume, budget=3)
    assert result.budget_exhausted
    assert result.status == "residual"
    # best-so-far result still evaluates correctly
    ov = dp1.output()
    from poa.probexpr import EvalContext

    ctx = EvalContext(prob_functions={f.name: (f.params, f.body) for f in dp1.prob_functions}, program=program)
    assert eval_prob(ov.body, {"n": 2, "z": 3}, ctx) == Fraction(1, 2)


def test_worked_examples_fit_default_budget():
    for prog, dist in [("max.fun", "uniform2.dist"), ("add.fun", "uniform2.dist"), ("member.fun", "member.dist")]:
        _, _, _, _, result = run_pipeline(prog, dist)
        assert not result.budget_exhausted
        assert result.steps < 10_000


def test_four_branch_residual_keeps_guarded_structure():
    _, _, _, dp, result = run_pipeline("fourbranch.fun", "uniform4.dist")
    assert result.status == "residual"
    text = print_prob(result.expr)
    assert "C(z = 1)" in text and "C(z = 4)" in text
    assert "spin(x)" in text


def test_trace_mode_records_rules():
    from poa import lang
    from poa.constructor import build_dist_program, parse_dist_file
    from poa.simplifier import simplify_dist_program
    from poa.unfolder import unfold_all

    program = lang.parse_program(sample("max.fun"))
    dist, assumptions = parse_dist_file(sample("uniform2.dist"))
    trace: list = []
    dp = unfold_all(build_dist_program(program, dist), trace)
    simplify_dist_program(dp, assumptions, 10_000, trace)
    assert any(line.startswith("unfold conditional") for line in trace)
    assert any("point_sum" in line for line in trace)
    assert any("interval_count" in line for line in trace)


def test_geometric_input_closes_and_matches_truncated_oracle():
    from fractions import Fraction

    from poa import lang
    from poa.constructor import build_dist_program, parse_dist_file
    from poa.simplifier import simplify_dist_program
    from poa.unfolder import unfold_all
    from poa.oracle import compare_sandwich, run_oracle

    dist, assumptions = parse_dist_file(sample("geometric.dist"))

    # identity: the point-mass rule closes directly
    program = lang.parse_program("id(x) = x")
    dp = unfold_all(build_dist_program(program, dist), None)
    dp, result = simplify_dist_program(dp, assumptions, 10_000, None)
    assert result.closed
    for n in (2, 3):
        for z in range(0, 25):
            want = Fraction(1, n) * (1 - Fraction(1, n)) ** z
            assert eval_prob(result.expr, {"n": n, "z": z}) == want
        oracle_dist = run_oracle(program, dist, {"n": n}, truncate={"x": (0, 40)})
        assert oracle_dist.unresolved_mass > 0
        report = compare_sandwich(
            lambda z: eval_prob(result.expr, {"n": n, "z": z}),
            lambda z: eval_prob(result.expr, {"n": n, "z": z}),
            oracle_dist,
            range(0, 50),
        )
        assert report.ok  # truncation slack absorbs the missing tail

    # constant program: needs the geometric series rule itself
    program = lang.parse_program("zero(x) = 0")
    dp = unfold_all(build_dist_program(program, dist), None)
    dp, result = simplify_dist_program(dp, assumptions, 10_000, None)
    assert result.closed
    assert print_prob(result.expr) == "C(z = 0)"

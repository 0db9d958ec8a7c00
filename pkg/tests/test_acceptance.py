"""Acceptance criteria, one test per criterion.

Each test prints a PASS line on success (run with `pytest -s` to see them);
all comparisons are exact rational equality unless an analytic tail bound is
stated inline.
"""

import time
from fractions import Fraction

import pytest

from poa import lang
from poa.approximator import cumulative_bounds, expected_interval, expected_value, over_approximate
from poa.constructor import parse_dist_file
from poa.oracle import compare_exact, compare_sandwich, run_oracle
from poa.probexpr import eval_prob
from poa.simplifier import RULES, check_rule, geometric_moment, geometric_sum, to_cases
from poa.approximator import check_termination_weight

from conftest import run_pipeline, sample


def _report(name: str, detail: str = "") -> None:
    print(f"ACCEPTANCE {name}: PASS {detail}".rstrip())


def test_criterion_1_max_closed_form():
    start = time.monotonic()
    program, dist, _, dp, result = run_pipeline("max.fun", "uniform2.dist")
    assert result.closed
    out_var = dp.output().params[0]
    for n in range(1, 11):
        oracle_dist = run_oracle(program, dist, {"n": n})
        for z in range(-2, n + 4):
            got = eval_prob(result.expr, {"n": n, "z": z})
            formula = Fraction(2 * z - 1, n * n) if 1 <= z <= n else Fraction(0)
            assert got == formula
            assert got == oracle_dist.prob(z)
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    _report("1 (max closed form)", f"exact for n in 1..10, {elapsed:.2f}s")


def test_criterion_2_add_closed_form():
    start = time.monotonic()
    program, dist, _, dp, result = run_pipeline("add.fun", "uniform2.dist")
    assert result.closed
    for n in range(1, 11):
        oracle_dist = run_oracle(program, dist, {"n": n})
        for z in range(-2, 2 * n + 4):
            got = eval_prob(result.expr, {"n": n, "z": z})
            formula = Fraction(max(min(n, z - 1) - max(1, z - n) + 1, 0), n * n)
            assert got == formula
            assert got == oracle_dist.prob(z)
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    _report("2 (add closed form)", f"exact for n in 1..10, {elapsed:.2f}s")


def test_criterion_3_add_two_case_form():
    start = time.monotonic()
    _, _, assumptions, _, result = run_pipeline("add.fun", "uniform2.dist")
    cases = to_cases(result.expr, assumptions)
    for n in range(1, 11):
        for z in range(-2, 2 * n + 4):
            want = Fraction(0)
            if n < z <= 2 * n:
                want = Fraction(2 * n - z + 1, n * n)
            elif 1 <= z <= n:
                want = Fraction(z - 1, n * n)
            assert eval_prob(cases, {"n": n, "z": z}) == want
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    _report("3 (add two-case normal form)", f"exact for n in 1..10, {elapsed:.2f}s")


def test_criterion_4_expected_value_add():
    program, dist, assumptions, dp, result = run_pipeline("add.fun", "uniform2.dist")
    cases = to_cases(result.expr, assumptions)
    out_var = dp.output().params[0]
    for n in range(1, 11):
        got = expected_value(cases, {"n": n}, out_var)
        assert got == n + 1
        oracle_dist = run_oracle(program, dist, {"n": n})
        assert oracle_dist.expected_value() == got
    _report("4 (expected value of add)", "E = n+1 for n in 1..10, exact vs oracle")


def test_criterion_5_geometric_rules_truncation():
    n_trunc = 200
    for a in (Fraction(1, 2), Fraction(1, 3), Fraction(9, 10)):
        tail_bound = a ** (n_trunc + 1) * (n_trunc + 2) / (1 - a) ** 2
        partial_sum = sum((a ** x for x in range(n_trunc + 1)), Fraction(0))
        partial_moment = sum((x * a ** x for x in range(n_trunc + 1)), Fraction(0))
        closed_sum = eval_prob(geometric_sum(_lit(a)), {})
        closed_moment = eval_prob(geometric_moment(_lit(a)), {})
        assert closed_sum == 1 / (1 - a)
        assert closed_moment == 1 / (1 - a) ** 2 - 1 / (1 - a)
        assert abs(partial_sum - closed_sum) <= tail_bound
        assert abs(partial_moment - closed_moment) <= tail_bound
    _report("5 (geometric series rules)", "a in {1/2, 1/3, 9/10}, N = 200, analytic tail bound")


def _lit(a):
    from poa.probexpr import Lit

    return Lit(a)


def test_criterion_6_rule_soundness_suite():
    failures = []
    for rule in RULES:
        report = check_rule(rule, trials=1000, seed=0)
        if not report.ok:
            failures.append((rule.name, report.message))
    assert not failures, failures
    _report("6 (rule soundness)", f"{len(RULES)} rules x 1000 randomized exact trials")


def test_criterion_7_sandwich_soundness():
    checked = 0

    # the four-branch program with the opaque condition
    program, dist, assumptions, dp, result = run_pipeline("fourbranch.fun", "uniform4.dist")
    out_var = dp.output().params[0]
    pbox = over_approximate(result.expr, out_var, assumptions)
    oracle_dist = run_oracle(program, dist, {})
    report = compare_sandwich(
        lambda z: pbox.under_at(z, {}), lambda z: pbox.over_at(z, {}), oracle_dist, range(0, 6)
    )
    assert report.ok
    cum = cumulative_bounds(pbox, range(1, 5), {})
    running = Fraction(0)
    for z, fd, fu in zip(cum.domain, cum.f_down, cum.f_up):
        running += oracle_dist.prob(z)
        assert fd <= running <= fu
    iv = expected_interval(cum)
    assert iv.low <= oracle_dist.expected_value() <= iv.high
    checked += 1

    # member stays oracle-validated only
    program, dist, assumptions, dp, result = run_pipeline("member.fun", "member.dist")
    out_var = dp.output().params[0]
    pbox = over_approximate(result.expr, out_var, assumptions)
    for n in range(1, 6):
        for k in range(1, 6):
            oracle_dist = run_oracle(program, dist, {"n": n, "k": k})
            report = compare_sandwich(
                lambda z: pbox.under_at(z, {"n": n, "k": k}),
                lambda z: pbox.over_at(z, {"n": n, "k": k}),
                oracle_dist,
            )
            assert report.ok
            checked += 1
    _report("7 (sandwich soundness)", f"{checked} instantiations, exact comparisons")


def test_criterion_8_member_oracle():
    start = time.monotonic()
    program = lang.parse_program(sample("member.fun"))
    dist, _ = parse_dist_file(sample("member.dist"))
    for n in range(1, 6):
        for k in range(1, 6):
            oracle_dist = run_oracle(program, dist, {"n": n, "k": k})
            want_true = 1 - (1 - Fraction(1, n)) ** k
            assert oracle_dist.prob(True) == want_true
            assert oracle_dist.prob(False) == 1 - want_true
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    _report("8 (member oracle)", f"mass(true) = 1-(1-1/n)^k for n,k in 1..5, {elapsed:.2f}s")


def test_criterion_9_mass_and_termination_properties():
    corpus = [
        ("add.fun", "uniform2.dist", {"n": 3}),
        ("add.fun", "uniform2.dist", {"n": 7}),
        ("max.fun", "uniform2.dist", {"n": 5}),
        ("countdown.fun", "uniform1.dist", {"n": 6}),
        ("id.fun", "uniform1.dist", {"n": 4}),
        ("loop.fun", "point.dist", {}),
        ("member.fun", "member.dist", {"n": 3, "k": 3}),
        ("fourbranch.fun", "uniform4.dist", {}),
    ]
    for prog, dist_name, params in corpus:
        program = lang.parse_program(sample(prog))
        dist, assumptions = parse_dist_file(sample(dist_name))
        oracle_dist = run_oracle(program, dist, params)
        assert oracle_dist.total_mass() + oracle_dist.nonterm_mass + oracle_dist.unresolved_mass == 1

        _, _, _, dp, result = run_pipeline(prog, dist_name)
        out_var = dp.output().params[0]
        source = to_cases(result.expr, assumptions) if result.closed else result.expr
        pbox = over_approximate(source, out_var, assumptions)
        verdict = check_termination_weight(pbox.under, params, out_var)
        if verdict == "terminates":
            assert oracle_dist.nonterm_mass == 0
    _report("9 (mass and termination properties)", f"{len(corpus)} oracle runs")

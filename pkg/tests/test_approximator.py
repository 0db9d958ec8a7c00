"""Bounds, cumulative envelopes, expected values."""

from fractions import Fraction

import pytest

from poa.approximator import (
    PBox,
    UnboundedSupportError,
    WeightDeficitError,
    bounds_csv,
    check_termination_weight,
    cumulative_bounds,
    expected_interval,
    expected_value,
    over_approximate,
)
from poa.oracle import compare_sandwich, run_oracle
from poa.probexpr import Lit, eval_prob, parse_prob, print_prob, rat
from poa.simplifier import to_cases

from conftest import run_pipeline, sample


def _fourbranch_pbox():
    _, _, assumptions, dp, result = run_pipeline("fourbranch.fun", "uniform4.dist")
    return over_approximate(result.expr, dp.output().params[0], assumptions)


def test_closed_expression_gives_exact_box():
    _, _, assumptions, dp, result = run_pipeline("max.fun", "uniform2.dist")
    pbox = over_approximate(result.expr, dp.output().params[0], assumptions)
    assert pbox.exact
    for n in (1, 2, 5):
        for z in range(-1, n + 2):
            assert pbox.over_at(z, {"n": n}) == pbox.under_at(z, {"n": n})


def test_four_branch_box_values():
    pbox = _fourbranch_pbox()
    assert not pbox.exact
    got = {z: (pbox.under_at(z, {}), pbox.over_at(z, {})) for z in (1, 2, 3, 4)}
    assert got == {
        1: (Fraction(1, 4), Fraction(1, 4)),
        2: (Fraction(0), Fraction(1, 2)),
        3: (Fraction(0), Fraction(1, 2)),
        4: (Fraction(1, 4), Fraction(1, 4)),
    }


def test_member_box_is_trivial_over():
    _, _, assumptions, dp, result = run_pipeline("member.fun", "member.dist")
    pbox = over_approximate(result.expr, dp.output().params[0], assumptions)
    assert pbox.over == Lit(Fraction(1))
    assert pbox.under == Lit(Fraction(0))
    for n in (2, 3):
        for k in (1, 3):
            assert pbox.over_at(True, {"n": n, "k": k}) == 1
            assert pbox.under_at(False, {"n": n, "k": k}) == 0


def test_cumulative_bounds_fourbranch_golden():
    pbox = _fourbranch_pbox()
    cum = cumulative_bounds(pbox, range(1, 5), {})
    assert cum.f_up == [Fraction(1, 4), Fraction(3, 4), Fraction(1), Fraction(1)]
    assert cum.f_down == [Fraction(0), Fraction(0), Fraction(1, 4), Fraction(3, 4)]


def test_cumulative_collapses_for_exact_box():
    _, _, assumptions, dp, result = run_pipeline("add.fun", "uniform2.dist")
    cases = to_cases(result.expr, assumptions)
    pbox = over_approximate(cases, dp.output().params[0], assumptions)
    cum = cumulative_bounds(pbox, range(2, 5), {"n": 2})
    # exact triangular distribution for n = 2
    truth = [Fraction(1, 4), Fraction(3, 4), Fraction(1)]
    assert cum.f_up == truth
    # the lower envelope lags one step behind the cumulative distribution
    assert cum.f_down == [Fraction(0), Fraction(1, 4), Fraction(3, 4)]
    iv = expected_interval(cum)
    assert iv.low == iv.high == 3


def test_vacuous_box_on_three_points():
    pbox = PBox(Lit(Fraction(1)), Lit(Fraction(0)), "z")
    cum = cumulative_bounds(pbox, [1, 2, 3], {})
    assert cum.f_up == [Fraction(1)] * 3
    assert cum.f_down == [Fraction(0)] * 3
    iv = expected_interval(cum)
    assert iv.low == 1 and iv.high == 3


def test_point_mass_interval_collapses():
    pbox = PBox(parse_prob("C(z = 5)"), parse_prob("C(z = 5)"), "z")
    cum = cumulative_bounds(pbox, [5], {})
    iv = expected_interval(cum)
    assert iv.low == iv.high == 5


def test_fourbranch_interval_contains_every_resolution():
    pbox = _fourbranch_pbox()
    cum = cumulative_bounds(pbox, range(1, 5), {})
    iv = expected_interval(cum)
    # every resolution of the opaque branch: x in {2, 3} to either 2 or 3
    for a in (2, 3):
        for b in (2, 3):
            e = Fraction(1, 4) * 1 + Fraction(1, 4) * a + Fraction(1, 4) * b + Fraction(1, 4) * 4
            assert iv.contains(e)
    program_truth = run_oracle(
        __import__("poa.lang", fromlist=["parse_program"]).parse_program(sample("fourbranch.fun")),
        __import__("poa.constructor", fromlist=["parse_dist_file"]).parse_dist_file(sample("uniform4.dist"))[0],
        {},
    ).expected_value()
    assert iv.contains(program_truth)


def test_expected_value_examples():
    _, _, assumptions, dp, result = run_pipeline("add.fun", "uniform2.dist")
    cases = to_cases(result.expr, assumptions)
    assert expected_value(cases, {"n": 2}, "z") == 3
    assert expected_value(cases, {"n": 10}, "z") == 11
    _, _, assumptions, dp, result = run_pipeline("max.fun", "uniform2.dist")
    assert expected_value(result.expr, {"n": 2}, "z") == Fraction(7, 4)


def test_expected_value_refuses_weight_deficit():
    deficient = parse_prob("1/2 * C(z = 1)")
    with pytest.raises(WeightDeficitError):
        expected_value(deficient, {}, "z")


def test_expected_interval_refuses_divergent_mass():
    pbox = PBox(parse_prob("1/2 * C(z = 1)"), parse_prob("1/2 * C(z = 1)"), "z")
    cum = cumulative_bounds(pbox, [1], {})
    with pytest.raises(WeightDeficitError):
        expected_interval(cum)


def test_unbounded_support_needs_domain():
    pbox = PBox(Lit(Fraction(1)), Lit(Fraction(0)), "z")
    with pytest.raises(UnboundedSupportError):
        cumulative_bounds(pbox, None, {})


def test_termination_weight():
    _, _, assumptions, dp, result = run_pipeline("add.fun", "uniform2.dist")
    cases = to_cases(result.expr, assumptions)
    pbox = over_approximate(cases, "z", assumptions)
    assert check_termination_weight(pbox.under, {"n": 3}, "z") == "terminates"
    assert check_termination_weight(Lit(Fraction(0)), {}, "z") == "unknown"
    fourbranch = _fourbranch_pbox()
    assert check_termination_weight(fourbranch.under, {}, "z") == "unknown"


def test_sandwich_against_oracle_fourbranch_and_member():
    from poa import lang
    from poa.constructor import parse_dist_file

    pbox = _fourbranch_pbox()
    program = lang.parse_program(sample("fourbranch.fun"))
    dist, _ = parse_dist_file(sample("uniform4.dist"))
    oracle_dist = run_oracle(program, dist, {})
    report = compare_sandwich(
        lambda z: pbox.under_at(z, {}), lambda z: pbox.over_at(z, {}), oracle_dist, range(0, 6)
    )
    assert report.ok

    _, _, assumptions, dp, result = run_pipeline("member.fun", "member.dist")
    pbox = over_approximate(result.expr, dp.output().params[0], assumptions)
    program = lang.parse_program(sample("member.fun"))
    dist, _ = parse_dist_file(sample("member.dist"))
    for n in (1, 2, 3):
        for k in (1, 2, 3):
            oracle_dist = run_oracle(program, dist, {"n": n, "k": k})
            report = compare_sandwich(
                lambda z: pbox.under_at(z, {"n": n, "k": k}),
                lambda z: pbox.over_at(z, {"n": n, "k": k}),
                oracle_dist,
            )
            assert report.ok


def test_monotone_envelopes_invariant():
    pbox = _fourbranch_pbox()
    cum = cumulative_bounds(pbox, range(0, 7), {})
    cum.check_invariants()
    for a, b in zip(cum.f_up, cum.f_up[1:]):
        assert a <= b
    for a, b in zip(cum.f_down, cum.f_down[1:]):
        assert a <= b


def test_bounds_csv_shape():
    pbox = _fourbranch_pbox()
    cum = cumulative_bounds(pbox, range(1, 5), {})
    text = bounds_csv(pbox, cum, {})
    lines = text.strip().split("\n")
    assert lines[0] == "z,under,over,f_down,f_up"
    assert lines[1] == "1,1/4,1/4,0,1/4"
    assert len(lines) == 5

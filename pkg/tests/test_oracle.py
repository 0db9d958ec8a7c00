"""Exhaustive-enumeration oracle."""

import random
from fractions import Fraction

import pytest

from poa import lang
from poa.constructor import parse_dist_file
from poa.oracle import (
    OracleDist,
    UnboundedSupportError,
    WeightNotOneError,
    compare_exact,
    compare_sandwich,
    enumerate_support,
    run_oracle,
)
from poa.probexpr import parse_prob

from conftest import sample


def test_enumerate_uniform_square():
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    points, unresolved = enumerate_support(dist, {"n": 2})
    assert unresolved == 0
    assert sorted(p for p, _ in points) == [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert all(w == Fraction(1, 4) for _, w in points)


def test_geometric_needs_truncation():
    dist, _ = parse_dist_file(sample("geometric.dist"))
    with pytest.raises(UnboundedSupportError):
        enumerate_support(dist, {"n": 2})
    points, unresolved = enumerate_support(dist, {"n": 2}, truncate={"x": (0, 50)})
    assert unresolved == Fraction(1, 2) ** 51
    assert sum(w for _, w in points) + unresolved == 1


def test_enumerate_lists():
    dist, _ = parse_dist_file(sample("member.dist"))
    points, _ = enumerate_support(dist, {"n": 2, "k": 2})
    lists = sorted({p[1] for p, _ in points})
    assert lists == [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert all(w == Fraction(1, 8) for _, w in points)  # 2 values of X times 4 lists


def test_empty_support_reports_weight():
    dist, _ = parse_dist_file("px(x) = C(1 <= x <= 0) * 1/2")
    with pytest.raises(WeightNotOneError):
        enumerate_support(dist, {})


def test_run_add_n2():
    program = lang.parse_program(sample("add.fun"))
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    out = run_oracle(program, dist, {"n": 2})
    assert out.prob(2) == Fraction(1, 4)
    assert out.prob(3) == Fraction(1, 2)
    assert out.prob(4) == Fraction(1, 4)
    assert out.nonterm_mass == 0


def test_run_max_n2_matches_triangular():
    program = lang.parse_program(sample("max.fun"))
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    out = run_oracle(program, dist, {"n": 2})
    assert out.prob(1) == Fraction(1, 4)
    assert out.prob(2) == Fraction(3, 4)
    for z in out.support():
        assert out.prob(z) == Fraction(2 * z - 1, 4)


def test_member_repeating_lists():
    program = lang.parse_program(sample("member.fun"))
    dist, _ = parse_dist_file(sample("member.dist"))
    out = run_oracle(program, dist, {"n": 2, "k": 3})
    assert out.prob(True) == Fraction(7, 8)
    assert out.prob(False) == Fraction(1, 8)


def test_compare_exact_agrees_and_flags_faults():
    program = lang.parse_program(sample("max.fun"))
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    out = run_oracle(program, dist, {"n": 2})
    good = parse_prob("1/(n*n) * (2*z - 1) * C(1 <= z <= n)")
    bad = parse_prob("1/(n*n) * (2*z) * C(1 <= z <= n)")
    assert compare_exact(good, out, {"n": 2}, range(-1, 4), "z").ok
    report = compare_exact(bad, out, {"n": 2}, range(-1, 4), "z")
    assert not report.ok
    assert any(d.value == 1 and d.expected == Fraction(1, 4) and d.got_low == Fraction(1, 2)
               for d in report.discrepancies)


def test_vacuous_sandwich_always_holds():
    program = lang.parse_program(sample("max.fun"))
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    out = run_oracle(program, dist, {"n": 3})
    report = compare_sandwich(lambda z: Fraction(0), lambda z: Fraction(1), out)
    assert report.ok
    assert report.kind == "bounds"


def test_mass_invariant_across_corpus():
    cases = [
        ("add.fun", "uniform2.dist", {"n": 3}),
        ("max.fun", "uniform2.dist", {"n": 4}),
        ("loop.fun", "point.dist", {}),
        ("countdown.fun", "uniform1.dist", {"n": 5}),
        ("member.fun", "member.dist", {"n": 2, "k": 2}),
        ("fourbranch.fun", "uniform4.dist", {}),
    ]
    for prog, dist_name, params in cases:
        program = lang.parse_program(sample(prog))
        dist, _ = parse_dist_file(sample(dist_name))
        out = run_oracle(program, dist, params)
        out.check_invariants()
        assert out.total_mass() + out.nonterm_mass == 1


def test_order_independence():
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    program = lang.parse_program(sample("add.fun"))
    points, _ = enumerate_support(dist, {"n": 3})
    rng = random.Random(5)
    results = []
    for _ in range(3):
        shuffled = list(points)
        rng.shuffle(shuffled)
        acc = OracleDist()
        for combo, weight in shuffled:
            acc.add(lang.interpret(program, combo, 1000), weight)
        results.append(acc.items())
    assert results[0] == results[1] == results[2]


def test_budget_sensitivity_moves_mass_one_way():
    program = lang.parse_program(sample("countdown.fun"))
    dist, _ = parse_dist_file(sample("uniform1.dist"))
    small = run_oracle(program, dist, {"n": 8}, step_budget=3)
    big = run_oracle(program, dist, {"n": 8}, step_budget=6)
    assert big.nonterm_mass <= small.nonterm_mass
    for value, weight in small.items():
        assert big.prob(value) >= weight


def test_loop_mass_is_nonterminating():
    program = lang.parse_program(sample("loop.fun"))
    dist, _ = parse_dist_file(sample("point.dist"))
    out = run_oracle(program, dist, {})
    assert out.nonterm_mass == 1
    assert out.total_mass() == 0


def test_csv_rows():
    program = lang.parse_program(sample("add.fun"))
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    out = run_oracle(program, dist, {"n": 2})
    lines = out.to_csv().strip().split("\n")
    assert lines[0] == "value,numerator,denominator"
    assert lines[1:4] == ["2,1,4", "3,1,2", "4,1,4"]

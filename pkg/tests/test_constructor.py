"""Raw distribution-program construction."""

from fractions import Fraction

import pytest

from poa import lang
from poa.constructor import InputError, build_dist_program, parse_dist_file, product_input
from poa.oracle import run_oracle
from poa.probexpr import (
    EvalContext,
    eval_prob,
    free_symbols,
    serialize_dist_program,
)

from conftest import sample


def test_build_max_template():
    program = lang.parse_program(sample("max.fun"))
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    dp = build_dist_program(program, dist)
    text = serialize_dist_program(dp)
    assert "output P_max" in text
    assert "prob P_max(z) = sum_x sum_y P_in(x,y)*C(z = max(x,y))" in text


def test_build_identity_template():
    program = lang.parse_program("id(x) = x")
    dist, _ = parse_dist_file("px(x; n) = C(1 <= x <= n) * 1/n")
    dp = build_dist_program(program, dist)
    assert "prob P_id(z) = sum_x P_in(x)*C(z = id(x))" in serialize_dist_program(dp)


def test_build_add_template():
    program = lang.parse_program(sample("add.fun"))
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    dp = build_dist_program(program, dist)
    assert "prob P_add(z) = sum_x sum_y P_in(x,y)*C(z = add(x,y))" in serialize_dist_program(dp)


def test_product_of_uniforms():
    dists = [
        parse_dist_file("px(x; n) = C(1 <= x <= n) * 1/n")[0],
        parse_dist_file("py(y; n) = C(1 <= y <= n) * 1/n")[0],
    ]
    joint = product_input(dists)
    assert joint.params == ("x", "y")
    assert joint.symbolic_parameters == {"n"}
    assert eval_prob(joint.body, {"x": 1, "y": 2, "n": 2}) == Fraction(1, 4)


def test_product_single_is_identity():
    d = parse_dist_file("px(x; n) = C(1 <= x <= n) * 1/n")[0]
    assert product_input([d]) == d


def test_product_geometric_and_uniform():
    geo = parse_dist_file("pg(x; n) = C(x >= 0) * 1/n * (1 - 1/n)^x")[0]
    uni = parse_dist_file("py(y; n) = C(1 <= y <= n) * 1/n")[0]
    joint = product_input([geo, uni])
    assert eval_prob(joint.body, {"x": 1, "y": 1, "n": 2}) == Fraction(1, 8)


def test_duplicate_variable_rejected():
    d1 = parse_dist_file("px(x; n) = C(1 <= x <= n) * 1/n")[0]
    with pytest.raises(InputError):
        product_input([d1, d1])


def test_arity_mismatch_rejected():
    program = lang.parse_program(sample("add.fun"))
    dist, _ = parse_dist_file("px(x; n) = C(1 <= x <= n) * 1/n")
    with pytest.raises(InputError):
        build_dist_program(program, dist)


def test_undeclared_symbol_rejected():
    with pytest.raises(InputError):
        parse_dist_file("px(x) = C(1 <= x <= n) * 1/n")


@pytest.mark.parametrize("prog,dist,params", [
    ("id.fun", "uniform1.dist", {"n": 4}),
    ("max.fun", "uniform2.dist", {"n": 3}),
    ("add.fun", "uniform2.dist", {"n": 3}),
])
def test_raw_template_matches_oracle_at_finite_scale(prog, dist, params):
    program = lang.parse_program(sample(prog))
    input_dist, _ = parse_dist_file(sample(dist))
    dp = build_dist_program(program, input_dist)
    oracle_dist = run_oracle(program, input_dist, params)
    ctx = EvalContext(
        prob_functions={f.name: (f.params, f.body) for f in dp.prob_functions},
        program=program,
    )
    out = dp.output()
    z_var = out.params[0]
    support = [v for v in oracle_dist.support()]
    lo = min(support)
    hi = max(support)
    total = Fraction(0)
    for z in range(lo - 2, hi + 3):
        bindings = dict(params)
        bindings[z_var] = z
        got = eval_prob(out.body, bindings, ctx)
        assert got == oracle_dist.prob(z)
        total += got
    assert total <= 1
    if oracle_dist.nonterm_mass == 0:
        assert total == 1


def test_assumptions_parsed_from_dist_file():
    _, assumptions = parse_dist_file(sample("uniform2.dist"))
    assert len(assumptions) == 1
    assert free_symbols(assumptions[0]) == {"n"}

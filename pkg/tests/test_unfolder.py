"""Call elimination: conditionals, composite calls, the recursion template."""

from fractions import Fraction

import pytest

from poa import lang
from poa.constructor import build_dist_program, parse_dist_file
from poa.probexpr import (
    Cmp,
    EvalContext,
    FinProd,
    Indicator,
    NameSupply,
    Sub,
    Sym,
    SumOver,
    eval_prob,
    free_symbols,
    make_src,
    print_prob,
    serialize_dist_program,
)
from poa.simplifier import simplify_dist_program
from poa.oracle import run_oracle
from poa.unfolder import (
    NonAffineIterationError,
    solve_iterate,
    unfold_all,
    unfold_call,
    unfold_conditional,
    unfold_primrec,
)

from conftest import run_pipeline, sample


def _ctx(dp, program):
    return EvalContext(
        prob_functions={f.name: (f.params, f.body) for f in dp.prob_functions},
        program=program,
    )


def test_conditional_split_max():
    program = lang.parse_program(sample("max.fun"))
    body = Indicator(
        Cmp("=", Sym("z"), make_src(program.function("max").body, {"x": Sym("x"), "y": Sym("y")}))
    )
    out = unfold_conditional(body, program)
    text = print_prob(out)
    assert text == "C(x > y)*C(z = x) + C(x <= y)*C(z = y)"


def test_conditional_split_constant_condition():
    program = lang.parse_program("f(x) = if (true) then 1 else 2")
    body = Indicator(Cmp("=", Sym("z"), make_src(program.function("f").body, {"x": Sym("x")})))
    out = unfold_conditional(body, program)
    assert print_prob(out) == "C(true)*C(z = 1) + C(false)*C(z = 2)"


def test_nested_conditional_outer_first():
    program = lang.parse_program("f(x) = if (x=1) then 1 else (if (x=2) then 2 else 3)")
    body = Indicator(Cmp("=", Sym("z"), make_src(program.function("f").body, {"x": Sym("x")})))
    once = unfold_conditional(body, program)
    assert "if" in print_prob(once)  # inner conditional still embedded
    twice = unfold_conditional(once, program)
    assert "if" not in print_prob(twice)


def test_solve_iterate_add():
    program = lang.parse_program(sample("add.fun"))
    scheme = solve_iterate(program.function("add"))
    env = scheme.env_at({"x": Sym("x"), "y": Sym("y")}, Sym("i"))
    assert print_prob(env["x"]) == "x-i"
    assert print_prob(env["y"]) == "y+i"


def test_solve_iterate_rejects_nonaffine():
    program = lang.parse_program(sample("fourbranch.fun"))
    with pytest.raises(NonAffineIterationError):
        solve_iterate(program.function("spin"))


def test_unfold_primrec_structure_and_empty_product():
    program = lang.parse_program(sample("add.fun"))
    body = Indicator(
        Cmp("=", Sym("z"), make_src(lang.Call("add", (lang.Var("x"), lang.Var("y"))), {"x": Sym("x"), "y": Sym("y")}))
    )
    supply = NameSupply({"x", "y", "z", "n"})
    out = unfold_primrec(body, program.function("add"), program, supply)
    assert isinstance(out, SumOver)
    text = print_prob(out)
    assert "prod_{j=0..i-1}" in text
    assert "C(x-i = 0)" in text
    assert "C(z = y+i)" in text
    # the term at i = 0 has an empty product, which evaluates to 1
    prod = FinProd("j", Sub(Sym("i"), Sym("i")), Sub(Sym("i"), Sub(Sym("i"), Sub(Sym("i"), Sym("i")))), Sym("j"))
    # simpler: directly check an empty product evaluates to 1
    assert eval_prob(FinProd("j", Sym("a"), Sym("b"), Sym("j")), {"a": 0, "b": -1}) == 1
    # measure check: at x=0 only the i=0 term contributes
    assert eval_prob(out, {"x": 0, "y": 5, "z": 5}) == 1
    assert eval_prob(out, {"x": 2, "y": 5, "z": 7}) == 1
    assert eval_prob(out, {"x": 2, "y": 5, "z": 6}) == 0


def test_unfold_call_creates_joint_function():
    program = lang.parse_program(sample("addshift.fun"))
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    dp = build_dist_program(program, dist)
    # lower the embedded wrapper so the composite call is visible
    from poa.unfolder import lower_embedded

    out_fn = dp.output()
    dp = dp.replace_function(out_fn.name, lower_embedded(out_fn.body, program))
    dp2 = unfold_call(dp, out_fn.name)
    assert len(dp2.prob_functions) == len(dp.prob_functions) + 1
    aux = dp2.prob_functions[-1]
    text = serialize_dist_program(dp2)
    assert f"prob {aux.name}(u,u1) = sum_x sum_y P_in(x,y)*C(u = x-1)*C(u1 = y+1)" in text
    # the rewritten body sums over the fresh variables
    assert f"sum_u sum_u1 {aux.name}(u,u1)*C(z = add(u,u1))" in text


def test_unfold_call_identity_argument_is_renaming():
    program = lang.parse_program("wrap(x) = add(x, x)\nadd(x,y) = if (x=0) then y else add(x-1,y+1)")
    dist, _ = parse_dist_file("px(x; n) = C(1 <= x <= n) * 1/n")
    dp = build_dist_program(program, dist)
    from poa.unfolder import lower_embedded

    out_fn = dp.output()
    dp = dp.replace_function(out_fn.name, lower_embedded(out_fn.body, program))
    dp2 = unfold_call(dp, out_fn.name)
    aux = dp2.prob_functions[-1]
    # the joint function carries the renaming constraints C(u = x) C(u1 = x)
    body_text = print_prob(aux.body)
    assert "C(u = x)" in body_text and "C(u1 = x)" in body_text
    # measure is preserved
    ctx = _ctx(dp2, program)
    for n in (1, 2, 3):
        for z in range(0, 2 * n + 2):
            before = eval_prob(dp.output().body, {"n": n, "z": z}, _ctx(dp, program))
            after = eval_prob(dp2.output().body, {"n": n, "z": z}, ctx)
            assert before == after


def test_composition_two_layers():
    program = lang.parse_program(
        "c(x,y) = add(add(x,y), y)\nadd(x,y) = if (x=0) then y else add(x-1,y+1)"
    )
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    dp = build_dist_program(program, dist)
    dp2 = unfold_all(dp, None)
    # one auxiliary joint distribution for the inner call layer, and the
    # count never exceeds the number of call sites
    aux = [f for f in dp2.prob_functions if f.name.startswith("P_u")]
    assert len(aux) == 1
    call_sites = sum(1 for f in program.functions for _ in lang.calls_in(f.body))
    assert len(aux) <= call_sites
    # the joint function is a genuine distribution over the composed call's
    # arguments, and summing it against the callee reproduces the oracle
    n = 2
    ctx = _ctx(dp2, program)
    joint = aux[0]
    weights = {}
    for u in range(0, 3 * n + 1):
        for u1 in range(0, 3 * n + 1):
            w = eval_prob(joint.body, {"n": n, joint.params[0]: u, joint.params[1]: u1}, ctx)
            if w:
                weights[(u, u1)] = w
    assert sum(weights.values()) == 1
    oracle_dist = run_oracle(program, dist, {"n": n})
    add_only = lang.Program((program.function("add"),), "add")
    rebuilt = {}
    for (u, u1), w in weights.items():
        value = lang.interpret(add_only, (u, u1), 1000)
        rebuilt[value] = rebuilt.get(value, Fraction(0)) + w
    for z in range(0, 4 * n + 2):
        assert rebuilt.get(z, Fraction(0)) == oracle_dist.prob(z)


def test_unfold_all_leaves_no_unflagged_calls():
    from poa.unfolder import _embedded_call_names

    for prog, dist_name in [("max.fun", "uniform2.dist"), ("add.fun", "uniform2.dist"),
                            ("member.fun", "member.dist"), ("fourbranch.fun", "uniform4.dist")]:
        _, _, _, dp, _ = run_pipeline(prog, dist_name)
        for fn in dp.prob_functions:
            leftover = _embedded_call_names(fn.body)
            assert leftover <= set(dp.flags), (prog, fn.name, leftover)


def test_unfold_all_add_has_closed_iterate():
    program = lang.parse_program(sample("add.fun"))
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    dp = unfold_all(build_dist_program(program, dist), None)
    text = serialize_dist_program(dp)
    assert "sum_i" in text
    assert "C(x-j != 0)" in text
    from poa.unfolder import _embedded_call_names

    assert _embedded_call_names(dp.output().body) == set()


def test_unfold_all_identity_unchanged():
    program = lang.parse_program("id(x) = x")
    dist, _ = parse_dist_file("px(x; n) = C(1 <= x <= n) * 1/n")
    dp = unfold_all(build_dist_program(program, dist), None)
    assert "prob P_id(z) = sum_x P_in(x)*C(z = x)" in serialize_dist_program(dp)


def test_measure_preserved_across_stages():
    for prog, dist_name, params in [
        ("add.fun", "uniform2.dist", {"n": 3}),
        ("max.fun", "uniform2.dist", {"n": 3}),
        ("countdown.fun", "uniform1.dist", {"n": 4}),
    ]:
        program = lang.parse_program(sample(prog))
        dist, assumptions = parse_dist_file(sample(dist_name))
        dp0 = build_dist_program(program, dist)
        dp1 = unfold_all(dp0, None)
        dp2, _ = simplify_dist_program(dp1, assumptions, 10_000, None)
        z_var = dp0.output().params[0]
        for z in range(-2, 10):
            bindings = dict(params)
            bindings[z_var] = z
            values = {
                eval_prob(dp.output().body, bindings, _ctx(dp, program))
                for dp in (dp0, dp1, dp2)
            }
            assert len(values) == 1


def test_freshness_no_symbol_leaks():
    program = lang.parse_program(sample("add.fun"))
    dist, _ = parse_dist_file(sample("uniform2.dist"))
    dp0 = build_dist_program(program, dist)
    dp1 = unfold_all(dp0, None)
    assert free_symbols(dp0.output().body) == free_symbols(dp1.output().body)


def test_nonaffine_flags():
    _, _, _, dp, _ = run_pipeline("member.fun", "member.dist")
    assert "member" in dp.flags
    _, _, _, dp, _ = run_pipeline("fourbranch.fun", "uniform4.dist")
    assert "spin" in dp.flags

"""Every catalogued rewrite rule passes randomized exact-equality trials."""

import pytest

from poa.simplifier import RULES, CounterexampleFound, RewriteRule, check_rule, _expect_equal
from poa.probexpr import Add, Lit, rat


@pytest.mark.parametrize("rule", RULES, ids=lambda r: r.name)
def test_rule_random_trials(rule):
    report = check_rule(rule, trials=200, seed=7)
    assert report.ok, report.message


def test_catalogue_covers_core_rules():
    names = {r.name for r in RULES}
    assert {
        "point_sum", "interval_count", "interval_moment", "interval_fuse",
        "max_le_split", "min_ge_split", "geometric_sum", "geometric_moment",
        "finprod_neq", "finprod_const", "and_product",
    } <= names


def test_counterexample_is_reported():
    def broken(rng):
        a = rat(rng.randint(0, 5))
        _expect_equal(Add(a, rat(1)), a, {}, "broken")

    report = check_rule(RewriteRule("broken", "x+1 = x", broken), trials=10)
    assert not report.ok
    assert "broken" in report.message

"""Build the raw output-distribution program from a program and an input distribution.

The construction is a dumb template: one sum per input variable, the joint
input weight, and an indicator tying the output variable to the entry call.
All reduction happens later.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import lang
from .probexpr import (
    BoolExpr,
    CallP,
    Cmp,
    DistProgram,
    Indicator,
    Mul,
    NameSupply,
    ProbExpr,
    ProbFunction,
    ProbSyntaxError,
    Sym,
    SumOver,
    _PParser,
    _ptokenize,
    free_symbols,
    make_src,
)


class InputError(Exception):
    """Bad distribution declarations or mismatched programs."""


@dataclass(frozen=True)
class InputDist:
    """Joint distribution over the program inputs.

    `params` are the random variables, in entry-parameter order; `body` is
    their joint weight; `symbolic_parameters` (e.g. n, k) stay free.
    """

    params: tuple
    body: ProbExpr
    symbolic_parameters: frozenset

    def __post_init__(self):
        extra = free_symbols(self.body) - set(self.params) - self.symbolic_parameters
        if extra:
            raise InputError(f"distribution body mentions undeclared symbols: {sorted(extra)}")


def product_input(dists: list) -> InputDist:
    """Pointwise product of independent per-variable distributions."""
    if not dists:
        raise InputError("no distributions given")
    params: list = []
    for d in dists:
        for p in d.params:
            if p in params:
                raise InputError(f"duplicate variable {p!r} in distribution product")
            params.append(p)
    body = dists[0].body
    for d in dists[1:]:
        body = Mul(body, d.body)
    symbols = frozenset().union(*(d.symbolic_parameters for d in dists))
    return InputDist(tuple(params), body, symbols)


def parse_dist_file(text: str) -> tuple:
    """Parse distribution declarations.

    One declaration per line: ``name(x, y; n, k) = expr`` where variables come
    before the optional ``;`` and symbolic parameters after it.  Lines of the
    form ``assume <condition>`` declare side conditions (e.g. ``n >= 1``).
    Returns (InputDist, assumptions).
    """
    dists: list = []
    assumptions: list = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("assume "):
                p = _PParser(_ptokenize(line[len("assume "):]))
                cond = p.bool_expr()
                if not p.at_end():
                    raise ProbSyntaxError(f"trailing input {p.peek().text!r}")
                assumptions.append(cond)
                continue
            dists.append(_parse_decl(line))
        except ProbSyntaxError as exc:
            raise InputError(f"line {lineno}: {exc}") from exc
    if not dists:
        raise InputError("no distribution declarations found")
    joint = dists[0] if len(dists) == 1 else product_input(dists)
    return joint, tuple(assumptions)


def _parse_decl(line: str) -> InputDist:
    p = _PParser(_ptokenize(line))
    name = p.advance()
    if name.kind != "name":
        raise ProbSyntaxError("expected a distribution name")
    p.expect("(")
    variables: list = []
    params: list = []
    bucket = variables
    while p.peek().text != ")":
        tok = p.advance()
        if tok.kind != "name":
            raise ProbSyntaxError("expected a name in the declaration header")
        bucket.append(tok.text)
        if p.peek().text == ",":
            p.advance()
        elif p.peek().text == ";":
            p.advance()
            bucket = params
    p.expect(")")
    p.expect("=")
    body = p.expr()
    if not p.at_end():
        raise ProbSyntaxError(f"trailing input {p.peek().text!r}")
    if not variables:
        raise ProbSyntaxError(f"distribution {name.text!r} declares no variables")
    return InputDist(tuple(variables), body, frozenset(params))


INPUT_FUNCTION = "P_in"


def build_dist_program(program: lang.Program, input_dist: InputDist) -> DistProgram:
    """Instantiate the raw template: P(z) = sum over inputs of weight * C(z = entry(inputs))."""
    entry = program.function(program.entry)
    if len(input_dist.params) != len(entry.params):
        raise InputError(
            f"{program.entry} takes {len(entry.params)} arguments but the distribution "
            f"declares {len(input_dist.params)} variables"
        )

    used = set(input_dist.params) | input_dist.symbolic_parameters
    for f in program.functions:
        used.add(f.name)
        used.update(f.params)
    supply = NameSupply(used | {INPUT_FUNCTION})
    out_var = supply.fresh("z")
    out_name = supply.fresh(f"P_{program.entry}")

    in_fn = ProbFunction(INPUT_FUNCTION, input_dist.params, input_dist.body)
    # express the entry call over the distribution's variable names
    arg_map = dict(zip(entry.params, input_dist.params))
    call_env = {p: Sym(arg_map[p]) for p in entry.params}
    constraint: BoolExpr = Cmp(
        "=",
        Sym(out_var),
        make_src(lang.Call(entry.name, tuple(lang.Var(p) for p in entry.params)), call_env),
    )
    body: ProbExpr = Mul(CallP(INPUT_FUNCTION, tuple(Sym(v) for v in input_dist.params)), Indicator(constraint))
    for v in reversed(input_dist.params):
        body = SumOver(v, body)
    out_fn = ProbFunction(out_name, (out_var,), body)
    return DistProgram((in_fn, out_fn), program, out_name)

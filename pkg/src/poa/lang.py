"""Source language: AST, parser, printer, classifier and a budgeted interpreter.

Programs are collections of first-order functions over integers, booleans and
finite lists.  Every function is either non-recursive or follows the single
supported recursion template ``f(xs) = if (b) then g else f(e1,...,en)``;
anything else is rejected up front so the later analysis stages never see
unrestricted recursion.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Union

# Values are plain Python data: exact ints, bools, and tuples for lists.
# Tuples keep values immutable and hashable.
Value = Union[int, bool, tuple]


class NonTerminated:
    """Returned by the interpreter when the step budget runs out."""

    _instance: Optional["NonTerminated"] = None

    def __new__(cls) -> "NonTerminated":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NonTerminated"


NONTERMINATED = NonTerminated()


def is_value(v: object) -> bool:
    if isinstance(v, bool) or isinstance(v, int):
        return True
    if isinstance(v, tuple):
        return all(is_value(e) for e in v)
    return False


def value_key(v: Value) -> tuple:
    """Hashable key that keeps True distinct from 1 and sorts values stably."""
    if isinstance(v, bool):
        return (1, v)
    if isinstance(v, int):
        return (0, v)
    return (2, tuple(value_key(e) for e in v))


def values_equal(a: Value, b: Value) -> bool:
    return value_key(a) == value_key(b)


def format_value(v: Value) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    return "[" + ", ".join(format_value(e) for e in v) + "]"


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: Value


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Prim:
    op: str
    args: tuple
    # ops: + - * = != < > <= >= and or not hd tl cons nil


@dataclass(frozen=True)
class If:
    cond: "Expr"
    then: "Expr"
    orelse: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Const, Var, Prim, If, Call]


class FunKind(Enum):
    NON_RECURSIVE = "non-recursive"
    PRIMITIVE_RECURSIVE = "primitive-recursive"


@dataclass(frozen=True)
class FunctionDef:
    name: str
    params: tuple
    body: Expr
    kind: FunKind


@dataclass(frozen=True)
class PrimRecParts:
    """Pieces of ``if (cond) then base else f(steps)``."""

    cond: Expr
    base: Expr
    steps: tuple


@dataclass(frozen=True)
class Program:
    functions: tuple
    entry: str

    def function(self, name: str) -> FunctionDef:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def has_function(self, name: str) -> bool:
        return any(f.name == name for f in self.functions)


# ---------------------------------------------------------------------------
# Errors


class LangError(Exception):
    """Base error for the source language."""


class SourceSyntaxError(LangError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class ProgramError(LangError):
    """Static errors: arity mismatch, unbound variable, unknown function."""


class UnsupportedRecursionError(LangError):
    """Recursion outside the supported template."""


class SourceTypeError(LangError):
    """Dynamic type error during interpretation (distinct from non-termination)."""


# ---------------------------------------------------------------------------
# Tokenizer

_TWO_CHAR = ("<=", ">=", "!=", "::", "||", "&&")
_ONE_CHAR = "()[]=<>+-*,"

_KEYWORDS = {"if", "then", "else", "and", "or", "not", "true", "false", "hd", "tl", "nil"}


@dataclass(frozen=True)
class _Token:
    kind: str  # "int", "name", "op", "eof"
    text: str
    line: int
    col: int


def _tokenize(text: str, line_offsets: Optional[list] = None) -> Iterator[_Token]:
    """Tokenize `text`; `line_offsets[i]` maps physical line i (0-based) to a
    (source line, column base) pair used for error reporting after line joining."""
    for lineno, raw in enumerate(text.split("\n")):
        src_line, col_base = (lineno + 1, 0)
        if line_offsets is not None and lineno < len(line_offsets):
            src_line, col_base = line_offsets[lineno]
        i = 0
        while i < len(raw):
            c = raw[i]
            if c == "#":
                break
            if c.isspace():
                i += 1
                continue
            col = i + 1 + col_base
            if raw[i : i + 2] in _TWO_CHAR:
                yield _Token("op", raw[i : i + 2], src_line, col)
                i += 2
                continue
            if c.isdigit():
                j = i
                while j < len(raw) and raw[j].isdigit():
                    j += 1
                yield _Token("int", raw[i:j], src_line, col)
                i = j
                continue
            if c.isalpha() or c == "_":
                j = i
                while j < len(raw) and (raw[j].isalnum() or raw[j] == "_"):
                    j += 1
                yield _Token("name", raw[i:j], src_line, col)
                i = j
                continue
            if c in _ONE_CHAR:
                yield _Token("op", c, src_line, col)
                i += 1
                continue
            raise SourceSyntaxError(f"unexpected character {c!r}", src_line, col)
    yield _Token("eof", "", -1, -1)


class _Parser:
    """Recursive-descent expression parser shared by program definitions."""

    def __init__(self, tokens: list):
        self._tokens = tokens
        self._pos = 0

    def peek(self) -> _Token:
        return self._tokens[self._pos]

    def advance(self) -> _Token:
        tok = self._tokens[self._pos]
        if tok.kind != "eof":
            self._pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.text != text or tok.kind == "eof":
            raise SourceSyntaxError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        return self.advance()

    def at_end(self) -> bool:
        return self.peek().kind == "eof"

    # expression grammar, loosest binding first
    def expression(self) -> Expr:
        return self._or()

    def _or(self) -> Expr:
        left = self._and()
        while self.peek().text in ("or", "||"):
            self.advance()
            left = Prim("or", (left, self._and()))
        return left

    def _and(self) -> Expr:
        left = self._not()
        while self.peek().text in ("and", "&&"):
            self.advance()
            left = Prim("and", (left, self._not()))
        return left

    def _not(self) -> Expr:
        if self.peek().text == "not":
            self.advance()
            return Prim("not", (self._not(),))
        return self._comparison()

    def _comparison(self) -> Expr:
        left = self._additive()
        if self.peek().text in ("=", "!=", "<", ">", "<=", ">="):
            op = self.advance().text
            return Prim(op, (left, self._additive()))
        return left

    def _additive(self) -> Expr:
        left = self._multiplicative()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            left = Prim(op, (left, self._multiplicative()))
        return left

    def _multiplicative(self) -> Expr:
        left = self._cons()
        while self.peek().text == "*":
            self.advance()
            left = Prim("*", (left, self._cons()))
        return left

    def _cons(self) -> Expr:
        head = self._atom()
        if self.peek().text == "::":
            self.advance()
            return Prim("cons", (head, self._cons()))
        return head

    def _atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "int":
            self.advance()
            return Const(int(tok.text))
        if tok.text == "-":
            self.advance()
            num = self.peek()
            if num.kind != "int":
                raise SourceSyntaxError("expected integer after unary '-'", num.line, num.col)
            self.advance()
            return Const(-int(num.text))
        if tok.text == "(":
            self.advance()
            e = self.expression()
            self.expect(")")
            return e
        if tok.text == "[":
            self.advance()
            if self.peek().text == "]":
                self.advance()
                return Const(())
            elems = [self.expression()]
            while self.peek().text == ",":
                self.advance()
                elems.append(self.expression())
            self.expect("]")
            out: Expr = Const(())
            for e in reversed(elems):
                out = Prim("cons", (e, out))
            return out
        if tok.text == "if":
            self.advance()
            self.expect("(")
            cond = self.expression()
            self.expect(")")
            self.expect("then")
            then = self.expression()
            self.expect("else")
            orelse = self.expression()
            return If(cond, then, orelse)
        if tok.text in ("true", "false"):
            self.advance()
            return Const(tok.text == "true")
        if tok.text in ("hd", "tl", "nil"):
            self.advance()
            self.expect("(")
            e = self.expression()
            self.expect(")")
            return Prim(tok.text, (e,))
        if tok.kind == "name":
            self.advance()
            if self.peek().text == "(":
                self.advance()
                args = [self.expression()]
                while self.peek().text == ",":
                    self.advance()
                    args.append(self.expression())
                self.expect(")")
                return Call(tok.text, tuple(args))
            return Var(tok.text)
        raise SourceSyntaxError(f"unexpected token {tok.text or 'end of input'!r}", tok.line, tok.col)


def _logical_lines(text: str) -> Iterator[tuple]:
    """Join continuation lines (indented lines continue the previous one).

    Yields (joined_text, offsets) where offsets maps each physical line of the
    joined text back to (original line number, column base).
    """
    current: list = []
    offsets: list = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        stripped = raw.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        if raw[0].isspace() and current:
            current.append(stripped)
            offsets.append((lineno, 0))
            continue
        if current:
            yield "\n".join(current), offsets
        current = [stripped]
        offsets = [(lineno, 0)]
    if current:
        yield "\n".join(current), offsets


def parse_expr(text: str) -> Expr:
    """Parse a single expression (used by tests and embedded tooling)."""
    parser = _Parser(list(_tokenize(text)))
    e = parser.expression()
    tok = parser.peek()
    if tok.kind != "eof":
        raise SourceSyntaxError(f"trailing input {tok.text!r}", tok.line, tok.col)
    return e


def parse_program(text: str) -> Program:
    """Parse a whole program: one `name(args) = body` definition per logical line."""
    headers: list = []
    for chunk, offsets in _logical_lines(text):
        tokens = list(_tokenize(chunk, offsets))
        parser = _Parser(tokens)
        name_tok = parser.advance()
        if name_tok.kind != "name":
            raise SourceSyntaxError("expected function name", name_tok.line, name_tok.col)
        parser.expect("(")
        params = []
        if parser.peek().text != ")":
            while True:
                p = parser.advance()
                if p.kind != "name":
                    raise SourceSyntaxError("expected parameter name", p.line, p.col)
                params.append(p.text)
                if parser.peek().text == ",":
                    parser.advance()
                    continue
                break
        parser.expect(")")
        parser.expect("=")
        body = parser.expression()
        tok = parser.peek()
        if tok.kind != "eof":
            raise SourceSyntaxError(f"trailing input {tok.text!r}", tok.line, tok.col)
        if len(set(params)) != len(params):
            raise ProgramError(f"duplicate parameter in {name_tok.text}")
        headers.append((name_tok.text, tuple(params), body))

    if not headers:
        raise ProgramError("empty program")
    names = [h[0] for h in headers]
    if len(set(names)) != len(names):
        raise ProgramError("duplicate function name")
    arities = {name: len(params) for name, params, _ in headers}

    for name, params, body in headers:
        _check_body(name, set(params), body, arities)
    _reject_mutual_recursion(headers)

    functions = []
    for name, params, body in headers:
        kind = classify(name, params, body, arities)
        functions.append(FunctionDef(name, params, body, kind))
    return Program(tuple(functions), entry=headers[0][0])


def _check_body(fname: str, params: set, expr: Expr, arities: dict) -> None:
    if isinstance(expr, Const):
        return
    if isinstance(expr, Var):
        if expr.name not in params:
            raise ProgramError(f"unbound variable {expr.name!r} in {fname}")
        return
    if isinstance(expr, Prim):
        for a in expr.args:
            _check_body(fname, params, a, arities)
        return
    if isinstance(expr, If):
        for a in (expr.cond, expr.then, expr.orelse):
            _check_body(fname, params, a, arities)
        return
    if isinstance(expr, Call):
        if expr.func not in arities:
            raise ProgramError(f"unknown function {expr.func!r} called from {fname}")
        if len(expr.args) != arities[expr.func]:
            raise ProgramError(
                f"arity mismatch: {expr.func} expects {arities[expr.func]} arguments, got {len(expr.args)} in {fname}"
            )
        for a in expr.args:
            _check_body(fname, params, a, arities)
        return
    raise ProgramError(f"unknown expression node {expr!r}")


def calls_in(expr: Expr) -> Iterator[Call]:
    if isinstance(expr, Prim):
        for a in expr.args:
            yield from calls_in(a)
    elif isinstance(expr, If):
        for a in (expr.cond, expr.then, expr.orelse):
            yield from calls_in(a)
    elif isinstance(expr, Call):
        yield expr
        for a in expr.args:
            yield from calls_in(a)


def _reject_mutual_recursion(headers: list) -> None:
    callees = {name: {c.func for c in calls_in(body)} - {name} for name, _, body in headers}
    state: dict = {}

    def visit(name: str, stack: list) -> None:
        if state.get(name) == "done":
            return
        if state.get(name) == "active":
            cycle = " -> ".join(stack[stack.index(name):] + [name])
            raise UnsupportedRecursionError(f"mutual recursion is not supported: {cycle}")
        state[name] = "active"
        for callee in sorted(callees.get(name, ())):
            visit(callee, stack + [name])
        state[name] = "done"

    for name, _, _ in headers:
        visit(name, [])


def classify(name: str, params: tuple, body: Expr, arities: dict) -> FunKind:
    """Classify a function body as non-recursive or primitive-recursive.

    The only accepted recursive shape is ``if (b) then g else name(e1,...,en)``
    where b, g and the e_i contain no call back to `name`.
    """
    self_calls = [c for c in calls_in(body) if c.func == name]
    if not self_calls:
        return FunKind.NON_RECURSIVE
    if not isinstance(body, If):
        raise UnsupportedRecursionError(f"{name}: recursive call outside the supported if/then/else shape")
    tail = body.orelse
    if not (isinstance(tail, Call) and tail.func == name):
        raise UnsupportedRecursionError(f"{name}: the recursive call must be the whole else branch")
    if len(tail.args) != len(params):
        raise UnsupportedRecursionError(f"{name}: recursive call arity differs from the parameter list")
    for part in (body.cond, body.then) + tail.args:
        if any(c.func == name for c in calls_in(part)):
            raise UnsupportedRecursionError(f"{name}: nested recursive call is not supported")
    return FunKind.PRIMITIVE_RECURSIVE


def primrec_parts(fd: FunctionDef) -> PrimRecParts:
    if fd.kind is not FunKind.PRIMITIVE_RECURSIVE:
        raise ValueError(f"{fd.name} is not primitive-recursive")
    assert isinstance(fd.body, If) and isinstance(fd.body.orelse, Call)
    return PrimRecParts(fd.body.cond, fd.body.then, fd.body.orelse.args)


# ---------------------------------------------------------------------------
# Printer (round-trips through parse_program)


def print_expr(expr: Expr, prec: int = 0) -> str:
    # precedence levels: 0 or, 1 and, 2 not, 3 cmp, 4 additive, 5 multiplicative, 6 cons, 7 atom
    def wrap(s: str, level: int) -> str:
        return f"({s})" if level < prec else s

    if isinstance(expr, Const):
        v = expr.value
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, int):
            return str(v)
        if v == ():
            return "[]"
        out = "[]"
        for e in reversed(v):
            out = f"{format_value(e)}::{out}"  # only reachable for constant lists
        return out
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, If):
        s = f"if ({print_expr(expr.cond)}) then {print_expr(expr.then)} else {print_expr(expr.orelse)}"
        return wrap(s, 0)
    if isinstance(expr, Call):
        return f"{expr.func}({','.join(print_expr(a) for a in expr.args)})"
    assert isinstance(expr, Prim)
    op = expr.op
    if op in ("hd", "tl", "nil"):
        return f"{op}({print_expr(expr.args[0])})"
    if op == "not":
        return wrap(f"not {print_expr(expr.args[0], 3)}", 2)
    if op == "cons":
        return wrap(f"{print_expr(expr.args[0], 7)}::{print_expr(expr.args[1], 6)}", 6)
    levels = {"or": 0, "and": 1, "=": 3, "!=": 3, "<": 3, ">": 3, "<=": 3, ">=": 3, "+": 4, "-": 4, "*": 5}
    level = levels[op]
    left = print_expr(expr.args[0], level)
    right = print_expr(expr.args[1], level + 1)
    joined = f"{left}{op}{right}" if op in ("+", "-", "*") else f"{left} {op} {right}"
    return wrap(joined, level)


def print_function(fd: FunctionDef) -> str:
    return f"{fd.name}({','.join(fd.params)}) = {print_expr(fd.body)}"


def print_program(program: Program) -> str:
    return "\n".join(print_function(f) for f in program.functions) + "\n"


# ---------------------------------------------------------------------------
# Interpreter


class _OutOfSteps(Exception):
    pass


class _Budget:
    __slots__ = ("remaining",)

    def __init__(self, steps: int):
        self.remaining = steps

    def spend(self) -> None:
        if self.remaining <= 0:
            raise _OutOfSteps()
        self.remaining -= 1


def interpret(program: Program, args: tuple, step_budget: int = 10_000):
    """Run the program entry point call-by-value.

    Returns the result value, or NONTERMINATED once more than `step_budget`
    recursive unfoldings have happened.  Type errors raise SourceTypeError.
    """
    entry = program.function(program.entry)
    if len(args) != len(entry.params):
        raise ProgramError(f"{entry.name} expects {len(entry.params)} arguments, got {len(args)}")
    budget = _Budget(step_budget)
    try:
        return _apply(program, entry, list(args), budget)
    except _OutOfSteps:
        return NONTERMINATED


def eval_expr_in(program: Program, expr: Expr, env: dict, step_budget: int = 10_000):
    """Evaluate one expression under an environment; used by the analysis stages."""
    budget = _Budget(step_budget)
    try:
        return _eval(program, expr, env, budget)
    except _OutOfSteps:
        return NONTERMINATED


def _apply(program: Program, fd: FunctionDef, args: list, budget: _Budget):
    if fd.kind is FunKind.PRIMITIVE_RECURSIVE:
        parts = primrec_parts(fd)
        while True:
            env = dict(zip(fd.params, args))
            cond = _eval(program, parts.cond, env, budget)
            if not isinstance(cond, bool):
                raise SourceTypeError(f"condition in {fd.name} is not a boolean")
            if cond:
                return _eval(program, parts.base, env, budget)
            budget.spend()
            args = [_eval(program, e, env, budget) for e in parts.steps]
    env = dict(zip(fd.params, args))
    return _eval(program, fd.body, env, budget)


def _num(v, op: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SourceTypeError(f"{op} expects an integer, got {format_value(v) if is_value(v) else v!r}")
    return v


def _eval(program: Program, expr: Expr, env: dict, budget: _Budget):
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        return env[expr.name]
    if isinstance(expr, If):
        cond = _eval(program, expr.cond, env, budget)
        if not isinstance(cond, bool):
            raise SourceTypeError("if condition is not a boolean")
        return _eval(program, expr.then if cond else expr.orelse, env, budget)
    if isinstance(expr, Call):
        fd = program.function(expr.func)
        args = [_eval(program, a, env, budget) for a in expr.args]
        return _apply(program, fd, args, budget)
    assert isinstance(expr, Prim)
    op = expr.op
    if op == "and":
        left = _eval(program, expr.args[0], env, budget)
        if not isinstance(left, bool):
            raise SourceTypeError("'and' expects booleans")
        if not left:
            return False
        right = _eval(program, expr.args[1], env, budget)
        if not isinstance(right, bool):
            raise SourceTypeError("'and' expects booleans")
        return right
    if op == "or":
        left = _eval(program, expr.args[0], env, budget)
        if not isinstance(left, bool):
            raise SourceTypeError("'or' expects booleans")
        if left:
            return True
        right = _eval(program, expr.args[1], env, budget)
        if not isinstance(right, bool):
            raise SourceTypeError("'or' expects booleans")
        return right
    if op == "not":
        v = _eval(program, expr.args[0], env, budget)
        if not isinstance(v, bool):
            raise SourceTypeError("'not' expects a boolean")
        return not v
    args = [_eval(program, a, env, budget) for a in expr.args]
    if op == "+":
        return _num(args[0], op) + _num(args[1], op)
    if op == "-":
        return _num(args[0], op) - _num(args[1], op)
    if op == "*":
        return _num(args[0], op) * _num(args[1], op)
    if op == "=":
        return values_equal(args[0], args[1])
    if op == "!=":
        return not values_equal(args[0], args[1])
    if op in ("<", ">", "<=", ">="):
        a, b = _num(args[0], op), _num(args[1], op)
        return {"<": a < b, ">": a > b, "<=": a <= b, ">=": a >= b}[op]
    if op == "hd":
        v = args[0]
        if not isinstance(v, tuple) or not v:
            raise SourceTypeError("hd expects a non-empty list")
        return v[0]
    if op == "tl":
        v = args[0]
        if not isinstance(v, tuple) or not v:
            raise SourceTypeError("tl expects a non-empty list")
        return v[1:]
    if op == "cons":
        head, tail = args
        if not isinstance(tail, tuple):
            raise SourceTypeError("cons expects a list as second argument")
        return (head,) + tail
    if op == "nil":
        v = args[0]
        if not isinstance(v, tuple):
            raise SourceTypeError("nil expects a list")
        return v == ()
    raise SourceTypeError(f"unknown primitive {op!r}")

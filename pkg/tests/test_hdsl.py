import random

import pytest
from hypothesis import given, settings, strategies as st

from evoforge import hdsl
from evoforge.hdsl import BinOp, Call, Mul, Neg, Number, Sub, Var

VARS = ("cap", "item", "index", "n_bins")


@pytest.mark.parametrize("text, expected", [
    ("cap - item * 2", Sub(Var("cap"), Mul(Var("item"), Number(2)))),
    ("-(cap - item)", Neg(Sub(Var("cap"), Var("item")))),
    ("a - b - c", Sub(Sub(Var("a"), Var("b")), Var("c"))),
    ("a / b * c", Mul(BinOp("/", Var("a"), Var("b")), Var("c"))),
    ("  MIN( cap,item )", Call("min", (Var("cap"), Var("item")))),
    ("--x", Neg(Neg(Var("x")))),
    ("1.5e3", Number(1500.0)),
])
def test_parse(text, expected):
    assert hdsl.parse(text) == expected


@pytest.mark.parametrize("text, error, pos", [
    ("min(cap, item", hdsl.DslSyntaxError, 13),
    ("cap $ item", hdsl.DslLexError, 4),
    ("foo(cap)", hdsl.UnknownFunction, 0),
    ("min(cap)", hdsl.DslSyntaxError, 0),
    ("cap item", hdsl.DslSyntaxError, 4),
    ("(cap", hdsl.DslSyntaxError, 4),
    ("", hdsl.DslSyntaxError, 0),
])
def test_parse_errors_report_position(text, error, pos):
    with pytest.raises(error) as info:
        hdsl.parse(text)
    assert info.value.position == pos
    assert f"position {pos}" in str(info.value)


def test_unbalanced_paren_mentions_end_of_input():
    with pytest.raises(hdsl.DslSyntaxError, match="end of input"):
        hdsl.parse("min(cap, item")


@pytest.mark.parametrize("expr, text", [
    (Sub(Var("cap"), Mul(Var("item"), Number(2))), "cap - item * 2"),
    (Neg(Sub(Var("cap"), Var("item"))), "-(cap - item)"),
    (Mul(Sub(Var("cap"), Var("item")), Number(2)), "(cap - item) * 2"),
    (Sub(Var("a"), Sub(Var("b"), Var("c"))), "a - (b - c)"),
    (BinOp("+", Var("a"), Neg(Var("b"))), "a + -b"),
    (Call("if", (Var("a"), Number(0.25), Neg(Number(1e6)))), "if(a, 0.25, -1000000)"),
])
def test_print(expr, text):
    assert hdsl.to_text(expr) == text


def test_evaluate_examples():
    assert hdsl.evaluate(hdsl.parse("cap - item"), {"cap": 7, "item": 4}) == 3.0
    e = hdsl.parse("if(ge(cap, item), -(cap - item), -1000000)")
    assert hdsl.evaluate(e, {"cap": 3, "item": 5}) == -1000000.0
    assert hdsl.evaluate(e, {"cap": 8, "item": 5}) == -3.0
    with pytest.raises(hdsl.DomainError):
        hdsl.evaluate(hdsl.parse("item / (cap - cap)"), {"cap": 2, "item": 1})


@pytest.mark.parametrize("text", [
    "log(0)", "log(-cap)", "exp(1000)", "pow(0, -1)", "pow(-cap, 0.5)",
    "pow(10, 400)", "1e300 * 1e300", "exp(700) - exp(700) * exp(700)",
])
def test_domain_errors(text):
    with pytest.raises(hdsl.DomainError):
        hdsl.evaluate(hdsl.parse(text), {"cap": 2.0})


def test_unbound_variable():
    with pytest.raises(hdsl.UnboundVariable, match="item"):
        hdsl.evaluate(hdsl.parse("cap + item"), {"cap": 1})


def test_comparisons_are_reals():
    env = {"a": 1.0, "b": 2.0}
    assert [hdsl.evaluate(hdsl.parse(f"{f}(a, b)"), env) for f in ("lt", "le", "gt", "ge", "eq")] == \
        [1.0, 1.0, 0.0, 0.0, 0.0]
    assert hdsl.evaluate(hdsl.parse("min(a, b) + max(a, b) + abs(-a)"), env) == 4.0


@pytest.mark.parametrize("text, n", [("cap", 1), ("cap - item", 3), ("min(cap, item) * 2", 5), ("-(-1)", 3)])
def test_complexity(text, n):
    assert hdsl.complexity(hdsl.parse(text)) == n


def test_number_literals_are_non_negative():
    with pytest.raises(ValueError):
        Number(-1.0)
    with pytest.raises(ValueError):
        Number(float("inf"))
    assert hdsl.to_text(Number(-0.0)) == "0"


def test_mutate_is_deterministic_and_closed():
    base = hdsl.parse("if(ge(cap, item), -(cap - item), -1000000)")
    a = hdsl.mutate(base, random.Random(5), VARS)
    b = hdsl.mutate(base, random.Random(5), VARS)
    assert a == b
    env = {"cap": 3.0, "item": 2.0, "index": 0.0, "n_bins": 1.0}
    for seed in range(500):
        out = hdsl.mutate(base, random.Random(seed), VARS)
        text = hdsl.to_text(out)
        assert hdsl.parse(text) == out
        assert hdsl.variables(out) <= set(VARS)
        try:
            hdsl.evaluate(out, env)
        except hdsl.DomainError:
            pass


def test_mutate_respects_max_size_10k():
    rng = random.Random(2024)
    expr = hdsl.parse("cap - item")
    for _ in range(10_000):
        out = hdsl.mutate(expr, rng, VARS)
        assert hdsl.complexity(out) <= hdsl.DEFAULT_MAX_SIZE
        # walk the chain so large trees are exercised, restarting now and then
        expr = out if rng.random() < 0.9 else hdsl.parse("cap - item")


def test_mutate_tight_bound_falls_back_to_leaf_edit():
    expr = hdsl.parse("min(cap, item) * 2")
    for seed in range(200):
        assert hdsl.complexity(hdsl.mutate(expr, random.Random(seed), VARS, max_size=5)) <= 5


# --- properties ----------------------------------------------------------------

numbers = st.floats(min_value=0, max_value=1e12, allow_nan=False, allow_infinity=False).map(Number)
leaves = st.one_of(numbers, st.sampled_from(VARS + ("x1", "min")).map(Var))


def _extend(children):
    binop = st.builds(BinOp, st.sampled_from(hdsl.BINARY_OPS), children, children)
    neg = st.builds(Neg, children)
    calls = [st.tuples(*[children] * ar).map(lambda args, fn=fn: Call(fn, args))
             for fn, ar in sorted(hdsl.FUNCTIONS.items())]
    return st.one_of(binop, neg, *calls)


exprs = st.recursive(leaves, _extend, max_leaves=20)


@settings(max_examples=300, deadline=None)
@given(exprs)
def test_round_trip_property(e):
    text = hdsl.to_text(e)
    assert hdsl.parse(text) == e
    assert hdsl.to_text(hdsl.parse(text)) == text


@settings(max_examples=200, deadline=None)
@given(exprs, st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_evaluate_is_pure_and_finite(e, x, y):
    env = {v: x for v in VARS} | {"x1": y, "min": y}
    try:
        first = hdsl.evaluate(e, env)
    except hdsl.DomainError:
        with pytest.raises(hdsl.DomainError):
            hdsl.evaluate(e, env)
        return
    assert first == hdsl.evaluate(e, env)
    assert first == first and abs(first) != float("inf")

import random

import pytest
from hypothesis import given, settings, strategies as st

from evoforge import hdsl
from evoforge.core import Kind
from evoforge.llmio import (
    API_KEY_ENV,
    BackendConfigError,
    CompletionRequest,
    HttpBackend,
    HttpConfig,
    RateLimited,
    ScriptExhausted,
    ScriptedBackend,
    SyntheticBackend,
    Transport,
    UnparseablePrompt,
    http_complete,
    read_script,
)
from evoforge.problems import BPP_VARS
from evoforge.prompting import (
    Example,
    ReflectivePromptSpec,
    VariationPromptSpec,
    output_contract,
    parse_candidates,
    parse_instruction,
    render_reflective_prompt,
    render_variation_prompt,
)


def req(text, cid="c1"):
    return CompletionRequest((("user", text),), correlation_id=cid)


def tsp_prompt(best="0,1,2,3,4,5", k=1):
    return render_variation_prompt(VariationPromptSpec(
        "Tour problem.", "Improve.", (Example("5,4,3,2,1,0", 9.0), Example(best, 6.0)),
        output_contract(Kind.SOLUTION, k), k))


def heur_prompt(best, max_size=64):
    problem = f"Variables: {', '.join(BPP_VARS)}\nMaximum expression size: {max_size} nodes"
    return render_variation_prompt(VariationPromptSpec(
        problem, "Improve.", (Example(best, 0.1),), output_contract(Kind.HEURISTIC, 1)))


def test_request_validation():
    with pytest.raises(ValueError):
        CompletionRequest((("system", "x"),))
    with pytest.raises(ValueError):
        CompletionRequest((("assistant", "x"), ("user", "y")))
    with pytest.raises(ValueError):
        CompletionRequest((("user", "y"),), temperature=-1)


def test_scripted_sequence_then_exhausted(tmp_path):
    path = tmp_path / "script.txt"
    path.write_text("first\n---\nsecond\nline\n", encoding="utf-8")
    assert read_script(path) == ["first", "second\nline"]
    b = ScriptedBackend.from_file(path)
    assert b.complete(req("a")) == "first"
    assert b.complete(req("b")) == "second\nline"
    with pytest.raises(ScriptExhausted):
        b.complete(req("c"))


def test_scripted_by_correlation_id():
    b = ScriptedBackend({"x": "one", "y": "two"})
    assert b.complete(req("p", "y")) == "two"
    assert b.complete(req("p", "x")) == "one"
    with pytest.raises(ScriptExhausted):
        b.complete(req("p", "z"))


def test_synthetic_tsp_is_deterministic_and_valid():
    b = SyntheticBackend(7)
    a1 = b.complete(req(tsp_prompt(k=3)))
    assert a1 == SyntheticBackend(7).complete(req(tsp_prompt(k=3)))
    got = parse_candidates(a1, Kind.SOLUTION, 3, n_cities=6)
    assert len(got) == 3
    assert all(sorted(c.payload.order) == list(range(6)) for c in got)
    assert any(b.complete(req(tsp_prompt(), f"id{i}")) != b.complete(req(tsp_prompt(), "c1")) for i in range(10))


def test_synthetic_reflection_rewrites_suffix():
    text = render_reflective_prompt(ReflectivePromptSpec("Swap cities.", (), (3.0,)))
    first = parse_instruction(SyntheticBackend(1).complete(req(text)))
    assert first.startswith("Swap cities. [rev ")
    again = render_reflective_prompt(ReflectivePromptSpec(first, (), (3.0,)))
    second = parse_instruction(SyntheticBackend(1).complete(req(again)))
    assert second.count("[rev ") == 1


def test_synthetic_rejects_unknown_prompts():
    with pytest.raises(UnparseablePrompt):
        SyntheticBackend().complete(req("hello"))


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32), expr_seed=st.integers(0, 2**16))
def test_synthetic_expressions_stay_in_language(seed, expr_seed):
    expr = hdsl.random_expr(random.Random(expr_seed), BPP_VARS, 3)
    response = SyntheticBackend(seed).complete(req(heur_prompt(hdsl.to_text(expr), max_size=40)))
    (child,) = parse_candidates(response, Kind.HEURISTIC, 1, max_size=40)
    assert hdsl.variables(child.payload) <= set(BPP_VARS)
    assert hdsl.complexity(child.payload) <= 40


def test_synthetic_expressions_10k_seeds():
    prompt = heur_prompt("cap - item")
    for seed in range(10_000):
        (child,) = parse_candidates(SyntheticBackend(seed).complete(req(prompt)), Kind.HEURISTIC, 1)
        assert hdsl.variables(child.payload) <= set(BPP_VARS)


def _cfg(url, **kw):
    return HttpConfig(base_url=url, model="stub", api_key="k", backoff_base=0.001,
                      rng=random.Random(0), sleep=lambda s: None, **kw)


def test_http_retries_then_succeeds(stub_server):
    s = stub_server([429, 429, 200], body="hello")
    assert http_complete(req("hi"), _cfg(s.url)) == "hello"
    assert len(s.requests) == 3
    path, body, headers = s.requests[0]
    assert path == "/v1/chat/completions"
    assert body["model"] == "stub" and body["messages"] == [{"role": "user", "content": "hi"}]
    assert headers["Authorization"] == "Bearer k"


def test_http_gives_up_after_max_attempts(stub_server):
    s = stub_server([500])
    with pytest.raises(Transport) as ei:
        http_complete(req("hi"), _cfg(s.url))
    assert ei.value.attempts == 5 and len(s.requests) == 5


def test_http_rate_limit_exhausts(stub_server):
    s = stub_server([429])
    with pytest.raises(RateLimited):
        http_complete(req("hi"), _cfg(s.url, max_attempts=2))
    assert len(s.requests) == 2


def test_http_client_error_is_not_retried(stub_server):
    s = stub_server([400])
    with pytest.raises(Transport) as ei:
        http_complete(req("hi"), _cfg(s.url))
    assert not ei.value.retriable and len(s.requests) == 1


def test_http_backoff_caps_grow():
    sleeps = []
    cfg = HttpConfig(base_url="http://127.0.0.1:9/v1", model="m", api_key="k", max_attempts=4,
                     backoff_base=1.0, timeout=0.2, rng=random.Random(1), sleep=sleeps.append)
    with pytest.raises(Transport):
        http_complete(req("hi"), cfg)
    assert len(sleeps) == 3
    assert all(0 <= s <= cap for s, cap in zip(sleeps, (1, 2, 4)))


def test_http_missing_key(stub_server, monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    s = stub_server([200])
    with pytest.raises(BackendConfigError):
        HttpBackend(HttpConfig(base_url=s.url, model="m"))
    with pytest.raises(BackendConfigError):
        http_complete(req("hi"), HttpConfig(base_url=s.url, model="m"))
    assert s.requests == []


def test_http_key_from_environment(stub_server, monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "envkey")
    s = stub_server([200], body="ok")
    b = HttpBackend(HttpConfig(base_url=s.url, model="m"))
    try:
        assert b.complete(req("hi")) == "ok"
    finally:
        b.close()
    assert s.requests[0][2]["Authorization"] == "Bearer envkey"

"""Completion backends: HTTP chat API, scripted playback, and a deterministic
synthetic operator for offline runs."""

from __future__ import annotations

import enum
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

from . import hdsl
from .problems import digest64
from .prompting import (
    HEURISTIC_CONTRACT_MARK,
    SOLUTION_CONTRACT_MARK,
    section,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "EVOFORGE_API_KEY"
SCRIPT_SEPARATOR = "---"


class Role(str, enum.Enum):
    VARIATION = "variation"
    REFLECTIVE = "reflective"


class BackendError(Exception):
    retriable = False


class Timeout(BackendError):
    retriable = True


class RateLimited(BackendError):
    retriable = True


class Transport(BackendError):
    retriable = True


class ScriptExhausted(BackendError):
    pass


class UnparseablePrompt(BackendError):
    pass


class BackendConfigError(BackendError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple  # ((role, text), ...)
    temperature: float = 1.0
    max_tokens: int = 1024
    correlation_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple((r, t) for r, t in self.messages))
        if not any(r == "user" for r, _ in self.messages):
            raise ValueError("a completion request needs at least one user message")
        if any(r not in ("system", "user") for r, _ in self.messages):
            raise ValueError("message roles must be 'system' or 'user'")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def prompt(self) -> str:
        """Concatenated user text."""
        return "\n".join(t for r, t in self.messages if r == "user")


class Backend(Protocol):
    def complete(self, req: CompletionRequest) -> str: ...


# --- scripted ----------------------------------------------------------------


def read_script(path) -> list[str]:
    """Records separated by lines containing only ``---``."""
    records, cur = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() == SCRIPT_SEPARATOR:
            records.append("\n".join(cur))
            cur = []
        else:
            cur.append(line)
    if cur:
        records.append("\n".join(cur))
    return records


class ScriptedBackend:
    """Plays back canned responses in call order, or by correlation id when
    built from a mapping."""

    def __init__(self, responses):
        self._lock = threading.Lock()
        if isinstance(responses, dict):
            self._by_id = dict(responses)
            self._queue = None
        else:
            self._by_id = None
            self._queue = list(responses)
        self.calls = 0

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        return cls(read_script(path))

    def complete(self, req: CompletionRequest) -> str:
        with self._lock:
            self.calls += 1
            if self._by_id is not None:
                if req.correlation_id not in self._by_id:
                    raise ScriptExhausted(f"no scripted response for {req.correlation_id!r}")
                return self._by_id[req.correlation_id]
            if not self._queue:
                raise ScriptExhausted(f"script exhausted after {self.calls - 1} responses")
            return self._queue.pop(0)


# --- synthetic ---------------------------------------------------------------

_REV_SUFFIX = re.compile(r"\s*\[rev [0-9a-f]{6}\]$")


def _request_rng(seed: int, req: CompletionRequest) -> random.Random:
    key = digest64(f"{seed}\n{req.correlation_id}\n{req.prompt}")
    return random.Random(int(key, 16))


def _reverse_segment(order: list, rng: random.Random) -> list:
    i, j = sorted(rng.sample(range(len(order)), 2))
    return order[:i] + order[i:j + 1][::-1] + order[j + 1:]


def _swap(order: list, rng: random.Random) -> list:
    i, j = rng.sample(range(len(order)), 2)
    out = list(order)
    out[i], out[j] = out[j], out[i]
    return out


def synthetic_complete(req: CompletionRequest, seed: int) -> str:
    """Behave like a cautious mutation operator.

    Variation prompts: edit the best (last) example once per requested
    offspring.  Reflective prompts: echo the current instruction with a fresh
    revision token.
    """
    prompt = req.prompt
    rng = _request_rng(seed, req)

    current = section(prompt, "Current instruction")
    if current is not None:
        base = _REV_SUFFIX.sub("", current.strip())
        return f"<instruction>{base} [rev {rng.getrandbits(24):06x}]</instruction>"

    examples = section(prompt, "Examples")
    if not examples or not examples.strip():
        raise UnparseablePrompt("prompt has no examples section")
    best = examples.strip().splitlines()[-1].split(" cost=")[0].strip()
    m = re.search(r"Return (\d+) new", prompt)
    k = int(m.group(1)) if m else 1

    out = []
    if SOLUTION_CONTRACT_MARK in prompt:
        try:
            order = [int(t) for t in best.split(",")]
        except ValueError:
            raise UnparseablePrompt(f"best example is not a tour: {best!r}") from None
        for _ in range(k):
            if len(order) < 2:
                child = order
            elif rng.random() < 0.5:
                child = _reverse_segment(order, rng)
            else:
                child = _swap(order, rng)
            out.append("<candidate>" + ",".join(map(str, child)) + "</candidate>")
    elif HEURISTIC_CONTRACT_MARK in prompt:
        try:
            expr = hdsl.parse(best)
        except hdsl.DslError as exc:
            raise UnparseablePrompt(f"best example does not parse: {exc}") from None
        vm = re.search(r"^Variables: (.*)$", prompt, re.M)
        vars = [v.strip() for v in vm.group(1).split(",")] if vm else sorted(hdsl.variables(expr))
        sm = re.search(r"^Maximum expression size: (\d+)", prompt, re.M)
        max_size = int(sm.group(1)) if sm else hdsl.DEFAULT_MAX_SIZE
        for _ in range(k):
            child = hdsl.mutate(expr, rng, vars, max_size=max_size)
            out.append(f"<candidate>{hdsl.to_text(child)}</candidate>")
    else:
        raise UnparseablePrompt("prompt has no recognised output format")
    return "Here is my proposal.\n" + "\n".join(out) + "\n"


class SyntheticBackend:
    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, req: CompletionRequest) -> str:
        return synthetic_complete(req, self.seed)


# --- HTTP --------------------------------------------------------------------


@dataclass
class HttpConfig:
    base_url: str
    model: str
    api_key: str | None = None
    timeout: float = 60.0
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    max_inflight: int = 4
    rng: random.Random = field(default_factory=random.Random)
    sleep: object = time.sleep


def _classify(resp: httpx.Response) -> BackendError | None:
    if resp.status_code == 429:
        return RateLimited(f"HTTP 429 from {resp.request.url}")
    if resp.status_code >= 500:
        return Transport(f"HTTP {resp.status_code} from {resp.request.url}")
    if resp.status_code >= 400:
        err = Transport(f"HTTP {resp.status_code} from {resp.request.url}: {resp.text[:200]}")
        err.retriable = False
        return err
    return None


def http_complete(req: CompletionRequest, cfg: HttpConfig, client: httpx.Client | None = None,
                  semaphore: threading.Semaphore | None = None) -> str:
    """POST a chat-completions request with retry and full-jitter backoff."""
    api_key = cfg.api_key or os.environ.get(API_KEY_ENV)
    if not api_key:
        raise BackendConfigError(f"no API key: set {API_KEY_ENV}")
    body = {
        "model": cfg.model,
        "messages": [{"role": r, "content": t} for r, t in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    headers = {"Authorization": f"Bearer {api_key}"}
    own_client = client is None
    client = client or httpx.Client(timeout=cfg.timeout)
    last: BackendError | None = None
    try:
        for attempt in range(cfg.max_attempts):
            if attempt:
                cap = cfg.backoff_base * cfg.backoff_factor ** (attempt - 1)
                cfg.sleep(cfg.rng.uniform(0, cap))
            try:
                if semaphore is not None:
                    with semaphore:
                        resp = client.post(url, json=body, headers=headers)
                else:
                    resp = client.post(url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last = Timeout(f"timeout talking to {url}: {exc}")
            except httpx.TransportError as exc:
                last = Transport(f"transport error talking to {url}: {exc}")
            else:
                last = _classify(resp)
                if last is None:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError):
                        raise Transport(f"malformed completion body from {url}") from None
            log.warning("attempt %d/%d for %s failed: %s", attempt + 1, cfg.max_attempts,
                        req.correlation_id, last)
            if not last.retriable:
                break
        last.attempts = attempt + 1
        raise last
    finally:
        if own_client:
            client.close()


class HttpBackend:
    def __init__(self, cfg: HttpConfig):
        if not (cfg.api_key or os.environ.get(API_KEY_ENV)):
            raise BackendConfigError(f"no API key: set {API_KEY_ENV}")
        self.cfg = cfg
        self._client = httpx.Client(timeout=cfg.timeout)
        self._sem = threading.Semaphore(cfg.max_inflight)

    def complete(self, req: CompletionRequest) -> str:
        return http_complete(req, self.cfg, self._client, self._sem)

    def close(self):
        self._client.close()

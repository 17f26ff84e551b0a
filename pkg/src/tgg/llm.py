"""Chat-completion transport with content-addressed caching and mock backends."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .graph import Scenario
from .prompts import PromptBundle, py_string, relation_lines

log = logging.getLogger(__name__)

API_KEY_ENV = "TGG_API_KEY"
TRANSIENT_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class GenerationParams:
    model: str
    temperature: float = 0.0
    max_tokens: int = 1024
    stop: tuple[str, ...] = ("# END",)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stop"] = list(self.stop)
        return d


class CompletionError(RuntimeError):
    def __init__(self, message: str, status: int | None = None, key: str = ""):
        super().__init__(f"{message} (status={status}, request={key[:12]})")
        self.status = status
        self.key = key


class CacheMiss(KeyError):
    pass


def request_key(params: GenerationParams, messages: Sequence[Mapping]) -> str:
    payload = json.dumps({"params": params.to_dict(), "messages": list(messages)}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Directory of ``<sha256>.json`` files; concurrent readers, serialized writers."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> dict | None:
        try:
            return json.loads(self.path(key).read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put(self, key: str, entry: dict) -> None:
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(entry, f, ensure_ascii=False, indent=1)
            os.replace(tmp, self.path(key))

    def __contains__(self, key: str) -> bool:
        return self.path(key).exists()


class Backend(Protocol):
    def send(self, messages: list[dict], params: GenerationParams, bundle: PromptBundle) -> tuple[str, dict]:
        ...


class OpenAIBackend:
    """Any endpoint speaking the OpenAI ``/chat/completions`` JSON protocol."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_retries: int = 5,
        backoff: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.max_retries = max_retries
        self.backoff = backoff
        self.sleep = sleep
        self.client = httpx.Client(timeout=timeout, transport=transport)

    def send(self, messages, params, bundle=None):
        body = {
            "model": params.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.stop:
            body["stop"] = list(params.stop)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        key = request_key(params, messages)
        status = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self.client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
            except httpx.TransportError as err:
                log.warning("transport error on attempt %d: %s", attempt + 1, err)
                status = None
            else:
                status = resp.status_code
                if status == 200:
                    data = resp.json()
                    choice = data["choices"][0]
                    text = (choice.get("message") or {}).get("content") or ""
                    return text, data.get("usage", {})
                refusal = _content_filter_text(resp)
                if refusal is not None:
                    return refusal, {}
                if status not in TRANSIENT_STATUS:
                    raise CompletionError(f"endpoint returned {status}: {resp.text[:200]}", status, key)
            if attempt < self.max_retries:
                self.sleep(self.backoff * 2**attempt)
        raise CompletionError(f"gave up after {self.max_retries + 1} attempts", status, key)


def _content_filter_text(resp: httpx.Response) -> str | None:
    if resp.status_code != 400:
        return None
    try:
        err = resp.json().get("error", {})
    except ValueError:
        return None
    if isinstance(err, Mapping) and err.get("code") == "content_filter":
        return str(err.get("message", ""))
    return None


class LLMClient:
    """Cache-first completion with a bounded number of in-flight requests."""

    def __init__(self, backend: Backend | None, cache: ResponseCache, max_in_flight: int = 8, offline: bool = False):
        self.backend = backend
        self.cache = cache
        self.offline = offline or backend is None
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._count_lock = threading.Lock()
        self.network_calls = 0

    def complete(self, bundle: PromptBundle, params: GenerationParams) -> str:
        messages = bundle.chat_messages()
        key = request_key(params, messages)
        hit = self.cache.get(key)
        if hit is not None:
            return hit["completion"]
        if self.offline:
            raise CacheMiss(key)
        with self._slots:
            text, usage = self.backend.send(messages, params, bundle)
        with self._count_lock:
            self.network_calls += 1
        self.cache.put(
            key,
            {
                "key": key,
                "model": params.model,
                "params": params.to_dict(),
                "messages": messages,
                "completion": text,
                "usage": usage,
                "timestamp": time.time(),
            },
        )
        return text

    def diverges(self, bundle: PromptBundle, params: GenerationParams) -> bool:
        """Re-query the backend and report whether it disagrees with the cached completion."""
        messages = bundle.chat_messages()
        cached = self.cache.get(request_key(params, messages))
        if cached is None or self.backend is None:
            return False
        fresh, _ = self.backend.send(messages, params, bundle)
        return fresh != cached["completion"]


# ---- mock backend ----------------------------------------------------------

REFUSAL_TEXT = "I'm sorry, but I cannot help with that request."
MOCK_POLICIES = ("gold", "random_chain", "refusal", "scripted")


def _topological(scenario: Scenario) -> list[str]:
    import networkx as nx

    g = scenario.gold_graph().to_networkx()
    rank = {eid: i for i, eid in enumerate(scenario.event_ids)}
    return list(nx.lexicographical_topological_sort(g, key=rank.__getitem__))


def _narrative_for(scenario: Scenario, order: Sequence[str]) -> str:
    parts = [scenario.description_of(e) for e in order]
    return "First, " + parts[0] + ". " + " ".join(f"Then, {p}." for p in parts[1:])


def _return_list(lines: Sequence[str]) -> str:
    body = "".join(f"    {py_string(r)},\n" for r in lines)
    return "return [\n" + body + "]"


@dataclass
class MockBackend:
    """Deterministic, network-free completions.

    ``gold`` answers with the scenario's gold relations (plus a narrative
    for narrative prompts), ``random_chain`` links the events in the order
    the prompt presents them, ``refusal`` always declines, and ``scripted``
    looks completions up in ``fixtures`` by scenario id (a string or a list
    consumed one per call).
    """

    policy: str
    scenarios: Mapping[str, Scenario] = field(default_factory=dict)
    fixtures: Mapping[str, object] = field(default_factory=dict)
    calls: int = 0

    def __post_init__(self):
        if self.policy not in MOCK_POLICIES:
            raise ValueError(f"unknown mock policy {self.policy!r}")
        self._lock = threading.Lock()
        self._cursor: dict[str, int] = {}

    def send(self, messages, params, bundle):
        with self._lock:
            self.calls += 1
        if self.policy == "refusal":
            return REFUSAL_TEXT, {}
        if self.policy == "scripted":
            return self._scripted(bundle.scenario_id), {}
        scenario = self.scenarios[bundle.scenario_id]
        if bundle.method == "meta":
            return _narrative_for(scenario, _topological(scenario)), {}
        if bundle.method == "judge":
            n = len(scenario.gold_edges)
            return f"Answer: yes\nRationale: the graph follows the narrative.\nTemporal links: {n}\nCorrect temporal links: {n}", {}
        if self.policy == "gold":
            lines = relation_lines(scenario.gold_edges, bundle.assignment)
            order = _topological(scenario)
        else:
            order = list(bundle.presentation_order)
            inv = bundle.assignment.inverse()
            lines = [f"{inv[a]} -> {inv[b]}" for a, b in zip(order[:-1], order[1:])]
        text = _return_list(lines)
        if bundle.method == "not":
            narrative = _narrative_for(scenario, order)
            body = text.replace("\n", "\n    ")
            text = f"def get_narrative(self):\n    return {py_string(narrative)}\n\ndef get_relations(self):\n    {body}"
        return text, {}

    def _scripted(self, scenario_id: str) -> str:
        entry = self.fixtures[scenario_id]
        if isinstance(entry, str):
            return entry
        with self._lock:
            k = self._cursor.get(scenario_id, 0)
            self._cursor[scenario_id] = k + 1
        return entry[min(k, len(entry) - 1)]

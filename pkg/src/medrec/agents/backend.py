"""Chat-completion backend contract, a scripted mock and an OpenAI-compatible HTTP client."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import httpx

from ..errors import BackendError, ConfigError

log = logging.getLogger(__name__)

STAGES = ("summarize", "generate", "critique", "verify", "direct")


@dataclass(frozen=True)
class Completion:
    text: str
    in_tokens: int
    out_tokens: int
    latency: float


class LlmBackend(Protocol):
    def complete(
        self,
        system: str,
        user: str,
        temperature: float = 0.0,
        max_tokens: int = 2048,
        meta: Mapping[str, Any] | None = None,
    ) -> Completion:
        """``meta`` carries stage/case/expert ids and a structured payload; real backends ignore it."""
        ...


@dataclass(frozen=True)
class StageSettings:
    temperatures: Mapping[str, float] = field(
        default_factory=lambda: {"summarize": 0.0, "generate": 0.2, "critique": 0.0, "verify": 0.0, "direct": 0.0}
    )
    max_tokens: int = 2048

    def temperature(self, stage: str) -> float:
        return float(self.temperatures.get(stage, 0.0))


@dataclass(frozen=True)
class CallRecord:
    stage: str
    expert_id: str | None
    in_tokens: int
    out_tokens: int
    seconds: float
    ok: bool = True

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class CallLog:
    """Thread-safe append-only record of backend calls for one case."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: list[CallRecord] = []

    def add(self, record: CallRecord) -> None:
        with self._lock:
            self._records.append(record)

    @property
    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._records)


def prompt_hash(system: str, user: str) -> str:
    return hashlib.sha256(f"{system}\x00{user}".encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    return max(1, math.ceil(len(text) / 4))


Responder = Callable[[Mapping[str, Any], str, str], str]


class MockBackend:
    """Deterministic backend driven by a fixture table and per-stage default responders.

    Fixtures are looked up by the sha256 of ``system\\0user`` first, then by
    ``stage/caseId/expertId`` and ``stage/caseId``. A fixture value is either raw
    text, a JSON-able object (serialized with sorted keys) or ``{"error": msg}``
    to simulate a backend failure. Latency is reported as 0.0 so that traces stay
    byte-identical across runs.
    """

    def __init__(
        self,
        fixtures: Mapping[str, Any] | None = None,
        responders: Mapping[str, Responder] | None = None,
        use_defaults: bool = True,
    ):
        self.fixtures = dict(fixtures or {})
        if responders is None and use_defaults:
            from .mock_policy import DEFAULT_RESPONDERS

            responders = DEFAULT_RESPONDERS
        self.responders = dict(responders or {})

    @classmethod
    def from_file(cls, path: str | Path, use_defaults: bool = True) -> MockBackend:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data.get("fixtures", data), use_defaults=use_defaults)

    def _fixture(self, system: str, user: str, meta: Mapping[str, Any]) -> Any:
        stage, case, expert = meta.get("stage"), meta.get("case_id"), meta.get("expert_id")
        for key in (prompt_hash(system, user), f"{stage}/{case}/{expert}", f"{stage}/{case}"):
            if key in self.fixtures:
                return self.fixtures[key]
        return None

    def complete(
        self,
        system: str,
        user: str,
        temperature: float = 0.0,
        max_tokens: int = 2048,
        meta: Mapping[str, Any] | None = None,
    ) -> Completion:
        meta = meta or {}
        value = self._fixture(system, user, meta)
        if value is None:
            responder = self.responders.get(str(meta.get("stage")))
            if responder is None:
                raise BackendError(f"no fixture or responder for stage {meta.get('stage')!r}")
            text = responder(meta, system, user)
        elif isinstance(value, str):
            text = value
        elif isinstance(value, Mapping) and set(value) == {"error"}:
            raise BackendError(str(value["error"]))
        else:
            text = json.dumps(value, sort_keys=True)
        return Completion(text, estimate_tokens(system) + estimate_tokens(user), estimate_tokens(text), 0.0)


class HttpBackend:
    """OpenAI-compatible ``/chat/completions`` client; the key is read from an environment variable."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "MEDREC_API_KEY",
        timeout: float = 120.0,
        retries: int = 2,
    ):
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.model = model
        key = os.environ.get(api_key_env)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self.client = httpx.Client(timeout=timeout, headers=headers)
        self.retries = retries

    def complete(
        self,
        system: str,
        user: str,
        temperature: float = 0.0,
        max_tokens: int = 2048,
        meta: Mapping[str, Any] | None = None,
    ) -> Completion:
        body = {
            "model": self.model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            t0 = time.perf_counter()
            try:
                resp = self.client.post(self.url, json=body)
                resp.raise_for_status()
                data = resp.json()
                text = data["choices"][0]["message"]["content"] or ""
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = exc
                log.warning("backend call failed (attempt %d): %s", attempt + 1, exc)
                if attempt < self.retries:
                    time.sleep(min(2**attempt, 8))
                continue
            latency = time.perf_counter() - t0
            usage = data.get("usage") or {}
            return Completion(
                text,
                int(usage.get("prompt_tokens", estimate_tokens(system + user))),
                int(usage.get("completion_tokens", estimate_tokens(text))),
                latency,
            )
        raise BackendError(f"backend unavailable after {self.retries + 1} attempts: {last}")


class BoundedBackend:
    """Caps the number of in-flight calls to a shared backend."""

    def __init__(self, backend: LlmBackend, limit: int = 4):
        if limit < 1:
            raise ConfigError("concurrency limit must be >= 1")
        self.backend = backend
        self._sem = threading.BoundedSemaphore(limit)

    def complete(self, system: str, user: str, temperature: float = 0.0, max_tokens: int = 2048, meta=None) -> Completion:
        with self._sem:
            return self.backend.complete(system, user, temperature, max_tokens, meta=meta)


def backend_from_config(cfg: Mapping[str, Any], base: Path | None = None) -> LlmBackend:
    kind = cfg.get("kind", "mock")
    if kind == "mock":
        path = cfg.get("fixtures")
        if path:
            path = Path(path)
            if not path.is_absolute() and base is not None:
                path = base / path
            return MockBackend.from_file(path, use_defaults=cfg.get("defaults", True))
        return MockBackend(use_defaults=cfg.get("defaults", True))
    if kind == "http":
        try:
            return HttpBackend(
                cfg["endpoint"],
                cfg["model"],
                cfg.get("api_key_env", "MEDREC_API_KEY"),
                timeout=float(cfg.get("timeout", 120.0)),
                retries=int(cfg.get("retries", 2)),
            )
        except KeyError as exc:
            raise ConfigError(f"http backend needs {exc}") from exc
    raise ConfigError(f"unknown backend kind {kind!r}")

"""Chat-completions client for the teacher endpoint, plus a replay store.

One wire protocol (OpenAI-compatible chat completions) covers the teacher
and the student servers. The replay backend serves recorded transcripts for
fully deterministic offline runs and never falls through to a live call.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import requests

from .errors import PipelineError


class EndpointUnavailable(PipelineError):
    pass


class AuthFailure(PipelineError):
    pass


class UnknownPrompt(PipelineError):
    pass


class CorruptStore(PipelineError):
    pass


@dataclass(frozen=True)
class SamplingParams:
    """Decoding parameters; n_paths is the reasoning-path count per question.

    The default temperature/top_p are assumptions (the teacher setup is not
    pinned anywhere authoritative) and are recorded in teacher_meta.
    """

    temperature: float = 0.7
    top_p: float = 1.0
    max_tokens: int = 1024
    n_paths: int = 4
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for a chat-completions endpoint."""

    base_url: str
    model_name: str
    api_key_env_var: Optional[str] = None
    request_timeout: float = 60.0
    max_retries: int = 3
    backoff_schedule: Sequence[float] = (0.5, 1.0, 2.0)
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    def api_key(self) -> Optional[str]:
        if not self.api_key_env_var:
            return None
        key = os.environ.get(self.api_key_env_var)
        if key is None:
            raise AuthFailure(f"environment variable {self.api_key_env_var} is not set")
        return key


@dataclass(frozen=True)
class Completion:
    text: str
    truncated: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "truncated": self.truncated}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Completion":
        return cls(text=str(data["text"]), truncated=bool(data.get("truncated", False)))


class ClientStats:
    """Thread-safe request/retry counters."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.requests = 0
        self.retries = 0

    def count_request(self) -> None:
        with self._lock:
            self.requests += 1

    def count_retry(self) -> None:
        with self._lock:
            self.retries += 1


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _entry_checksum(prompt_sha256: str, params: Mapping[str, Any], completions: list[dict]) -> str:
    payload = json.dumps(
        {"completions": completions, "params": dict(params), "prompt_sha256": prompt_sha256},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ReplayStore:
    """Append-only JSONL transcript store keyed by prompt hash.

    Lookup of an unrecorded prompt raises UnknownPrompt; a corrupted line
    (checksum mismatch, bad JSON) raises CorruptStore at load time.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[str, list[Completion]] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    data = json.loads(line)
                    key = data["prompt_sha256"]
                    completions = data["completions"]
                    checksum = data["checksum"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CorruptStore(f"{self.path}:{lineno}: malformed entry") from exc
                expected = _entry_checksum(key, data.get("params", {}), completions)
                if checksum != expected:
                    raise CorruptStore(f"{self.path}:{lineno}: checksum mismatch")
                self._entries[key] = [Completion.from_dict(c) for c in completions]

    def __contains__(self, prompt: str) -> bool:
        return prompt_key(prompt) in self._entries

    def lookup(self, prompt: str) -> list[Completion]:
        key = prompt_key(prompt)
        if key not in self._entries:
            raise UnknownPrompt(f"no recorded completions for prompt hash {key[:12]}...")
        return list(self._entries[key])

    def record(
        self, prompt: str, params: SamplingParams, completions: Sequence[Completion]
    ) -> None:
        key = prompt_key(prompt)
        completion_dicts = [c.to_dict() for c in completions]
        entry = {
            "prompt_sha256": key,
            "params": params.to_dict(),
            "completions": completion_dicts,
            "checksum": _entry_checksum(key, params.to_dict(), completion_dicts),
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")
        self._entries[key] = list(completions)


def post_chat_completion(
    session: requests.Session,
    cfg: EndpointConfig,
    prompt: str,
    temperature: float,
    top_p: float,
    max_tokens: int,
    seed: Optional[int] = None,
    stats: Optional[ClientStats] = None,
) -> Completion:
    """One chat request with retries on transport errors, 429, and 5xx."""
    payload: dict[str, Any] = {
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
        "top_p": top_p,
        "max_tokens": max_tokens,
    }
    if seed is not None:
        payload["seed"] = seed
    headers = {"Content-Type": "application/json"}
    key = cfg.api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    url = cfg.base_url.rstrip("/") + "/chat/completions"

    last_error = "no attempt made"
    for attempt in range(cfg.max_retries + 1):
        if attempt > 0:
            delays = cfg.backoff_schedule
            time.sleep(delays[min(attempt - 1, len(delays) - 1)] if delays else 0.0)
            if stats:
                stats.count_retry()
        if stats:
            stats.count_request()
        try:
            response = session.post(url, json=payload, headers=headers, timeout=cfg.request_timeout)
        except requests.RequestException as exc:
            last_error = f"transport error: {exc}"
            continue
        if response.status_code in (401, 403):
            raise AuthFailure(f"endpoint rejected credentials (HTTP {response.status_code})")
        if response.status_code == 429 or response.status_code >= 500:
            last_error = f"HTTP {response.status_code}"
            continue
        if response.status_code != 200:
            raise EndpointUnavailable(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            body = response.json()
            choice = body["choices"][0]
            text = choice["message"]["content"]
            finish = choice.get("finish_reason")
        except (ValueError, KeyError, IndexError) as exc:
            raise EndpointUnavailable(f"malformed completion response: {exc}") from exc
        return Completion(text=text, truncated=finish == "length")
    raise EndpointUnavailable(f"retries exhausted after {cfg.max_retries + 1} attempts ({last_error})")


def check_health(base_url: str, timeout: float = 5.0) -> bool:
    url = base_url.rstrip("/") + "/health"
    try:
        return requests.get(url, timeout=timeout).status_code == 200
    except requests.RequestException:
        return False


class TeacherClient:
    """Issues n_paths sampled completions per prompt with bounded parallelism.

    Backends: "live" talks HTTP; "replay" serves only recorded transcripts;
    "record" talks HTTP and appends each transcript to the store.
    """

    def __init__(
        self,
        cfg: EndpointConfig,
        backend: str = "live",
        store: Optional[ReplayStore] = None,
        session: Optional[requests.Session] = None,
    ):
        if backend not in ("live", "replay", "record"):
            raise ValueError(f"unknown backend {backend!r}")
        if backend in ("replay", "record") and store is None:
            raise ValueError(f"backend {backend!r} requires a replay store")
        self.cfg = cfg
        self.backend = backend
        self.store = store
        self.session = session or requests.Session()
        self.stats = ClientStats()
        self._sem = threading.Semaphore(cfg.max_in_flight)

    def complete(self, prompt: str, params: SamplingParams) -> list[Completion]:
        """Return exactly n_paths completions in path order, or fail atomically."""
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if self.backend == "replay":
            assert self.store is not None
            completions = self.store.lookup(prompt)
            if len(completions) < params.n_paths:
                raise UnknownPrompt(
                    f"store has {len(completions)} completions, {params.n_paths} requested"
                )
            return completions[: params.n_paths]

        def one_path(path_index: int) -> Completion:
            seed = None if params.seed is None else params.seed + path_index
            with self._sem:
                return post_chat_completion(
                    self.session,
                    self.cfg,
                    prompt,
                    temperature=params.temperature,
                    top_p=params.top_p,
                    max_tokens=params.max_tokens,
                    seed=seed,
                    stats=self.stats,
                )

        with ThreadPoolExecutor(max_workers=params.n_paths) as pool:
            completions = list(pool.map(one_path, range(params.n_paths)))
        if self.backend == "record":
            assert self.store is not None
            self.store.record(prompt, params, completions)
        return completions

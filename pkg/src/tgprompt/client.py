"""Chat-completions client and deterministic offline mocks.

Every client exposes ``complete(bundle)`` and ``complete_batch(bundles)``
returning :class:`Completion` objects.  Batch results come back in input
order.  Per-query failures are recorded on the completion (``error``) so a
batch is never aborted, except for authentication failures which stop the
run.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

from .prompts import PromptBundle

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class ClientError(RuntimeError):
    pass


class AuthenticationError(ClientError):
    pass


class ResponseError(ClientError):
    pass


@dataclass
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "TGT_API_KEY"
    max_parallel: int = 8
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    max_tokens: int = 256
    backoff: float = 1.0

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def identity(self) -> dict:
        return {"kind": "http", "base_url": self.base_url, "model": self.model}


@dataclass
class Completion:
    query_id: int
    text: str
    latency_ms: float = 0.0
    attempt_count: int = 1
    error: str | None = None


class BaseClient:
    name = "client"

    def complete(self, bundle: PromptBundle) -> Completion:
        raise NotImplementedError

    def complete_batch(self, bundles: Sequence[PromptBundle]) -> list[Completion]:
        return [self._safe(b) for b in bundles]

    def _safe(self, bundle: PromptBundle) -> Completion:
        try:
            return self.complete(bundle)
        except AuthenticationError:
            raise
        except Exception as exc:  # recorded per query, the batch carries on
            return Completion(bundle.query_id, "", error=f"{type(exc).__name__}: {exc}")

    def identity(self) -> dict:
        return {"kind": "mock", "name": self.name}

    def close(self) -> None:
        pass


class ChatClient(BaseClient):
    """HTTP client for ``POST {base_url}/chat/completions``."""

    name = "llm"

    def __init__(
        self,
        config: EndpointConfig,
        transport: httpx.BaseTransport | None = None,
        transcript: str | Path | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        key = os.environ.get(config.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )
        self._sleep = sleep
        self._transcript = Path(transcript) if transcript else None
        self._lock = threading.Lock()

    def identity(self) -> dict:
        return self.config.identity()

    def request_body(self, bundle: PromptBundle) -> dict:
        messages = []
        if bundle.system:
            messages.append({"role": "system", "content": bundle.system})
        messages.append({"role": "user", "content": bundle.user})
        return {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }

    def complete(self, bundle: PromptBundle) -> Completion:
        body = self.request_body(bundle)
        start = time.perf_counter()
        attempts = 0
        while True:
            attempts += 1
            try:
                resp = self._http.post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                err: Exception = exc
            else:
                if resp.status_code in (401, 403):
                    raise AuthenticationError(
                        f"endpoint rejected credentials (HTTP {resp.status_code}); "
                        f"check ${self.config.api_key_env}"
                    )
                if resp.status_code not in RETRYABLE_STATUS:
                    if resp.is_error:
                        raise ResponseError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                    text = self._extract(resp)
                    done = Completion(
                        bundle.query_id,
                        text,
                        latency_ms=(time.perf_counter() - start) * 1000,
                        attempt_count=attempts,
                    )
                    self._log(body, done)
                    return done
                err = ResponseError(f"HTTP {resp.status_code}")
            if attempts > self.config.max_retries:
                raise ClientError(f"gave up after {attempts} attempts: {err}")
            delay = self.config.backoff * 2 ** (attempts - 1)
            log.debug("query %s attempt %d failed (%s); retrying in %.2fs", bundle.query_id, attempts, err, delay)
            self._sleep(delay)

    @staticmethod
    def _extract(resp: httpx.Response) -> str:
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise ResponseError(f"response has no completion text: {resp.text[:200]}") from None
        if not isinstance(content, str):
            raise ResponseError("completion content is not text")
        return content

    def complete_batch(self, bundles: Sequence[PromptBundle]) -> list[Completion]:
        if self.config.max_parallel == 1 or len(bundles) <= 1:
            return [self._safe(b) for b in bundles]
        with ThreadPoolExecutor(max_workers=self.config.max_parallel) as pool:
            return list(pool.map(self._safe, bundles))

    def _log(self, body: dict, done: Completion) -> None:
        if self._transcript is None:
            return
        line = json.dumps({"request": body, "response": asdict(done)})
        with self._lock, self._transcript.open("a") as fh:
            fh.write(line + "\n")

    def close(self) -> None:
        self._http.close()


def answer_text(dst: int) -> str:
    return f"`Destination Node' is {dst}."


_TUPLE = re.compile(r"\((\d+),(\d+),(\d+)\)")


def query_interactions(bundle: PromptBundle) -> list[tuple[int, int, int]]:
    """Tuples listed in the query block (the source's own past interactions)."""
    return [tuple(map(int, m)) for m in _TUPLE.findall(bundle.query)]


def background_edges(bundle: PromptBundle) -> list[tuple[int, int, int]]:
    return [tuple(map(int, m)) for m in _TUPLE.findall(bundle.background)]


class MockClient(BaseClient):
    """Deterministic in-process stand-in for an endpoint."""

    name = "mock"

    def respond(self, bundle: PromptBundle) -> str:
        raise NotImplementedError

    def complete(self, bundle: PromptBundle) -> Completion:
        return Completion(bundle.query_id, self.respond(bundle))


class PerfectMock(MockClient):
    """Answers with the true destination, looked up by query id."""

    name = "mock-perfect"

    def __init__(self, truth: Mapping[int, int]):
        self.truth = truth

    def respond(self, bundle):
        return answer_text(self.truth[bundle.query_id])


class WrongMock(MockClient):
    """Answers with a valid destination id that is never the true one."""

    name = "mock-wrong"

    def __init__(self, truth: Mapping[int, int], dst_space: range):
        self.truth = truth
        self.dst_space = dst_space

    def respond(self, bundle):
        true = self.truth[bundle.query_id]
        lo, size = self.dst_space.start, len(self.dst_space)
        return answer_text(lo + (true - lo + 1) % size)


class RecencyMock(MockClient):
    """Reads the prompt like a model would and names the latest partner.

    Uses the query block's interaction list when present; otherwise the
    latest background edge touching the source; otherwise the latest
    background destination.  With nothing to go on it declines to answer.
    """

    name = "mock-recency"

    def respond(self, bundle):
        pick = self.pick(bundle)
        if pick is None:
            return "I cannot determine the destination node."
        return answer_text(pick)

    def pick(self, bundle) -> int | None:
        own = query_interactions(bundle)
        if own:
            return own[-1][1]
        src = bundle.meta.get("src")
        bg = background_edges(bundle)
        for s, d, _ in reversed(bg):
            if s == src:
                return d
            if d == src:
                return s
        if bg:
            return bg[-1][1]
        return None


class FrequencyMock(RecencyMock):
    """Most frequent partner in the interaction list; ties go to the most recent."""

    name = "mock-frequency"

    def pick(self, bundle):
        own = query_interactions(bundle)
        if not own:
            return super().pick(bundle)
        counts = Counter(v for _, v, _ in own)
        last_seen = {v: i for i, (_, v, _) in enumerate(own)}
        return max(counts, key=lambda v: (counts[v], last_seen[v]))


class ScriptedMock(MockClient):
    """Replays completions keyed by query id from a JSONL file or mapping."""

    name = "mock-scripted"

    def __init__(self, script: Mapping[int, str]):
        self.script = dict(script)

    @classmethod
    def from_file(cls, path: str | Path, field: str = "text") -> "ScriptedMock":
        script = {}
        with Path(path).open() as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    script[int(rec["query_id"])] = str(rec[field])
        return cls(script)

    def respond(self, bundle):
        try:
            return self.script[bundle.query_id]
        except KeyError:
            raise ResponseError(f"no scripted completion for query {bundle.query_id}") from None


MOCKS = ("perfect", "wrong", "recency", "frequency", "scripted")

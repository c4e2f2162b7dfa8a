"""Chat-completion client, prompt rendering, and teacher-response parsing.

The client speaks the de-facto chat-completions wire protocol and is fully
injectable (transport, clock, sleep) so retry and rate-limit behavior are
testable with no network.  Every exchange can be appended to a JSONL
transcript; ReplayClient serves those transcripts back for hermetic runs.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from .prompts import PLACEHOLDER_NAMES, PromptTemplate


class TeacherError(Exception):
    pass


class TransportError(TeacherError):
    pass


class RateLimitExhaustedError(TeacherError):
    pass


class BadResponseShapeError(TeacherError):
    pass


class UnboundPlaceholderError(TeacherError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"unbound placeholder {{{name}}}")


class NoBlockFoundError(TeacherError):
    pass


class NoIntegerFoundError(TeacherError):
    pass


# ---------------------------------------------------------------------------
# Prompt rendering
# ---------------------------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDER_NAMES) + r")\}")


def render_prompt(tpl: PromptTemplate, bindings: dict) -> str:
    """Byte-exact substitution of the template's placeholders."""
    needed = set(_PLACEHOLDER_RE.findall(tpl.body))
    missing = sorted(needed - set(bindings))
    if missing:
        raise UnboundPlaceholderError(missing[0])
    return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), tpl.body)


# ---------------------------------------------------------------------------
# Chat client
# ---------------------------------------------------------------------------


@dataclass
class ChatRequest:
    model_id: str
    messages: list
    temperature: float = 0.7
    max_tokens: int = 2048

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a request needs at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


def request_key(model_id: str, messages: list) -> str:
    """Stable lookup key for transcript replay: model + messages only."""
    blob = json.dumps({"model": model_id, "messages": messages}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _default_transport(url: str, headers: dict, payload: dict, timeout: float):
    import requests

    try:
        resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    try:
        body = resp.json()
    except ValueError:
        body = None
    return resp.status_code, body


class RateLimiter:
    """Sliding-window requests-per-minute limiter with injectable clock.
    The one synchronized component: safe under concurrent senders."""

    def __init__(self, rpm: int, clock: Callable[[], float], sleep: Callable[[float], None]) -> None:
        self.rpm = rpm
        self._clock = clock
        self._sleep = sleep
        self._sent: deque = deque()
        self._lock = threading.Lock()

    def wait_turn(self) -> None:
        if self.rpm <= 0:
            return
        while True:
            with self._lock:
                now = self._clock()
                while self._sent and now - self._sent[0] >= 60.0:
                    self._sent.popleft()
                if len(self._sent) < self.rpm:
                    self._sent.append(now)
                    return
                wait = self._sent[0] + 60.0 - now
            self._sleep(wait)


class ChatClient:
    """Client for a chat-completions endpoint with retry and rate limiting."""

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        model: str = "",
        *,
        temperature: float = 0.7,
        max_tokens: int = 2048,
        rpm: int = 60,
        max_retries: int = 5,
        backoff_base: float = 1.0,
        timeout: float = 120.0,
        transport: Optional[Callable] = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        transcript_path: Optional[str] = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.transport = transport or _default_transport
        self.sleep = sleep
        self.limiter = RateLimiter(rpm, clock, sleep)
        self.transcript_path = transcript_path
        self.retry_count = 0
        self.request_count = 0

    def chat(self, req: ChatRequest) -> str:
        url = f"{self.endpoint}/v1/chat/completions"
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        payload = {
            "model": req.model_id,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        attempt = 0
        while True:
            self.limiter.wait_turn()
            self.request_count += 1
            status, body = self.transport(url, headers, payload, self.timeout)
            if status == 429 or 500 <= status <= 599:
                if attempt >= self.max_retries:
                    raise RateLimitExhaustedError(f"gave up after {attempt} retries (status {status})")
                self.sleep(self.backoff_base * (2**attempt))
                attempt += 1
                self.retry_count += 1
                continue
            if status != 200:
                raise TransportError(f"unexpected status {status}")
            try:
                content = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError):
                raise BadResponseShapeError(f"malformed response body: {body!r}")
            if not isinstance(content, str):
                raise BadResponseShapeError("message content is not text")
            self._log(req, content)
            return content

    def complete(self, prompt: str, *, temperature: Optional[float] = None) -> str:
        req = ChatRequest(
            model_id=self.model,
            messages=[{"role": "user", "content": prompt}],
            temperature=self.temperature if temperature is None else temperature,
            max_tokens=self.max_tokens,
        )
        return self.chat(req)

    def _log(self, req: ChatRequest, resp: str) -> None:
        if not self.transcript_path:
            return
        record = {"req": req.to_json(), "resp": resp, "ts": datetime.now(timezone.utc).isoformat()}
        with open(self.transcript_path, "a") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def chat(req: ChatRequest, endpoint: str, credentials: str, **client_kwargs) -> str:
    """One-shot completion against an endpoint; see ChatClient for the retry
    and rate-limit behavior."""
    return ChatClient(endpoint, api_key=credentials, model=req.model_id, **client_kwargs).chat(req)


class ReplayClient:
    """Serves canned responses from transcript JSONL files; no network.

    Responses for identical requests are consumed FIFO, repeating the last
    one once exhausted (so reruns and reprompts both replay cleanly)."""

    def __init__(self, transcript_paths) -> None:
        if isinstance(transcript_paths, (str, Path)):
            transcript_paths = [transcript_paths]
        self.model = ""
        self.temperature = 0.7
        self._responses: dict = {}
        self.request_count = 0
        for path in transcript_paths:
            with open(path) as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    req = rec["req"]
                    key = request_key(req["model_id"], req["messages"])
                    self._responses.setdefault(key, deque()).append(rec["resp"])
                    self.model = self.model or req["model_id"]

    def chat(self, req: ChatRequest) -> str:
        key = request_key(req.model_id, req.messages)
        queue = self._responses.get(key)
        if not queue:
            raise TransportError(f"no transcript entry for request {key[:12]}")
        self.request_count += 1
        if len(queue) > 1:
            return queue.popleft()
        return queue[0]

    def complete(self, prompt: str, *, temperature: Optional[float] = None) -> str:
        return self.chat(
            ChatRequest(model_id=self.model, messages=[{"role": "user", "content": prompt}])
        )


def write_transcript(path, entries) -> None:
    """Append (model_id, messages, resp) triples as transcript records."""
    with open(path, "a") as fh:
        for model_id, messages, resp in entries:
            req = ChatRequest(model_id=model_id, messages=messages)
            record = {"req": req.to_json(), "resp": resp, "ts": "1970-01-01T00:00:00+00:00"}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------


def _fenced_blocks(text: str) -> list:
    """(tag, content) for every fenced block; an unclosed final fence counts."""
    blocks = []
    tag = None
    buf: list = []
    for line in text.splitlines():
        stripped = line.strip()
        if tag is None:
            if stripped.startswith("```"):
                tag = stripped[3:].strip().lower()
                buf = []
        else:
            if stripped == "```":
                blocks.append((tag, "\n".join(buf).strip()))
                tag = None
            else:
                buf.append(line)
    if tag is not None and buf:
        blocks.append((tag, "\n".join(buf).strip()))
    return blocks


def extract_fenced_block(text: str, tag: str) -> str:
    """Content of the last fenced block with the tag; falls back to the last
    untagged block."""
    blocks = _fenced_blocks(text)
    want = tag.lower()
    tagged = [content for t, content in blocks if t == want]
    if tagged:
        return tagged[-1]
    untagged = [content for t, content in blocks if t == ""]
    if untagged:
        return untagged[-1]
    raise NoBlockFoundError(f"no ```{tag} block found")


_INT_RE = re.compile(r"^[+-]?\d+$")


def parse_last_line_integer(text: str) -> int:
    """Bottom-up scan for a line that is a bare integer, allowing markdown
    emphasis around it."""
    for line in reversed(text.splitlines()):
        s = line.strip().strip("*_`#").strip().rstrip(".")
        if _INT_RE.match(s):
            return int(s)
    raise NoIntegerFoundError("no integer line found")

"""OpenAI-compatible chat-completions client, response grammar, and record/replay log."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx

from .prompt import PromptBundle

log = logging.getLogger(__name__)

ENDPOINT_ENV = "ADAPTIVE_FORECAST_SLM_ENDPOINT"
MAX_ABS_RETURN_PCT = 50.0

_LINE_RE = re.compile(
    r"PREDICTION\s*:\s*([+-]?\d+(?:\.\d+)?)\s*%.*?CONFIDENCE\s*:\s*([+-]?\d*\.?\d+)",
    re.IGNORECASE | re.DOTALL,
)
_JSON_RE = re.compile(r"\{[^{}]*\}", re.DOTALL)


class ParseError(ValueError):
    """The model output does not follow the response grammar or is out of range."""


@dataclass(frozen=True)
class SlmResponse:
    return_pct: float
    confidence: float
    raw_text: str = ""
    latency: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @classmethod
    def failed(cls, reason: str, raw_text: str = "", latency: float = 0.0) -> SlmResponse:
        return cls(math.nan, 0.0, raw_text, latency, reason)

    def to_dict(self) -> dict:
        return {
            "return_pct": None if math.isnan(self.return_pct) else self.return_pct,
            "confidence": self.confidence,
            "error": self.error,
        }


@dataclass(frozen=True)
class SlmClientConfig:
    endpoint: str = "http://localhost:1234/v1"
    model: str = "gemma-3-1b-it"
    temperature: float = 0.0
    max_tokens: int = 150
    timeout: float = 30.0
    retries: int = 2
    api_key: str | None = None

    def __post_init__(self) -> None:
        if self.temperature != 0:
            raise ValueError("temperature must be exactly 0 for reproducible sampling")
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.retries < 0 or self.max_tokens < 1:
            raise ValueError("retries must be >= 0 and max_tokens >= 1")

    def resolved_endpoint(self) -> str:
        return os.environ.get(ENDPOINT_ENV) or self.endpoint

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("api_key")
        return d


def _validate(ret: float, conf: float) -> tuple[float, float]:
    if not math.isfinite(ret) or abs(ret) > MAX_ABS_RETURN_PCT:
        raise ParseError(f"predicted return {ret}% outside +/-{MAX_ABS_RETURN_PCT}%")
    if not math.isfinite(conf) or not 0.0 <= conf <= 1.0:
        raise ParseError(f"confidence {conf} outside [0, 1]")
    return ret, conf


def parse_response(text: str) -> tuple[float, float]:
    """Extract (return_pct, confidence) from the line grammar or the JSON form."""
    m = _LINE_RE.search(text)
    if m:
        return _validate(float(m.group(1)), float(m.group(2)))
    for blob in _JSON_RE.findall(text):
        try:
            obj = json.loads(blob)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and "prediction_pct" in obj and "confidence" in obj:
            try:
                return _validate(float(obj["prediction_pct"]), float(obj["confidence"]))
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc)) from None
    raise ParseError(f"no prediction found in {text[:80]!r}")


def build_request(bundle: PromptBundle, cfg: SlmClientConfig) -> dict:
    return {
        "model": cfg.model,
        "messages": bundle.messages(),
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }


def request_key(payload: dict, attempt: int = 0) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(f"{attempt}:{blob}".encode()).hexdigest()


class ReplayLog:
    """Line-delimited JSON of request/response pairs.

    In ``record`` mode every exchange is appended; in ``replay`` mode responses
    are served from the file by request hash and the network is never touched.
    """

    def __init__(self, path: str | Path, mode: str = "record"):
        if mode not in ("record", "replay"):
            raise ValueError("replay log mode must be 'record' or 'replay'")
        self.path = Path(path)
        self.mode = mode
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        if mode == "replay":
            if not self.path.exists():
                raise FileNotFoundError(f"replay log {self.path} not found")
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._entries[rec["key"]] = rec["content"]

    def lookup(self, key: str) -> str | None:
        return self._entries.get(key)

    def append(self, key: str, request: dict, content: str) -> None:
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({"key": key, "request": request, "content": content}, sort_keys=True) + "\n")


class SlmClient:
    """Thin synchronous client; one POST per attempt to ``{endpoint}/chat/completions``."""

    def __init__(self, cfg: SlmClientConfig, transport: httpx.BaseTransport | None = None, replay: ReplayLog | None = None):
        self.cfg = cfg
        self.replay = replay
        headers = {"Authorization": f"Bearer {cfg.api_key}"} if cfg.api_key else {}
        self._http = httpx.Client(timeout=cfg.timeout, transport=transport, headers=headers)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> SlmClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def complete(self, payload: dict, attempt: int = 0) -> str:
        """Return the first choice's message content for ``payload``."""
        key = request_key(payload, attempt)
        if self.replay is not None and self.replay.mode == "replay":
            content = self.replay.lookup(key)
            if content is None:
                raise httpx.TransportError(f"request {key[:12]} not present in replay log")
            return content
        url = self.cfg.resolved_endpoint().rstrip("/") + "/chat/completions"
        resp = self._http.post(url, json=payload)
        resp.raise_for_status()
        content = resp.json()["choices"][0]["message"]["content"]
        if self.replay is not None:
            self.replay.append(key, payload, content)
        return content


def query_slm(bundle: PromptBundle, cfg: SlmClientConfig, client: SlmClient | None = None) -> SlmResponse:
    """Send one prompt; retry unparseable replies up to ``cfg.retries`` times.

    Network failures and exhausted retries return a failed sentinel response.
    """
    own = client is None
    client = client or SlmClient(cfg)
    payload = build_request(bundle, cfg)
    text = ""
    start = time.perf_counter()
    try:
        for attempt in range(cfg.retries + 1):
            try:
                text = client.complete(payload, attempt)
            except httpx.TimeoutException:
                return SlmResponse.failed("timeout", latency=time.perf_counter() - start)
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                log.warning("SLM request failed: %s", exc)
                return SlmResponse.failed(f"transport: {exc}", latency=time.perf_counter() - start)
            try:
                ret, conf = parse_response(text)
            except ParseError as exc:
                log.info("unparseable SLM reply (attempt %d): %s", attempt + 1, exc)
                continue
            return SlmResponse(ret, conf, text, time.perf_counter() - start)
        return SlmResponse.failed("unparseable", text, time.perf_counter() - start)
    finally:
        if own:
            client.close()

"""Minimal chat-completion client for OpenAI-compatible local runners."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

import httpx

log = logging.getLogger(__name__)


class EndpointError(RuntimeError):
    """Retryable transport failure (network, timeout, 5xx, throttling)."""


class EndpointAuthError(EndpointError):
    """401/403 from the endpoint; never retried."""


@dataclass
class LlmEndpointConfig:
    base_url: str = "http://localhost:11434/v1"
    model: str = "llama3:70b"
    temperature: float = 0.0
    timeout: float = 120.0
    max_retries: int = 3
    max_concurrent: int = 4
    api_key: str | None = None
    backoff: float = 1.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


class ChatClient:
    """POSTs ``{model, messages, temperature}`` and returns the first choice's text."""

    def __init__(self, config: LlmEndpointConfig, transport: httpx.BaseTransport | None = None,
                 sleep=time.sleep):
        self.config = config
        key = config.api_key or os.environ.get("OPENAI_API_KEY")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._http = httpx.Client(base_url=config.base_url.rstrip("/"), timeout=config.timeout,
                                  headers=headers, transport=transport)
        self._sleep = sleep

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def payload(self, messages: list[dict]) -> dict:
        return {"model": self.config.model, "messages": messages,
                "temperature": self.config.temperature, "stream": False}

    def complete(self, messages: list[dict]) -> str:
        last: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post("/chat/completions", json=self.payload(messages))
            except httpx.TransportError as exc:
                last = EndpointError(f"transport failure: {exc}")
                log.warning("chat request failed (%s), attempt %d", exc, attempt + 1)
                continue
            if resp.status_code in (401, 403):
                raise EndpointAuthError(f"endpoint refused credentials ({resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = EndpointError(f"endpoint returned {resp.status_code}")
                retry_after = resp.headers.get("retry-after")
                if retry_after and retry_after.isdigit():
                    self._sleep(float(retry_after))
                continue
            if resp.status_code >= 400:
                raise EndpointError(f"endpoint returned {resp.status_code}: {resp.text[:200]}")
            try:
                return str(resp.json()["choices"][0]["message"]["content"])
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last = EndpointError(f"malformed completion body: {exc}")
        raise last if last else EndpointError("no attempt made")

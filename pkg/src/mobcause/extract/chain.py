from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Protocol

from ..data import EventRecord, format_timestamp, parse_timestamp
from . import prompts
from .client import ChatClient, EndpointAuthError, EndpointError, LlmEndpointConfig
from .parsing import STEP_PARSERS, AnswerParseError

log = logging.getLogger(__name__)

RETRIES_PER_STEP = 3


class Completer(Protocol):
    def complete(self, messages: list[dict]) -> str: ...


@dataclass
class PromptChainState:
    messages: list[dict] = field(default_factory=list)
    step: int = 0

    def request(self, content: str) -> list[dict]:
        return self.messages + [{"role": "user", "content": content}]

    def record(self, content: str, answer: str) -> None:
        self.messages.append({"role": "user", "content": content})
        self.messages.append({"role": "assistant", "content": answer})
        self.step += 1


# keyword deny-list applied before any request; empty by default
DENY_KEYWORDS: tuple[str, ...] = ()


def _invalid(base: dict, reason: str, state: PromptChainState, answers: dict) -> EventRecord:
    log.info("article %s marked invalid: %s", base["article_id"], reason)
    return EventRecord(intentions=None, predictable=False, answers=answers, valid=False,
                       error=reason, transcript=list(state.messages), **base)


def run_prompt_chain(article_text: str, release_time: datetime, endpoint, *,
                     article_id: str = "", region_codes=(), category: str = "Unknown",
                     retries: int = RETRIES_PER_STEP,
                     deny_keywords: tuple[str, ...] = DENY_KEYWORDS) -> EventRecord:
    """Ask the five prompts in order, each request carrying the full history.

    ``endpoint`` is an ``LlmEndpointConfig`` or any object with
    ``complete(messages) -> str``.  A step whose answer does not parse is asked
    again up to ``retries`` times; step 2 then falls back to the release time,
    the other steps mark the record invalid.
    """
    base = dict(article_id=article_id, release_time=release_time, event_time=release_time,
                region_codes=list(region_codes), category=category)
    state = PromptChainState([{"role": "system", "content": prompts.SYSTEM}])
    answers: dict[str, str] = {}
    if not isinstance(article_text, str) or not article_text.strip():
        return _invalid(base, "empty article", state, answers)
    lowered = article_text.lower()
    for kw in deny_keywords:
        if kw.lower() in lowered:
            return _invalid(base, f"filtered by keyword {kw!r}", state, answers)

    own_client = None
    if isinstance(endpoint, LlmEndpointConfig):
        endpoint = own_client = ChatClient(endpoint)
    try:
        parsed = {}
        for step in range(1, 6):
            content = (prompts.first_user_message(article_text, format_timestamp(release_time))
                       if step == 1 else prompts.STEPS[step - 1])
            answer, value = None, None
            for _ in range(retries + 1):
                try:
                    answer = endpoint.complete(state.request(content))
                except EndpointAuthError:
                    raise
                except EndpointError as exc:
                    return _invalid(base, f"endpoint failure at step {step}: {exc}", state,
                                    answers)
                try:
                    value = STEP_PARSERS[step](answer)
                    break
                except AnswerParseError:
                    value = None
            answer = answer if isinstance(answer, str) else ""
            state.record(content, answer)
            answers[str(step)] = answer
            if value is None:
                if step == 2:
                    value = release_time
                else:
                    return _invalid(base, f"unparseable answer at step {step}", state, answers)
            parsed[step] = value
    finally:
        if own_client is not None:
            own_client.close()
    return EventRecord(article_id=article_id, release_time=release_time,
                       event_time=parsed[2], region_codes=list(region_codes),
                       category=category, predictable=parsed[4], intentions=parsed[5],
                       answers=answers, valid=True, transcript=list(state.messages))


def extract_many(articles: list[dict], endpoint, max_concurrent: int = 1,
                 extractor: Callable | None = None) -> list[EventRecord]:
    """Run chains for many articles; at most ``max_concurrent`` in flight.

    Output order follows input order.
    """
    def one(art):
        rel = parse_timestamp(art["release_time"])
        if extractor is not None:
            return extractor(art["text"], rel, article_id=art["article_id"],
                             region_codes=art.get("region_codes", []),
                             category=art.get("category", "Unknown"))
        return run_prompt_chain(art["text"], rel, endpoint, article_id=art["article_id"],
                                region_codes=art.get("region_codes", []),
                                category=art.get("category", "Unknown"))

    own_client = None
    if extractor is None and isinstance(endpoint, LlmEndpointConfig):
        endpoint = own_client = ChatClient(endpoint)
    try:
        if max_concurrent <= 1:
            return [one(a) for a in articles]
        with ThreadPoolExecutor(max_workers=max_concurrent) as pool:
            return list(pool.map(one, articles))
    finally:
        if own_client is not None:
            own_client.close()

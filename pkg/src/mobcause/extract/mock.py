"""Offline stand-in for the LLM: synthetic articles carry their own answers.

A synthetic article embeds a marker block ``<<<ANSWERS {json} ANSWERS>>>``
holding the five step answers.  ``mock_extract`` feeds those answers through
the real prompt chain, so records come out of the same parsers and schema as
a live extraction.
"""
from __future__ import annotations

import json
import re
from datetime import datetime

from ..data import EventRecord
from .chain import run_prompt_chain

_MARKER = re.compile(r"<<<ANSWERS (\{.*?\}) ANSWERS>>>", re.S)


def render_article(title: str, body: str, answers: dict[str, str]) -> str:
    block = json.dumps({str(k): v for k, v in answers.items()}, sort_keys=True)
    return f"{title}\n\n{body}\n\n<<<ANSWERS {block} ANSWERS>>>\n"


def read_marker(article_text: str) -> dict[str, str] | None:
    m = _MARKER.search(article_text or "")
    if not m:
        return None
    try:
        obj = json.loads(m.group(1))
    except ValueError:
        return None
    if not isinstance(obj, dict):
        return None
    return {str(k): str(v) for k, v in obj.items()}


class ScriptedResponder:
    """Answers step k with ``answers[str(k)]`` (k = number of user turns so far)."""

    def __init__(self, answers: dict[str, str]):
        self.answers = answers
        self.requests: list[list[dict]] = []

    def complete(self, messages: list[dict]) -> str:
        self.requests.append([dict(m) for m in messages])
        step = sum(1 for m in messages if m["role"] == "user")
        return self.answers.get(str(step), "")


def mock_extract(article_text: str, release_time: datetime, *, article_id: str = "",
                 region_codes=(), category: str = "Unknown") -> EventRecord:
    answers = read_marker(article_text)
    if answers is None:
        return EventRecord(article_id=article_id, release_time=release_time,
                           event_time=release_time, region_codes=list(region_codes),
                           category=category, predictable=False, intentions=None,
                           valid=False, error="no structured marker in article")
    return run_prompt_chain(article_text, release_time, ScriptedResponder(answers),
                            article_id=article_id, region_codes=region_codes,
                            category=category, retries=0)

"""Strict parsers for the step answers.

Each ``try_*`` parser either returns a value or raises ``AnswerParseError``;
the chain treats that as "ask again".  No other exception escapes for any
string input.
"""
from __future__ import annotations

import json
import re
from datetime import datetime

from ..data import IntentionVector, N_INTENTIONS, TIME_FORMAT


class AnswerParseError(ValueError):
    pass


_TS = re.compile(r"(\d{4})-(\d{2})-(\d{2})[ T](\d{2}):(\d{2}):(\d{2})")


def _json_objects(text: str) -> list[dict]:
    """Every top-level JSON object embedded in ``text``."""
    dec = json.JSONDecoder()
    found = []
    i = 0
    while True:
        j = text.find("{", i)
        if j < 0:
            return found
        try:
            obj, end = dec.raw_decode(text, j)
        except (ValueError, RecursionError):
            i = j + 1
            continue
        if isinstance(obj, dict):
            found.append(obj)
        i = end


def _strict_time(value) -> datetime:
    if not isinstance(value, str):
        raise AnswerParseError("event time is not a string")
    try:
        return datetime.strptime(value.strip(), TIME_FORMAT)
    except ValueError as exc:
        raise AnswerParseError(f"invalid event time {value!r}") from exc


def try_parse_event_time(answer_text: str) -> datetime:
    """JSON ``{"event time": ...}``; a bare timestamp is accepted when it is the only one."""
    text = answer_text if isinstance(answer_text, str) else ""
    objs = _json_objects(text)
    if len(objs) > 1:
        raise AnswerParseError("more than one JSON object in answer")
    if len(objs) == 1:
        obj = objs[0]
        for key in ("event time", "event_time", "eventTime", "time"):
            if key in obj:
                return _strict_time(obj[key])
        raise AnswerParseError("JSON object has no event time field")
    # models often drop the braces and answer with the bare value
    candidates = _TS.findall(text)
    if len(candidates) == 1:
        return _strict_time("{}-{}-{} {}:{}:{}".format(*candidates[0]))
    raise AnswerParseError("no unambiguous event time found")


def parse_event_time(answer_text: str, release_time: datetime) -> datetime:
    try:
        return try_parse_event_time(answer_text)
    except AnswerParseError:
        return release_time


_YESNO = re.compile(r"^[\s\"'*`(\[]*(yes|no)\b", re.I)


def parse_predictability(answer_text: str) -> bool:
    """Leading Yes/No token; "Yes" (unpredictable) maps to predictable=False."""
    m = _YESNO.match(answer_text if isinstance(answer_text, str) else "")
    if not m:
        raise AnswerParseError("answer does not start with Yes or No")
    return m.group(1).lower() == "no"


_LIST = re.compile(r"\[([^\[\]]*)\]")
_INT = re.compile(r"[+-]?\d+")


def parse_intentions(answer_text: str) -> IntentionVector:
    """First bracketed list; must hold exactly ten integers in [0, 100]."""
    m = _LIST.search(answer_text if isinstance(answer_text, str) else "")
    if not m:
        raise AnswerParseError("no bracketed list in answer")
    tokens = [t.strip() for t in m.group(1).split(",")]
    if tokens == [""]:
        tokens = []
    if len(tokens) != N_INTENTIONS:
        raise AnswerParseError(f"expected {N_INTENTIONS} scores, got {len(tokens)}")
    values = []
    for t in tokens:
        if not _INT.fullmatch(t):
            raise AnswerParseError(f"score {t!r} is not an integer")
        v = int(t)
        if not 0 <= v <= 100:
            raise AnswerParseError(f"score {v} outside [0, 100]")
        values.append(v)
    return IntentionVector(tuple(values))


def try_parse_text(answer_text: str) -> str:
    if not isinstance(answer_text, str) or not answer_text.strip():
        raise AnswerParseError("empty answer")
    return answer_text.strip()


STEP_PARSERS = {
    1: try_parse_text,
    2: try_parse_event_time,
    3: try_parse_text,
    4: parse_predictability,
    5: parse_intentions,
}


def classify_answer(step: int, answer_text: str) -> str:
    """'valid' when the step parser accepts the text, otherwise 'retry'."""
    try:
        STEP_PARSERS[step](answer_text)
    except AnswerParseError:
        return "retry"
    return "valid"

from __future__ import annotations

from ..data import EventRecord, IntentionVector

QUADRANTS = ("PP", "PU", "NP", "NU")
QUADRANT_NAMES = {
    "PP": "Positive-Predictable",
    "PU": "Positive-Unpredictable",
    "NP": "Negative-Predictable",
    "NU": "Negative-Unpredictable",
}


def quadrant_of(intentions: IntentionVector, predictable: bool) -> str:
    # interest >= danger counts as positive; equal scores fall on the positive side
    sign = "P" if intentions.interest >= intentions.danger else "N"
    return sign + ("P" if predictable else "U")


def categorize_event(record: EventRecord) -> str:
    if not record.valid or record.intentions is None:
        raise ValueError(f"cannot categorize invalid record {record.article_id!r}")
    return quadrant_of(record.intentions, record.predictable)

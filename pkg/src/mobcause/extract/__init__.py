from .chain import PromptChainState, extract_many, run_prompt_chain
from .client import ChatClient, EndpointAuthError, EndpointError, LlmEndpointConfig
from .mock import ScriptedResponder, mock_extract, read_marker, render_article
from .parsing import (AnswerParseError, classify_answer, parse_event_time, parse_intentions,
                      parse_predictability, try_parse_event_time)
from .quadrant import QUADRANT_NAMES, QUADRANTS, categorize_event, quadrant_of

__all__ = [
    "PromptChainState", "run_prompt_chain", "extract_many",
    "ChatClient", "LlmEndpointConfig", "EndpointError", "EndpointAuthError",
    "ScriptedResponder", "mock_extract", "read_marker", "render_article",
    "AnswerParseError", "classify_answer", "parse_event_time", "parse_intentions",
    "parse_predictability", "try_parse_event_time",
    "QUADRANTS", "QUADRANT_NAMES", "categorize_event", "quadrant_of",
]

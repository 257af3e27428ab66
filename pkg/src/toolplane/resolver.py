"""Intent resolution: score registered tools against an agent's free-text intent.

The default scorer blends token-set Jaccard similarity with the learned
(agent, tool) preference weight::

    combined = w_lex * lexical + w_pref * preference,   w_lex + w_pref = 1

Any callable with the :data:`Scorer` signature can replace it (for example an
embedding-based scorer) as long as it keeps every score in [0, 1].
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Protocol

_SPLIT = re.compile(r"[^0-9a-z]+")

DEFAULT_W_LEX = 0.7
DEFAULT_W_PREF = 0.3


@dataclass
class IntentQuery:
    agent_id: str
    intent: str
    context: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.intent or not self.intent.strip():
            raise ValueError("intent must be nonempty")


@dataclass(frozen=True)
class ScoredCandidate:
    tool_id: str
    lexical: float
    preference: float
    combined: float
    rationale: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_id": self.tool_id,
            "lexical": self.lexical,
            "preference": self.preference,
            "combined": self.combined,
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScoredCandidate":
        return cls(data["tool_id"], data["lexical"], data["preference"], data["combined"], data.get("rationale", ""))


class PreferenceLookup(Protocol):
    def get(self, agent_id: str, tool_id: str) -> float: ...


Scorer = Callable[[IntentQuery, Any, float], ScoredCandidate]


def tokenize(text: str) -> set[str]:
    """Lowercase, split on anything that is not a letter or digit, drop empties."""
    return {token for token in _SPLIT.split(text.lower()) if token}


def lexical_similarity(a: set[str], b: set[str]) -> float:
    """Jaccard coefficient; two empty sets score 0."""
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def tool_tokens(tool) -> set[str]:
    return tokenize(" ".join([tool.name, tool.description, *tool.tags]))


def check_weights(w_lex: float, w_pref: float) -> None:
    if not (0.0 <= w_lex <= 1.0 and 0.0 <= w_pref <= 1.0) or not math.isclose(w_lex + w_pref, 1.0, abs_tol=1e-9):
        raise ValueError(f"resolver weights must lie in [0,1] and sum to 1 (got {w_lex}, {w_pref})")


def score_tool(
    query: IntentQuery,
    tool,
    pref: float,
    w_lex: float = DEFAULT_W_LEX,
    w_pref: float = DEFAULT_W_PREF,
) -> ScoredCandidate:
    if not 0.0 <= pref <= 1.0:
        raise ValueError(f"preference {pref} outside [0, 1]")
    lexical = lexical_similarity(tokenize(query.intent), tool_tokens(tool))
    # float rounding must not push a convex combination past the unit interval
    combined = min(1.0, max(0.0, w_lex * lexical + w_pref * pref))
    return ScoredCandidate(
        tool_id=tool.tool_id,
        lexical=lexical,
        preference=pref,
        combined=combined,
        rationale=f"lexical={lexical:.4f} preference={pref:.4f} combined={combined:.4f}",
    )


def make_scorer(w_lex: float = DEFAULT_W_LEX, w_pref: float = DEFAULT_W_PREF) -> Scorer:
    check_weights(w_lex, w_pref)

    def scorer(query: IntentQuery, tool, pref: float) -> ScoredCandidate:
        return score_tool(query, tool, pref, w_lex, w_pref)

    return scorer


def rank_key(candidate: ScoredCandidate) -> tuple[float, str]:
    return (-candidate.combined, candidate.tool_id)


def resolve(
    query: IntentQuery,
    candidates: Iterable[Any],
    prefs: Optional[PreferenceLookup],
    scorer: Optional[Scorer] = None,
) -> list[ScoredCandidate]:
    """Score every candidate and rank by combined score, ties by ascending tool_id."""
    scorer = scorer or score_tool
    scored = []
    for tool in candidates:
        pref = prefs.get(query.agent_id, tool.tool_id) if prefs is not None else 0.5
        candidate = scorer(query, tool, pref)
        for value in (candidate.lexical, candidate.preference, candidate.combined):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"scorer produced {value} for {tool.tool_id}, outside [0, 1]")
        scored.append(candidate)
    return sorted(scored, key=rank_key)

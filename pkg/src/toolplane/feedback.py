"""Feedback Integration: per-(agent, tool) preference weights learned from ratings.

Each rating moves a weight toward it by an exponential moving average,
``w' = (1 - alpha) * w + alpha * rating``. Credit is shared: every tool that
ran in the rated request's plan gets the same update.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from toolplane.errors import RatingOutOfRange, UnknownRequest
from toolplane.tracker import AuditLog, utc_timestamp

DEFAULT_WEIGHT = 0.5
DEFAULT_ALPHA = 0.2


@dataclass
class FeedbackEvent:
    request_id: str
    rating: float
    comment: Optional[str] = None
    timestamp: str = field(default_factory=utc_timestamp)

    def __post_init__(self) -> None:
        check_rating(self.rating)


def check_rating(rating: Any) -> None:
    if (
        isinstance(rating, bool)
        or not isinstance(rating, (int, float))
        or math.isnan(rating)
        or not 0.0 <= rating <= 1.0
    ):
        raise RatingOutOfRange(f"rating {rating!r} must be a number in [0, 1]")


class PreferenceTable:
    def __init__(self, alpha: float = DEFAULT_ALPHA, default: float = DEFAULT_WEIGHT) -> None:
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"learning rate {alpha} must lie in (0, 1]")
        self.alpha = alpha
        self.default = default
        self._weights: dict[tuple[str, str], float] = {}
        self._lock = threading.Lock()

    def get(self, agent_id: str, tool_id: str) -> float:
        return self._weights.get((agent_id, tool_id), self.default)

    def update(self, agent_id: str, tool_id: str, rating: float) -> float:
        check_rating(rating)
        with self._lock:
            w = self._weights.get((agent_id, tool_id), self.default)
            w = (1.0 - self.alpha) * w + self.alpha * rating
            w = min(1.0, max(0.0, w))
            self._weights[(agent_id, tool_id)] = w
        return w

    def items(self) -> dict[tuple[str, str], float]:
        return dict(self._weights)

    def to_list(self) -> list[dict[str, Any]]:
        return [
            {"agent_id": a, "tool_id": t, "weight": w}
            for (a, t), w in sorted(self._weights.items())
        ]

    def load_list(self, entries: Iterable[dict[str, Any]]) -> None:
        weights = {}
        for entry in entries:
            weight = float(entry["weight"])
            if not 0.0 <= weight <= 1.0:
                raise ValueError(f"stored weight {weight} outside [0, 1]")
            weights[(entry["agent_id"], entry["tool_id"])] = weight
        with self._lock:
            self._weights = weights


def record_feedback(event: FeedbackEvent, log: AuditLog, prefs: PreferenceTable, enabled: bool = True) -> float:
    """Apply a rating to the request's selected tool and every tool it executed.

    Returns the selected tool's weight afterwards. With ``enabled`` false the
    event is validated but the table is left untouched.
    """
    check_rating(event.rating)
    record = log.find_request(event.request_id)
    if record is None:
        raise UnknownRequest(f"no logged request {event.request_id!r}")
    if record.selected_tool is None:
        raise UnknownRequest(f"request {event.request_id!r} never selected a tool")
    if not enabled:
        return prefs.get(record.agent_id, record.selected_tool)
    credited = [record.selected_tool]
    for step in record.steps:
        if step["tool_id"] not in credited:
            credited.append(step["tool_id"])
    weights = {tool_id: prefs.update(record.agent_id, tool_id, event.rating) for tool_id in credited}
    return weights[record.selected_tool]

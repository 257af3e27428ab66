"""Service configuration, loaded from an optional JSON file.

Keys may be written nested (``{"resolver": {"w_lex": 0.6}}``) or dotted
(``{"resolver.w_lex": 0.6}``).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from toolplane.errors import ConfigError

KEYS = {
    "resolver.w_lex": "w_lex",
    "resolver.w_pref": "w_pref",
    "router.no_match_threshold": "no_match_threshold",
    "feedback.alpha": "alpha",
    "feedback.enabled": "feedback_enabled",
    "tracker.fsync": "fsync",
}


@dataclass(frozen=True)
class Config:
    w_lex: float = 0.7
    w_pref: float = 0.3
    no_match_threshold: float = 0.1
    alpha: float = 0.2
    feedback_enabled: bool = True
    fsync: bool = True

    def __post_init__(self) -> None:
        for name in ("w_lex", "w_pref", "no_match_threshold", "alpha"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be a number in [0, 1], got {value!r}")
        if not math.isclose(self.w_lex + self.w_pref, 1.0, abs_tol=1e-9):
            raise ConfigError(f"resolver.w_lex + resolver.w_pref must equal 1 (got {self.w_lex + self.w_pref})")
        if self.alpha == 0.0:
            raise ConfigError("feedback.alpha must be greater than 0")
        for name in ("feedback_enabled", "fsync"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a boolean")

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "Config":
        flat: dict[str, Any] = {}

        def walk(prefix: str, node: Any) -> None:
            if isinstance(node, dict):
                for key, value in node.items():
                    walk(f"{prefix}.{key}" if prefix else key, value)
            else:
                flat[prefix] = node

        walk("", data)
        unknown = sorted(set(flat) - set(KEYS))
        if unknown:
            raise ConfigError(f"unknown configuration keys {unknown}")
        return cls(**{KEYS[k]: v for k, v in flat.items()})

    @classmethod
    def load(cls, path: Optional[str | os.PathLike]) -> "Config":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_mapping(data)

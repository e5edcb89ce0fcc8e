"""Failure-pattern extraction from performance logs.

Two extractors share one output type: an LLM-backed one and a deterministic
rule-based one that groups infraction events by (kind, weather, time).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Sequence

from .errors import MalformedLlmOutput, SchemaError, ValidationError
from .harness import PerformanceLog
from .scenario import TIMES, WEATHERS, surface_form

if TYPE_CHECKING:
    from .llm import LlmHandle

CATEGORIES = ("collision", "traffic_signal_violation", "route_deviation", "speeding")
CATEGORY_OF_EVENT = {
    "collision": "collision",
    "red_light": "traffic_signal_violation",
    "route_deviation": "route_deviation",
    "speeding": "speeding",
}
SEVERITY = {"collision": 3, "traffic_signal_violation": 2, "route_deviation": 1, "speeding": 1}

_PHRASE = {
    "collision": "collision",
    "traffic_signal_violation": "ran a red light",
    "route_deviation": "deviated from the route",
    "speeding": "exceeded the speed limit",
}
_WEATHER_PHRASE = {"clear": "in clear weather", "rain": "in rain", "fog": "in fog", "snow": "in snow"}
_TIME_PHRASE = {"day": "during the day", "night": "at night", "dawn": "at dawn", "dusk": "at dusk"}


@dataclass(frozen=True)
class FailurePattern:
    pattern_id: str
    category: str
    context: dict[str, Any]
    description: str
    evidence: tuple[tuple[str, int], ...]
    severity: int

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValidationError(f"unknown failure category {self.category!r}")
        if not self.evidence:
            raise ValidationError(f"{self.pattern_id}: evidence must be non-empty")
        if not self.description.strip():
            raise ValidationError(f"{self.pattern_id}: description must be non-empty")
        if self.severity not in (1, 2, 3):
            raise ValidationError(f"{self.pattern_id}: severity must be 1, 2 or 3")
        object.__setattr__(self, "evidence", tuple((str(r), int(i)) for r, i in self.evidence))

    def to_dict(self) -> dict[str, Any]:
        return {
            "pattern_id": self.pattern_id,
            "category": self.category,
            "context": dict(self.context),
            "description": self.description,
            "evidence": [{"route_id": r, "event_index": i} for r, i in self.evidence],
            "severity": self.severity,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FailurePattern:
        return cls(
            pattern_id=data["pattern_id"],
            category=data["category"],
            context=dict(data.get("context", {})),
            description=data["description"],
            evidence=tuple((e["route_id"], e["event_index"]) for e in data["evidence"]),
            severity=int(data["severity"]),
        )


def _check_unique(patterns: Sequence[FailurePattern]) -> None:
    ids = [p.pattern_id for p in patterns]
    if len(set(ids)) != len(ids):
        raise ValidationError("pattern ids must be unique")


def describe_pattern(category: str, weather: str, time: str, tags: Sequence[str] = ()) -> str:
    text = f"{_PHRASE[category]} {_WEATHER_PHRASE[weather]} {_TIME_PHRASE[time]}"
    if tags:
        text += " near " + ", ".join(surface_form(t) for t in sorted(tags))
    return text


def extract_patterns_rules(logs: Sequence[PerformanceLog]) -> list[FailurePattern]:
    """One pattern per non-empty (event kind, weather, time) group."""
    groups: dict[tuple[str, str, str], dict[str, Any]] = {}
    for log in logs:
        cond = log.conditions
        for idx, event in enumerate(log.events):
            category = CATEGORY_OF_EVENT[event.kind]
            g = groups.setdefault((category, cond.weather, cond.time), {"evidence": set(), "tags": set()})
            g["evidence"].add((log.route_id, idx))
            g["tags"].update(cond.scene_tags)

    def order(key: tuple[str, str, str]) -> tuple[int, int, int]:
        category, weather, time = key
        return CATEGORIES.index(category), WEATHERS.index(weather), TIMES.index(time)

    patterns = []
    for n, key in enumerate(sorted(groups, key=order), start=1):
        category, weather, time = key
        g = groups[key]
        patterns.append(FailurePattern(
            pattern_id=f"p{n:02d}",
            category=category,
            context={"weather": weather, "time": time},
            description=describe_pattern(category, weather, time, sorted(g["tags"])),
            evidence=tuple(sorted(g["evidence"])),
            severity=SEVERITY[category],
        ))
    return patterns


def extract_patterns_llm(logs: Sequence[PerformanceLog], llm: LlmHandle) -> list[FailurePattern]:
    """Ask the LLM to interpret the failures; references are checked against ``logs``."""
    from .llm import LlmTask, complete, prompts

    if not logs:
        return []
    payload = [log.to_dict() for log in logs]
    task = LlmTask("analyze", prompts.analyze_prompt(payload), "failure_patterns.v1")
    doc = complete(llm, task)
    n_events = {log.route_id: len(log.events) for log in logs}
    try:
        patterns = [FailurePattern.from_dict(p) for p in doc["patterns"]]
        _check_unique(patterns)
    except (ValidationError, KeyError, TypeError) as exc:
        raise MalformedLlmOutput(f"invalid failure pattern: {exc}") from exc
    for p in patterns:
        for route_id, idx in p.evidence:
            if route_id not in n_events:
                raise MalformedLlmOutput(f"{p.pattern_id} cites unknown route {route_id!r}")
            if idx >= n_events[route_id]:
                raise MalformedLlmOutput(f"{p.pattern_id} cites missing event {idx} of {route_id!r}")
    return patterns


def extract_patterns(logs: Sequence[PerformanceLog], mode: str = "rules",
                     llm: LlmHandle | None = None, per_route: bool = False) -> list[FailurePattern]:
    """Dispatch on ``mode``.  With ``per_route`` each log is analysed on its own
    and pattern ids are prefixed with the route id."""
    if mode not in ("rules", "llm"):
        raise ValidationError(f"unknown analyzer mode {mode!r}")
    if mode == "llm" and llm is None:
        raise ValidationError("llm mode needs an LLM handle")

    def run(batch: Sequence[PerformanceLog]) -> list[FailurePattern]:
        return extract_patterns_rules(batch) if mode == "rules" else extract_patterns_llm(batch, llm)

    if not per_route:
        return run(logs)
    out = []
    for log in logs:
        for p in run([log]):
            out.append(FailurePattern(f"{log.route_id}/{p.pattern_id}", p.category, p.context,
                                      p.description, p.evidence, p.severity))
    return out


def save_patterns(patterns: Sequence[FailurePattern], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in patterns:
            f.write(json.dumps(p.to_dict(), ensure_ascii=False) + "\n")


def load_patterns(path: str | Path) -> list[FailurePattern]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(FailurePattern.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            except KeyError as exc:
                raise SchemaError("missing required field", line=lineno, field=str(exc.args[0])) from exc
            except (ValidationError, TypeError, ValueError) as exc:
                raise SchemaError(str(exc), line=lineno) from exc
    _check_unique(out)
    return out

"""JSON schemas for every structured LLM response, keyed by schema id."""

from __future__ import annotations

from typing import Any

_ATTR_CONTEXT = {
    "type": "object",
    "properties": {
        "weather": {"enum": ["clear", "rain", "fog", "snow"]},
        "time": {"enum": ["day", "night", "dawn", "dusk"]},
        "location": {
            "enum": ["urban_intersection", "highway", "roundabout", "merge_ramp", "residential"]
        },
        "scene_tags": {"type": "array", "items": {"type": "string", "pattern": "^[a-z0-9_]+$"}},
    },
    "additionalProperties": False,
}

SCHEMAS: dict[str, dict[str, Any]] = {
    "failure_patterns.v1": {
        "type": "object",
        "required": ["patterns"],
        "properties": {
            "patterns": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["pattern_id", "category", "context", "description", "evidence", "severity"],
                    "properties": {
                        "pattern_id": {"type": "string", "minLength": 1},
                        "category": {
                            "enum": ["collision", "traffic_signal_violation", "route_deviation", "speeding"]
                        },
                        "context": _ATTR_CONTEXT,
                        "description": {"type": "string", "minLength": 1},
                        "evidence": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "required": ["route_id", "event_index"],
                                "properties": {
                                    "route_id": {"type": "string"},
                                    "event_index": {"type": "integer", "minimum": 0},
                                },
                            },
                        },
                        "severity": {"type": "integer", "minimum": 1, "maximum": 3},
                    },
                },
            }
        },
    },
    "reflection.v1": {
        "type": "object",
        "required": ["suggestions"],
        "properties": {
            "suggestions": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["op", "rationale"],
                    "properties": {
                        "op": {"enum": ["replace", "augment", "prioritize"]},
                        "target_scenario_id": {"type": ["string", "null"]},
                        "replacement_or_added_id": {"type": ["string", "null"]},
                        "pattern_id": {"type": ["string", "null"]},
                        "rationale": {"type": "string"},
                    },
                },
            }
        },
    },
    "paraphrase.v1": {
        "type": "object",
        "required": ["text"],
        "properties": {"text": {"type": "string", "minLength": 1}},
    },
    "similarity.v1": {
        "type": "object",
        "required": ["relevance"],
        "properties": {"relevance": {"type": "number", "minimum": 0, "maximum": 100}},
    },
}


def get_schema(schema_id: str) -> dict[str, Any]:
    try:
        return SCHEMAS[schema_id]
    except KeyError:
        raise KeyError(f"unknown response schema {schema_id!r}") from None

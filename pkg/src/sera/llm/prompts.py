"""Prompt templates.  Their text participates in the fixture request hash,
so any edit here invalidates recorded fixtures."""

from __future__ import annotations

import json
from typing import Any

from .schemas import get_schema

PROMPT_VERSION = "1"

SYSTEM_PROMPT = (
    "You are a safety engineer for autonomous driving systems. "
    "Answer with exactly one fenced ```json code block and nothing else."
)


def schema_block(schema_id: str) -> str:
    schema = json.dumps(get_schema(schema_id), sort_keys=True)
    return f"Response schema ({schema_id}):\n```json\n{schema}\n```"


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False)


def analyze_prompt(logs: list[dict[str, Any]]) -> str:
    return (
        "Below are performance logs from closed-loop evaluation of a driving policy. "
        "Each log lists the route conditions and the infraction events in order.\n"
        "Group the failures into distinct failure patterns. For every pattern give a category, "
        "the route conditions that are implicated, a short description naming the failure and its "
        "context, a severity from 1 (minor) to 3 (safety critical) and the evidence as "
        "(route_id, event_index) pairs that refer to the events below.\n\n"
        f"Logs:\n{_dump(logs)}\n\n{schema_block('failure_patterns.v1')}"
    )


def reflect_prompt(candidates: list[dict[str, Any]], patterns: list[dict[str, Any]],
                   alternatives: list[dict[str, Any]]) -> str:
    return (
        "A retrieval step selected candidate training scenarios for the failure patterns below.\n"
        "Check whether every pattern is covered, whether candidates are redundant, and which "
        "candidates address the highest-risk contexts. Suggest operations:\n"
        "- replace: swap a redundant candidate (target_scenario_id) for another bank scenario "
        "(replacement_or_added_id)\n"
        "- augment: add a bank scenario (replacement_or_added_id) for an uncovered pattern (pattern_id)\n"
        "- prioritize: mark a candidate (target_scenario_id) as high risk\n"
        "Use only scenario ids listed here. An empty suggestion list is allowed.\n\n"
        f"Failure patterns:\n{_dump(patterns)}\n\nCandidates:\n{_dump(candidates)}\n\n"
        f"Other bank scenarios:\n{_dump(alternatives)}\n\n{schema_block('reflection.v1')}"
    )


def paraphrase_prompt(attrs: dict[str, Any], template_text: str) -> str:
    return (
        "Rewrite this driving scenario as a short, vivid description for a test engineer. "
        "Keep every condition and scene element.\n\n"
        f"Attributes:\n{_dump(attrs)}\n\nTemplate description:\n{template_text}\n\n"
        f"{schema_block('paraphrase.v1')}"
    )


def judge_similarity_prompt(scenario_text: str, pattern_text: str) -> str:
    return (
        "Rate from 0 to 100 how relevant the scenario is for reproducing the failure pattern.\n\n"
        f"Scenario:\n{scenario_text}\n\nFailure pattern:\n{pattern_text}\n\n"
        f"{schema_block('similarity.v1')}"
    )

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import pytest
from hypothesis import strategies as st

from sera.harness import Hazard, Route
from sera.llm import LlmHandle
from sera.scenario import LOCATIONS, TIMES, WEATHERS, ScenarioAttributes

TAGS = ("red_light", "stopped_lead_vehicle", "occluded_pedestrian", "crossing_pedestrian",
        "school_zone", "construction_zone", "wet_road", "heavy_traffic")


def attrs_strategy() -> st.SearchStrategy[ScenarioAttributes]:
    note = st.one_of(st.none(), st.text(alphabet="abcdefghij klmnop", min_size=1, max_size=40))
    return st.builds(
        ScenarioAttributes,
        weather=st.sampled_from(WEATHERS),
        time=st.sampled_from(TIMES),
        location=st.sampled_from(LOCATIONS),
        scene_tags=st.lists(st.sampled_from(TAGS), max_size=3).map(tuple),
        scene_note=note,
    )


def fenced(doc: Any) -> str:
    return "Here you go:\n```json\n" + json.dumps(doc) + "\n```\n"


@dataclass
class ScriptedTransport:
    """Stands in for the HTTP layer: answers chat requests from a script."""

    contents: list[str]
    calls: list[dict] = field(default_factory=list)

    def __call__(self, url: str, payload: dict, headers: dict, timeout_s: float) -> dict:
        self.calls.append({"url": url, "payload": payload})
        if url.endswith("/embeddings"):
            return {"data": [{"embedding": [1.0] + [0.0] * 511} for _ in payload["input"]]}
        content = self.contents[min(len(self.calls) - 1, len(self.contents) - 1)]
        return {"choices": [{"message": {"content": content}}]}


class CountingTransport:
    def __init__(self) -> None:
        self.calls = 0

    def __call__(self, *args: Any, **kwargs: Any) -> dict:
        self.calls += 1
        raise AssertionError("network transport used")


def record_then_replay(tmp_path, contents: list[str], **kwargs: Any) -> tuple[LlmHandle, LlmHandle, ScriptedTransport]:
    """A record-mode handle fed by ``contents`` and a replay handle over the same fixtures."""
    transport = ScriptedTransport(contents)
    rec = LlmHandle(mode="record", fixture_dir=tmp_path / "fx", transport=transport, **kwargs)
    rep = LlmHandle(mode="replay", fixture_dir=tmp_path / "fx", transport=CountingTransport(), **kwargs)
    return rec, rep, transport


@pytest.fixture
def empty_route() -> Route:
    return Route("empty", ScenarioAttributes("clear", "day", "highway"))


@pytest.fixture
def lead_route() -> Route:
    return Route(
        "lead",
        ScenarioAttributes("clear", "day", "highway", ("stopped_lead_vehicle",)),
        (Hazard("stopped_lead_vehicle", 50.0, {"stop_s": 1000.0}),),
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split("criterion")[1]):
            terminalreporter.write_line(line)

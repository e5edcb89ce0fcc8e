"""Structured scenario attributes and their rendering into text.

A scenario is described by four attribute groups (weather, time of day,
location, scene elements).  :func:`describe` renders them with a fixed
template so that the same attributes always produce byte-identical text,
and :func:`parse_description` inverts that template.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from .errors import LlmUnavailable, MalformedLlmOutput, ValidationError

if TYPE_CHECKING:
    from .llm import LlmHandle

WEATHERS = ("clear", "rain", "fog", "snow")
TIMES = ("day", "night", "dawn", "dusk")
LOCATIONS = ("urban_intersection", "highway", "roundabout", "merge_ramp", "residential")
PROVENANCES = ("template", "llm_paraphrase")

MAX_NOTE_CHARS = 280
_TAG_RE = re.compile(r"^[a-z0-9]+(?:_[a-z0-9]+)*$")

# One sentence per enum value.  Each sentence contains the value's surface form.
_WEATHER_SENTENCES = {
    "clear": "The weather is clear.",
    "rain": "The road is wet under steady rain.",
    "fog": "Dense fog limits visibility.",
    "snow": "Snow is falling on the road.",
}
_TIME_SENTENCES = {
    "day": "It is day time.",
    "night": "It is night time.",
    "dawn": "It is dawn.",
    "dusk": "It is dusk.",
}
_LOCATION_SENTENCES = {
    "urban_intersection": "The ego vehicle approaches an urban intersection.",
    "highway": "The ego vehicle drives on a highway.",
    "roundabout": "The ego vehicle enters a roundabout.",
    "merge_ramp": "The ego vehicle drives along a merge ramp.",
    "residential": "The ego vehicle drives through a residential street.",
}
_SCENE_PREFIX = "The scene contains: "
_NOTE_PREFIX = "Note: "


def surface_form(value: str) -> str:
    """Human-readable form of an enum value or scene tag."""
    return value.replace("_", " ")


@dataclass(frozen=True)
class ScenarioAttributes:
    weather: str
    time: str
    location: str
    scene_tags: tuple[str, ...] = ()
    scene_note: str | None = None

    def __post_init__(self) -> None:
        if self.weather not in WEATHERS:
            raise ValidationError(f"unknown weather {self.weather!r}")
        if self.time not in TIMES:
            raise ValidationError(f"unknown time {self.time!r}")
        if self.location not in LOCATIONS:
            raise ValidationError(f"unknown location {self.location!r}")
        if isinstance(self.scene_tags, str):
            raise ValidationError("scene_tags must be a sequence of tokens, not a string")
        for tag in self.scene_tags:
            if not isinstance(tag, str) or not _TAG_RE.match(tag):
                raise ValidationError(f"invalid scene tag {tag!r}")
        object.__setattr__(self, "scene_tags", tuple(sorted(set(self.scene_tags))))
        if self.scene_note is not None:
            if not isinstance(self.scene_note, str):
                raise ValidationError("scene_note must be a string")
            if len(self.scene_note) > MAX_NOTE_CHARS:
                raise ValidationError(f"scene_note longer than {MAX_NOTE_CHARS} chars")
            if not self.scene_note.strip():
                object.__setattr__(self, "scene_note", None)

    def to_dict(self) -> dict[str, Any]:
        return {
            "weather": self.weather,
            "time": self.time,
            "location": self.location,
            "scene_tags": list(self.scene_tags),
            "scene_note": self.scene_note,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenarioAttributes:
        return cls(
            weather=data["weather"],
            time=data["time"],
            location=data["location"],
            scene_tags=tuple(data.get("scene_tags") or ()),
            scene_note=data.get("scene_note"),
        )

    def content_hash(self) -> str:
        """64-bit hash (16 hex chars) of the canonical attribute serialization."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).hexdigest()


@dataclass(frozen=True)
class ScenarioText:
    scenario_id: str
    text: str
    provenance: str = "template"

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValidationError("scenario text must be non-empty")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")


def describe(attrs: ScenarioAttributes, scenario_id: str = "") -> ScenarioText:
    """Render attributes with the fixed template.

    Sentences appear in the order weather, time, location, scene; the scene
    sentence is dropped when there are no tags and the note, if any, is
    appended last.
    """
    parts = [
        _WEATHER_SENTENCES[attrs.weather],
        _TIME_SENTENCES[attrs.time],
        _LOCATION_SENTENCES[attrs.location],
    ]
    if attrs.scene_tags:
        parts.append(_SCENE_PREFIX + ", ".join(surface_form(t) for t in attrs.scene_tags) + ".")
    if attrs.scene_note:
        parts.append(_NOTE_PREFIX + attrs.scene_note)
    return ScenarioText(scenario_id=scenario_id, text=" ".join(parts), provenance="template")


def parse_description(text: str) -> ScenarioAttributes:
    """Invert :func:`describe`.  Only template-provenance text is parseable."""
    rest = text

    def take(table: dict[str, str], group: str) -> str:
        nonlocal rest
        for value, sentence in table.items():
            if rest.startswith(sentence):
                rest = rest[len(sentence):].lstrip(" ")
                return value
        raise ValidationError(f"cannot parse {group} sentence from {rest[:60]!r}")

    weather = take(_WEATHER_SENTENCES, "weather")
    time = take(_TIME_SENTENCES, "time")
    location = take(_LOCATION_SENTENCES, "location")
    tags: tuple[str, ...] = ()
    if rest.startswith(_SCENE_PREFIX):
        end = rest.index(".", len(_SCENE_PREFIX))
        listed = rest[len(_SCENE_PREFIX):end]
        tags = tuple(item.strip().replace(" ", "_") for item in listed.split(","))
        rest = rest[end + 1:].lstrip(" ")
    note = None
    if rest.startswith(_NOTE_PREFIX):
        note = rest[len(_NOTE_PREFIX):]
    elif rest:
        raise ValidationError(f"unexpected trailing text {rest[:60]!r}")
    return ScenarioAttributes(weather, time, location, tags, note)


PARAPHRASE_SCHEMA_ID = "paraphrase.v1"


def paraphrase(
    attrs: ScenarioAttributes,
    llm: LlmHandle,
    scenario_id: str = "",
    fallback: bool = True,
) -> ScenarioText:
    """Ask the LLM for a richer rendering of ``attrs``.

    With ``fallback`` the template rendering is returned on any LLM error.
    """
    from .llm import LlmTask, complete, prompts

    base = describe(attrs, scenario_id)
    task = LlmTask("paraphrase", prompts.paraphrase_prompt(attrs.to_dict(), base.text), PARAPHRASE_SCHEMA_ID)
    try:
        doc = complete(llm, task)
        text = doc["text"].strip()
        if not text:
            raise MalformedLlmOutput("paraphrase text is empty")
    except (LlmUnavailable, MalformedLlmOutput):
        if fallback:
            return base
        raise
    return ScenarioText(scenario_id=scenario_id, text=text, provenance="llm_paraphrase")

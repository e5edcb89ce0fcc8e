"""The scenario bank: an id-indexed, JSON-Lines backed set of scenario records."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

from .embed import Embedder
from .errors import DuplicateId, NotFound, SchemaError, SeraError, ValidationError
from .scenario import ScenarioAttributes, ScenarioText, describe

_NORM_TOL = 1e-6


@dataclass(frozen=True)
class ScenarioRecord:
    scenario_id: str
    attributes: ScenarioAttributes
    text: ScenarioText
    content_hash: str
    embedding: tuple[float, ...] | None = None
    embedder_fingerprint: str | None = None

    def __post_init__(self) -> None:
        if self.content_hash != self.attributes.content_hash():
            raise ValidationError(f"{self.scenario_id}: content_hash does not match attributes")
        if self.embedding is not None:
            norm = float(np.linalg.norm(self.embedding))
            if abs(norm - 1.0) > _NORM_TOL:
                raise ValidationError(f"{self.scenario_id}: embedding norm {norm} is not 1")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "scenario_id": self.scenario_id,
            "attributes": self.attributes.to_dict(),
            "text": self.text.text,
            "provenance": self.text.provenance,
        }
        if self.embedding is not None:
            out["embedding"] = list(self.embedding)
        out["content_hash"] = self.content_hash
        if self.embedder_fingerprint is not None:
            out["embedder_fingerprint"] = self.embedder_fingerprint
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenarioRecord:
        sid = data["scenario_id"]
        embedding = data.get("embedding")
        return cls(
            scenario_id=sid,
            attributes=ScenarioAttributes.from_dict(data["attributes"]),
            text=ScenarioText(sid, data["text"], data.get("provenance", "template")),
            content_hash=data["content_hash"],
            embedding=tuple(float(x) for x in embedding) if embedding is not None else None,
            embedder_fingerprint=data.get("embedder_fingerprint"),
        )


def make_record(
    attrs: ScenarioAttributes,
    scenario_id: str = "",
    text: ScenarioText | None = None,
) -> ScenarioRecord:
    """Build a record with template text (unless ``text`` is given)."""
    if text is None:
        text = describe(attrs, scenario_id)
    elif text.scenario_id != scenario_id:
        text = replace(text, scenario_id=scenario_id)
    return ScenarioRecord(scenario_id, attrs, text, attrs.content_hash())


@dataclass(frozen=True)
class IngestReport:
    added: int
    deduped: int


_FIELDS = ("scenario_id", "attributes", "text", "content_hash")


class Bank:
    """In-memory scenario bank.  Single writer, many readers."""

    def __init__(self, records: Iterable[ScenarioRecord] = ()):
        self._records: dict[str, ScenarioRecord] = {}
        self._by_hash: dict[str, str] = {}
        self.ingest(list(records))

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, scenario_id: object) -> bool:
        return scenario_id in self._records

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Bank):
            return NotImplemented
        return list(self.scan()) == list(other.scan())

    def __repr__(self) -> str:
        return f"Bank({len(self)} records)"

    def _next_id(self) -> str:
        n = len(self._records) + 1
        while f"s{n:04d}" in self._records:
            n += 1
        return f"s{n:04d}"

    def ingest(self, records: list[ScenarioRecord]) -> IngestReport:
        added = deduped = 0
        for rec in records:
            existing = self._by_hash.get(rec.content_hash)
            if existing is not None:
                if rec.scenario_id and rec.scenario_id != existing and rec.scenario_id in self._records:
                    raise DuplicateId(f"{rec.scenario_id} already holds different content")
                deduped += 1
                continue
            if rec.scenario_id in self._records:
                raise DuplicateId(f"{rec.scenario_id} already holds different content")
            if not rec.scenario_id:
                sid = self._next_id()
                rec = replace(rec, scenario_id=sid, text=replace(rec.text, scenario_id=sid))
            self._records[rec.scenario_id] = rec
            self._by_hash[rec.content_hash] = rec.scenario_id
            added += 1
        return IngestReport(added, deduped)

    def get(self, scenario_id: str) -> ScenarioRecord:
        try:
            return self._records[scenario_id]
        except KeyError:
            raise NotFound(f"no scenario {scenario_id!r} in bank") from None

    def scan(self) -> Iterator[ScenarioRecord]:
        for sid in sorted(self._records):
            yield self._records[sid]

    def ids(self) -> list[str]:
        return sorted(self._records)

    def embedding_for(self, scenario_id: str, embedder: Embedder) -> np.ndarray:
        """Cached embedding if its fingerprint matches, else a fresh one."""
        rec = self.get(scenario_id)
        if rec.embedding is not None and rec.embedder_fingerprint == embedder.fingerprint:
            return np.asarray(rec.embedding)
        return embedder.embed(rec.text.text)

    def refresh_embeddings(self, embedder: Embedder) -> int:
        """Recompute embeddings that are missing or stale.  Returns the count updated."""
        fp = embedder.fingerprint
        updated = 0
        for sid, rec in list(self._records.items()):
            if rec.embedding is not None and rec.embedder_fingerprint == fp:
                continue
            vec = embedder.embed(rec.text.text)
            self._records[sid] = replace(rec, embedding=tuple(float(x) for x in vec), embedder_fingerprint=fp)
            updated += 1
        return updated

    def stats(self) -> dict[str, Any]:
        recs = list(self.scan())
        tags = Counter(t for r in recs for t in r.attributes.scene_tags)
        return {
            "records": len(recs),
            "embedded": sum(r.embedding is not None for r in recs),
            "weather": dict(sorted(Counter(r.attributes.weather for r in recs).items())),
            "time": dict(sorted(Counter(r.attributes.time for r in recs).items())),
            "location": dict(sorted(Counter(r.attributes.location for r in recs).items())),
            "scene_tags": dict(sorted(tags.items())),
        }

    def save(self, path: str | Path) -> None:
        try:
            with open(path, "w", encoding="utf-8") as f:
                for rec in self.scan():
                    f.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
        except OSError as exc:
            raise SeraError(f"cannot write bank {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> Bank:
        bank = cls()
        try:
            with open(path, encoding="utf-8") as f:
                for lineno, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    rec = parse_record_line(line, lineno)
                    if rec.scenario_id in bank:
                        raise SchemaError("duplicate scenario_id", line=lineno, field="scenario_id")
                    bank.ingest([rec])
        except OSError as exc:
            raise SeraError(f"cannot read bank {path}: {exc}") from exc
        return bank


def parse_record_line(line: str, lineno: int) -> ScenarioRecord:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=lineno) from exc
    if not isinstance(data, dict):
        raise SchemaError("expected a JSON object", line=lineno)
    for name in _FIELDS:
        if name not in data:
            raise SchemaError("missing required field", line=lineno, field=name)
    try:
        return ScenarioRecord.from_dict(data)
    except KeyError as exc:
        raise SchemaError("missing required field", line=lineno, field=str(exc.args[0])) from exc
    except (ValidationError, TypeError, ValueError) as exc:
        raise SchemaError(str(exc), line=lineno) from exc


def records_from_jsonl(path: str | Path) -> list[ScenarioRecord]:
    """Read full records or bare attribute objects (one per line) for ingestion."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if "attributes" in data:
                if "content_hash" not in data:
                    attrs = ScenarioAttributes.from_dict(data["attributes"])
                    out.append(make_record(attrs, data.get("scenario_id", "")))
                else:
                    out.append(parse_record_line(line, lineno))
            else:
                try:
                    attrs = ScenarioAttributes.from_dict(data)
                except KeyError as exc:
                    raise SchemaError("missing required field", line=lineno, field=str(exc.args[0])) from exc
                except ValidationError as exc:
                    raise SchemaError(str(exc), line=lineno) from exc
                out.append(make_record(attrs, data.get("scenario_id", "")))
    return out

"""JSON / JSON-Lines readers and writers for routes, policies and logs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TypeVar

import numpy as np

from .errors import SchemaError, SeraError, ValidationError
from .harness import N_FEATURES, PerformanceLog, Route

T = TypeVar("T")


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> int:
    n = 0
    try:
        with open(path, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(json.dumps(row, ensure_ascii=False) + "\n")
                n += 1
    except OSError as exc:
        raise SeraError(f"cannot write {path}: {exc}") from exc
    return n


def read_jsonl(path: str | Path, parse: Callable[[dict[str, Any]], T]) -> list[T]:
    """Parse every non-blank line; errors name the 1-based line number."""
    out = []
    try:
        f = open(path, encoding="utf-8")
    except OSError as exc:
        raise SeraError(f"cannot read {path}: {exc}") from exc
    with f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            except KeyError as exc:
                raise SchemaError("missing required field", line=lineno, field=str(exc.args[0])) from exc
            except (ValidationError, TypeError, ValueError) as exc:
                raise SchemaError(str(exc), line=lineno) from exc
    return out


def save_routes(routes: Sequence[Route], path: str | Path) -> None:
    write_jsonl(path, (r.to_dict() for r in routes))


def load_routes(path: str | Path) -> list[Route]:
    return read_jsonl(path, Route.from_dict)


def save_logs(logs: Sequence[PerformanceLog], path: str | Path) -> None:
    write_jsonl(path, (lg.to_dict() for lg in logs))


def load_logs(path: str | Path) -> list[PerformanceLog]:
    return read_jsonl(path, PerformanceLog.from_dict)


def save_policy(theta: Sequence[float], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"theta": [float(x) for x in theta]}, f)
        f.write("\n")


def load_policy(path: str | Path) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise SeraError(f"cannot read policy {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    raw = data.get("theta") if isinstance(data, dict) else data
    try:
        theta = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError("theta must be a list of numbers", field="theta") from exc
    if theta.shape != (N_FEATURES,) or not np.all(np.isfinite(theta)):
        raise SchemaError(f"theta must hold {N_FEATURES} finite numbers", field="theta")
    return theta

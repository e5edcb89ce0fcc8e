from . import prompts
from .gateway import (
    LlmHandle,
    LlmTask,
    complete,
    embed_texts,
    extract_json,
    httpx_transport,
    request_hash,
    validate,
)
from .schemas import SCHEMAS, get_schema

__all__ = [
    "LlmHandle",
    "LlmTask",
    "SCHEMAS",
    "complete",
    "embed_texts",
    "extract_json",
    "get_schema",
    "httpx_transport",
    "prompts",
    "request_hash",
    "validate",
]

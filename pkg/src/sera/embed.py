"""Text embeddings and the scenario/pattern similarity used for relevance.

The default backend hashes tokens into a fixed number of buckets with a
keyed 64-bit hash and weights each token by ``log(1 + count)``.  There is
no corpus-level IDF, so a vector never changes as the bank grows.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import EmptyText, MalformedLlmOutput, ValidationError

if TYPE_CHECKING:
    from .llm import LlmHandle

BACKENDS = ("hashed_tfidf", "remote", "llm_judge")
DEFAULT_DIM = 512
DEFAULT_SEED = 0x5E4A_2025_0F1C_77D3

_SPLIT_RE = re.compile(r"[^a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop tokens shorter than 2."""
    return [tok for tok in _SPLIT_RE.split(text.lower()) if len(tok) >= 2]


def token_bucket(token: str, dim: int, seed: int = DEFAULT_SEED) -> int:
    key = (seed & 0xFFFF_FFFF_FFFF_FFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little") % dim


@dataclass
class Embedder:
    backend: str = "hashed_tfidf"
    dim: int = DEFAULT_DIM
    seed: int = DEFAULT_SEED
    llm: LlmHandle | None = field(default=None, repr=False, compare=False)
    _cache: dict[str, np.ndarray] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ValidationError(f"unknown embedder backend {self.backend!r}")
        if self.dim < 1:
            raise ValidationError("dim must be positive")
        if self.backend != "hashed_tfidf" and self.llm is None:
            raise ValidationError(f"{self.backend} backend needs an LLM handle")

    @property
    def fingerprint(self) -> str:
        model = self.llm.embed_model if (self.llm is not None and self.backend == "remote") else ""
        raw = f"{self.backend}|{self.dim}|{self.seed:016x}|{model}"
        return hashlib.blake2b(raw.encode("utf-8"), digest_size=8).hexdigest()

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        if self.backend == "remote":
            vec = self._embed_remote([text])[0]
        else:
            # the llm_judge backend still needs vectors for duplicate checks
            vec = self._embed_hashed(text)
        self._cache[text] = vec
        return vec

    def _embed_hashed(self, text: str) -> np.ndarray:
        counts = Counter(tokenize(text))
        if not counts:
            raise EmptyText(f"no tokens survive tokenization of {text[:40]!r}")
        vec = np.zeros(self.dim)
        for token, count in sorted(counts.items()):
            vec[token_bucket(token, self.dim, self.seed)] += np.log1p(count)
        return vec / np.linalg.norm(vec)

    def _embed_remote(self, texts: list[str]) -> list[np.ndarray]:
        from .llm import embed_texts

        for text in texts:
            if not tokenize(text):
                raise EmptyText(f"no tokens survive tokenization of {text[:40]!r}")
        out = []
        for raw in embed_texts(self.llm, texts):
            vec = np.asarray(raw, dtype=float)
            norm = np.linalg.norm(vec)
            if vec.shape != (self.dim,) or not np.isfinite(norm) or norm == 0.0:
                raise MalformedLlmOutput(f"remote embedding has shape {vec.shape}, norm {norm}")
            out.append(vec / norm)
        return out

    def phi(self, scenario_text: str, pattern_text: str) -> float:
        """Similarity between a scenario text and a failure-pattern text, in [0, 1]."""
        if self.backend == "llm_judge":
            return self._judge(scenario_text, pattern_text)
        return cosine(self.embed(scenario_text), self.embed(pattern_text))

    def _judge(self, scenario_text: str, pattern_text: str) -> float:
        from .llm import LlmTask, complete, prompts

        for text in (scenario_text, pattern_text):
            if not tokenize(text):
                raise EmptyText(f"no tokens survive tokenization of {text[:40]!r}")
        task = LlmTask(
            "judge_similarity",
            prompts.judge_similarity_prompt(scenario_text, pattern_text),
            "similarity.v1",
        )
        return min(1.0, max(0.0, float(complete(self.llm, task)["relevance"]) / 100.0))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of two unit vectors, clamped to [0, 1]."""
    return min(1.0, max(0.0, float(np.dot(u, v))))


def phi(scenario_text: str, pattern_text: str, embedder: Embedder | None = None) -> float:
    return (embedder or Embedder()).phi(scenario_text, pattern_text)

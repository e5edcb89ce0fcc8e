"""Failure-aware retrieval, reflection and refinement of candidate scenarios.

Relevance of a scenario is the mean similarity between its text and the
description of every failure pattern.  Because the subset objective is a
plain sum of per-scenario relevances, the best K-subset is the top-K list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import TYPE_CHECKING, Any, Callable, Sequence

import numpy as np

from .analysis import FailurePattern
from .bank import Bank
from .embed import Embedder, cosine
from .errors import ConflictingSuggestions, EmptyBank, EmptyPatternSet, MalformedLlmOutput, ValidationError

if TYPE_CHECKING:
    from .llm import LlmHandle

DEFAULT_K = 8
DEFAULT_TAU_COV = 0.25
DEFAULT_TAU_DUP = 0.9
DEFAULT_BETA = 0.2
OPS = ("replace", "augment", "prioritize")

PhiFn = Callable[[str, str], float]


@dataclass(frozen=True)
class ScoredCandidate:
    scenario_id: str
    relevance: float
    per_pattern: tuple[tuple[str, float], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "relevance": self.relevance,
            "per_pattern": [[pid, v] for pid, v in self.per_pattern],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScoredCandidate:
        return cls(data["scenario_id"], float(data["relevance"]),
                   tuple((pid, float(v)) for pid, v in data["per_pattern"]))


@dataclass(frozen=True)
class CandidateSet:
    K: int
    members: tuple[ScoredCandidate, ...]

    @property
    def ids(self) -> list[str]:
        return [m.scenario_id for m in self.members]

    def to_dict(self) -> dict[str, Any]:
        return {"K": self.K, "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CandidateSet:
        return cls(int(data["K"]), tuple(ScoredCandidate.from_dict(m) for m in data["members"]))


@dataclass(frozen=True)
class ReflectionSuggestion:
    op: str
    target_scenario_id: str | None = None
    replacement_or_added_id: str | None = None
    pattern_id: str | None = None
    rationale: str = ""

    def __post_init__(self) -> None:
        if self.op not in OPS:
            raise ValidationError(f"unknown suggestion op {self.op!r}")
        if self.op in ("replace", "prioritize") and not self.target_scenario_id:
            raise ValidationError(f"{self.op} needs target_scenario_id")
        if self.op in ("replace", "augment") and not self.replacement_or_added_id:
            raise ValidationError(f"{self.op} needs replacement_or_added_id")
        if self.op == "augment" and not self.pattern_id:
            raise ValidationError("augment needs pattern_id")

    @property
    def key(self) -> tuple[str, str]:
        target = self.target_scenario_id if self.op != "augment" else self.replacement_or_added_id
        return self.op, target or ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "op": self.op,
            "target_scenario_id": self.target_scenario_id,
            "replacement_or_added_id": self.replacement_or_added_id,
            "pattern_id": self.pattern_id,
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ReflectionSuggestion:
        return cls(
            op=data["op"],
            target_scenario_id=data.get("target_scenario_id"),
            replacement_or_added_id=data.get("replacement_or_added_id"),
            pattern_id=data.get("pattern_id"),
            rationale=data.get("rationale", ""),
        )


@dataclass(frozen=True)
class RefinedSet:
    members: tuple[tuple[str, float], ...]
    prioritized: tuple[str, ...] = ()
    audit: tuple[dict[str, Any], ...] = field(default=())

    @property
    def ids(self) -> list[str]:
        return [sid for sid, _ in self.members]

    def to_dict(self) -> dict[str, Any]:
        return {
            "members": [[sid, r] for sid, r in self.members],
            "prioritized": list(self.prioritized),
            "audit": [dict(a) for a in self.audit],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RefinedSet:
        return cls(tuple((sid, float(r)) for sid, r in data["members"]),
                   tuple(data.get("prioritized", ())), tuple(data.get("audit", ())))

    @classmethod
    def from_candidates(cls, candidates: CandidateSet) -> RefinedSet:
        ordered = sorted(candidates.members, key=lambda m: (-m.relevance, m.scenario_id))
        return cls(tuple((m.scenario_id, m.relevance) for m in ordered))


# --------------------------------------------------------------------------- scoring


class _Similarity:
    """Caches scenario/pattern similarities for one bank and embedder."""

    def __init__(self, bank: Bank, embedder: Embedder, phi: PhiFn | None = None):
        self.bank = bank
        self.embedder = embedder
        self.phi_fn = phi
        self._pattern_vecs: dict[str, np.ndarray] = {}
        self._cache: dict[tuple[str, str], float] = {}

    def to_pattern(self, scenario_id: str, pattern: FailurePattern) -> float:
        key = (scenario_id, pattern.description)
        if key not in self._cache:
            text = self.bank.get(scenario_id).text.text
            if self.phi_fn is not None:
                val = float(self.phi_fn(text, pattern.description))
            elif self.embedder.backend == "llm_judge":
                val = self.embedder.phi(text, pattern.description)
            else:
                vec = self._pattern_vecs.get(pattern.description)
                if vec is None:
                    vec = self._pattern_vecs[pattern.description] = self.embedder.embed(pattern.description)
                val = cosine(self.bank.embedding_for(scenario_id, self.embedder), vec)
            self._cache[key] = val
        return self._cache[key]

    def between(self, a: str, b: str) -> float:
        return cosine(self.bank.embedding_for(a, self.embedder), self.bank.embedding_for(b, self.embedder))

    def score(self, scenario_id: str, patterns: Sequence[FailurePattern]) -> ScoredCandidate:
        per = tuple((p.pattern_id, self.to_pattern(scenario_id, p)) for p in patterns)
        # fsum is correctly rounded, so r does not depend on pattern order
        return ScoredCandidate(scenario_id, math.fsum(v for _, v in per) / len(per), per)


def score_bank(bank: Bank, patterns: Sequence[FailurePattern], embedder: Embedder | None = None,
               phi: PhiFn | None = None) -> list[ScoredCandidate]:
    """Relevance of every bank record to ``patterns``, in scan order.

    ``phi`` overrides the embedder's similarity (used to study the scoring rule).
    """
    if not patterns:
        raise EmptyPatternSet("relevance needs at least one failure pattern")
    sim = _Similarity(bank, embedder or Embedder(), phi)
    return [sim.score(rec.scenario_id, patterns) for rec in bank.scan()]


def top_k(scored: Sequence[ScoredCandidate], K: int) -> CandidateSet:
    if K < 1:
        raise ValidationError("K must be >= 1")
    ordered = sorted(scored, key=lambda c: (-c.relevance, c.scenario_id))
    return CandidateSet(K, tuple(ordered[:K]))


def recommend(bank: Bank, patterns: Sequence[FailurePattern], K: int = DEFAULT_K,
              embedder: Embedder | None = None, phi: PhiFn | None = None) -> CandidateSet:
    """Top-K scenarios by relevance; ties go to the smaller scenario id."""
    if K < 1:
        raise ValidationError("K must be >= 1")
    if len(bank) == 0:
        raise EmptyBank("cannot recommend from an empty bank")
    return top_k(score_bank(bank, patterns, embedder, phi), K)


def exhaustive_top_k(scored: Sequence[ScoredCandidate], K: int) -> list[str]:
    """Reference argmax over all K-subsets (small banks only).

    Among subsets with the same total, the one whose sorted ids come first wins.
    """
    items = sorted(scored, key=lambda c: c.scenario_id)
    k = min(K, len(items))
    best_sum, best = -math.inf, ()
    for combo in combinations(items, k):
        total = math.fsum(c.relevance for c in combo)
        if total > best_sum:
            best_sum, best = total, combo
    return sorted(c.scenario_id for c in best)


def random_candidates(bank: Bank, patterns: Sequence[FailurePattern], K: int, seed: int,
                      embedder: Embedder | None = None) -> CandidateSet:
    """K scenarios drawn uniformly without replacement (ablation baseline)."""
    if len(bank) == 0:
        raise EmptyBank("cannot sample from an empty bank")
    rng = np.random.default_rng(seed)
    ids = bank.ids()
    chosen = set(rng.choice(len(ids), size=min(K, len(ids)), replace=False).tolist())
    sim = _Similarity(bank, embedder or Embedder())
    members = [sim.score(ids[i], patterns) for i in sorted(chosen)]
    return CandidateSet(K, tuple(sorted(members, key=lambda c: (-c.relevance, c.scenario_id))))


# --------------------------------------------------------------------------- reflection


def reflect_rules(candidates: CandidateSet, patterns: Sequence[FailurePattern], bank: Bank,
                  embedder: Embedder | None = None, tau_cov: float = DEFAULT_TAU_COV,
                  tau_dup: float = DEFAULT_TAU_DUP) -> list[ReflectionSuggestion]:
    """Deterministic coverage/redundancy/risk audit of ``candidates``.

    * augment: a pattern no candidate matches with similarity >= ``tau_cov``
      gets the best-matching bank scenario outside the set;
    * replace: of two candidates with text similarity >= ``tau_dup`` the less
      relevant one (the larger id on ties) is swapped for the most relevant
      non-member that is not itself a near-duplicate of a kept member;
    * prioritize: candidates matching a severity-3 pattern.
    """
    if not patterns or not candidates.members:
        return []
    sim = _Similarity(bank, embedder or Embedder())
    member_ids = candidates.ids
    relevance = {m.scenario_id: m.relevance for m in candidates.members}
    in_set = set(member_ids)
    used: set[str] = set()
    out: list[ReflectionSuggestion] = []

    for p in patterns:
        coverage = max(sim.to_pattern(sid, p) for sid in member_ids)
        if coverage >= tau_cov:
            continue
        pool = [r.scenario_id for r in bank.scan() if r.scenario_id not in in_set | used]
        if not pool:
            continue
        best = min(pool, key=lambda sid: (-sim.to_pattern(sid, p), sid))
        if sim.to_pattern(best, p) <= coverage:
            continue
        used.add(best)
        out.append(ReflectionSuggestion(
            "augment", None, best, p.pattern_id,
            f"pattern {p.pattern_id} covered only up to {coverage:.3f} < {tau_cov}",
        ))

    removed: set[str] = set()
    ranked_pool: list[str] | None = None
    for a, b in combinations(sorted(member_ids), 2):
        if a in removed or b in removed or sim.between(a, b) < tau_dup:
            continue
        drop = a if (relevance[a], b) < (relevance[b], a) else b
        keep = b if drop == a else a
        if ranked_pool is None:
            ranked_pool = [c.scenario_id for c in top_k(score_bank(bank, patterns, sim.embedder),
                                                        len(bank)).members]
        kept = [sid for sid in member_ids if sid not in removed and sid != drop]
        replacement = next(
            (sid for sid in ranked_pool
             if sid not in in_set and sid not in used
             and all(sim.between(sid, k) < tau_dup for k in kept)),
            None,
        )
        if replacement is None:
            continue
        removed.add(drop)
        used.add(replacement)
        out.append(ReflectionSuggestion(
            "replace", drop, replacement, None,
            f"{drop} near-duplicates {keep} (similarity >= {tau_dup})",
        ))

    severe = [p for p in patterns if p.severity == 3]
    final_members = [sid for sid in member_ids if sid not in removed]
    final_members += [s.replacement_or_added_id for s in out]
    for sid in sorted(set(final_members)):
        hits = [p.pattern_id for p in severe if sim.to_pattern(sid, p) >= tau_cov]
        if hits:
            out.append(ReflectionSuggestion(
                "prioritize", sid, None, None, f"matches severity-3 pattern(s) {', '.join(hits)}",
            ))
    return sorted(out, key=lambda s: (OPS.index(s.op), s.target_scenario_id or "", s.replacement_or_added_id or ""))


def validate_suggestions(suggestions: Sequence[ReflectionSuggestion], candidates: CandidateSet,
                         patterns: Sequence[FailurePattern], bank: Bank) -> None:
    """Raise ValidationError on dangling ids or repeated (op, target) pairs."""
    members = set(candidates.ids)
    pattern_ids = {p.pattern_id for p in patterns}
    added = {s.replacement_or_added_id for s in suggestions if s.op in ("replace", "augment")}
    seen = set()
    for s in suggestions:
        if s.key in seen:
            raise ValidationError(f"more than one {s.op} suggestion for {s.key[1]}")
        seen.add(s.key)
        if s.op == "replace":
            if s.target_scenario_id not in members:
                raise ValidationError(f"replace target {s.target_scenario_id} is not a candidate")
        if s.op in ("replace", "augment") and s.replacement_or_added_id not in bank:
            raise ValidationError(f"{s.op} names unknown scenario {s.replacement_or_added_id}")
        if s.op == "augment" and s.pattern_id not in pattern_ids:
            raise ValidationError(f"augment names unknown pattern {s.pattern_id}")
        if s.op == "prioritize" and s.target_scenario_id not in members | added:
            raise ValidationError(f"prioritize target {s.target_scenario_id} is not in the set")


def reflect_llm(candidates: CandidateSet, patterns: Sequence[FailurePattern], llm: LlmHandle,
                bank: Bank, embedder: Embedder | None = None,
                n_alternatives: int = 16) -> list[ReflectionSuggestion]:
    """LLM audit of the candidate set.  Suggestions naming unknown ids are rejected."""
    from .llm import LlmTask, complete, prompts

    if not candidates.members or not patterns:
        raise ValidationError("reflection needs candidates and patterns")
    ranked = top_k(score_bank(bank, patterns, embedder), len(bank)).members
    members = set(candidates.ids)
    alternatives = [c for c in ranked if c.scenario_id not in members][:n_alternatives]

    def entry(c: ScoredCandidate) -> dict[str, Any]:
        return {"scenario_id": c.scenario_id, "relevance": round(c.relevance, 4),
                "text": bank.get(c.scenario_id).text.text}

    task = LlmTask("reflect", prompts.reflect_prompt(
        [entry(c) for c in candidates.members],
        [p.to_dict() for p in patterns],
        [entry(c) for c in alternatives],
    ), "reflection.v1")
    doc = complete(llm, task)
    try:
        suggestions = [ReflectionSuggestion.from_dict(s) for s in doc["suggestions"]]
        validate_suggestions(suggestions, candidates, patterns, bank)
    except (ValidationError, KeyError, TypeError) as exc:
        raise MalformedLlmOutput(f"invalid reflection suggestion: {exc}") from exc
    return suggestions


# --------------------------------------------------------------------------- refinement


def refine(candidates: CandidateSet, suggestions: Sequence[ReflectionSuggestion], bank: Bank,
           patterns: Sequence[FailurePattern], embedder: Embedder | None = None,
           beta: float = DEFAULT_BETA) -> RefinedSet:
    """Apply suggestions (replace, then augment, then prioritize) and rank by r'.

    The set keeps its size: an augmentation evicts the least relevant member
    that is neither marked for prioritization nor added by this refinement.
    r' = r * (1 + beta) for prioritized members and r otherwise.
    """
    validate_suggestions(suggestions, candidates, patterns, bank)
    replaced = {s.target_scenario_id for s in suggestions if s.op == "replace"}
    to_prioritize = {s.target_scenario_id for s in suggestions if s.op == "prioritize"}
    clash = replaced & to_prioritize
    if clash:
        raise ConflictingSuggestions(f"{sorted(clash)} both replaced and prioritized")

    sim = _Similarity(bank, embedder or Embedder())
    relevance = {m.scenario_id: m.relevance for m in candidates.members}

    def r_of(sid: str) -> float:
        if sid not in relevance:
            relevance[sid] = sim.score(sid, patterns).relevance if patterns else 0.0
        return relevance[sid]

    members = list(candidates.ids)
    audit: list[dict[str, Any]] = []
    protected: set[str] = set()

    for op in OPS:
        for s in (s for s in suggestions if s.op == op):
            rec = dict(s.to_dict(), status="applied")
            rec.pop("rationale")
            if op == "replace":
                if s.replacement_or_added_id in members:
                    rec["status"] = "skipped: replacement already in set"
                else:
                    members[members.index(s.target_scenario_id)] = s.replacement_or_added_id
            elif op == "augment":
                new = s.replacement_or_added_id
                if new in members:
                    rec["status"] = "skipped: already in set"
                elif len(members) < candidates.K:
                    members.append(new)
                    protected.add(new)
                else:
                    evictable = [m for m in members if m not in to_prioritize and m not in protected]
                    if not evictable:
                        rec["status"] = "skipped: nothing evictable"
                    else:
                        lowest = min(r_of(m) for m in evictable)
                        victim = max(m for m in evictable if r_of(m) == lowest)
                        members[members.index(victim)] = new
                        protected.add(new)
                        rec["evicted"] = victim
            else:
                if s.target_scenario_id not in members:
                    rec["status"] = "skipped: target not in set"
            audit.append(rec)

    prioritized = sorted(to_prioritize & set(members))
    scored = [(sid, r_of(sid) * (1.0 + beta) if sid in prioritized else r_of(sid)) for sid in members]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return RefinedSet(tuple(scored), tuple(prioritized), tuple(audit))


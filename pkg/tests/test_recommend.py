from __future__ import annotations

import random

import pytest

import oracles
from conftest import fenced, record_then_replay
from sera.analysis import FailurePattern
from sera.bank import Bank, make_record
from sera.embed import phi
from sera.errors import ConflictingSuggestions, EmptyBank, EmptyPatternSet, MalformedLlmOutput
from sera.recommend import (
    CandidateSet, ReflectionSuggestion, RefinedSet, ScoredCandidate, recommend, reflect_llm,
    reflect_rules, refine, score_bank,
)
from sera.scenario import ScenarioAttributes as A
from sera.scenario import ScenarioText


def pattern(pid: str, description: str, category: str = "collision", severity: int = 3) -> FailurePattern:
    return FailurePattern(pid, category, {}, description, (("r1", 0),), severity)


FOG_COLLISION = pattern("p01", "collision in fog at night near stopped lead vehicle")
RED_DAY = pattern("p02", "ran a red light in clear weather during the day near red light",
                  "traffic_signal_violation", 2)


def five_bank() -> Bank:
    return Bank([make_record(a) for a in (
        A("clear", "day", "urban_intersection", ("red_light",)),
        A("rain", "dusk", "highway"),
        A("clear", "night", "urban_intersection", ("red_light",)),
        A("fog", "night", "merge_ramp", ("stopped_lead_vehicle",)),
        A("snow", "day", "roundabout"),
    )])


def test_singleton_relevance_is_phi():
    bank = five_bank()
    for c in score_bank(bank, [FOG_COLLISION]):
        assert c.relevance == phi(bank.get(c.scenario_id).text.text, FOG_COLLISION.description)


def test_duplicate_pattern_leaves_relevance_unchanged():
    bank = five_bank()
    once = score_bank(bank, [FOG_COLLISION])
    twice = score_bank(bank, [FOG_COLLISION, pattern("p09", FOG_COLLISION.description)])
    assert [c.relevance for c in once] == [c.relevance for c in twice]


def test_scores_match_independent_computation():
    bank = five_bank()
    for c in score_bank(bank, [FOG_COLLISION, RED_DAY]):
        text = bank.get(c.scenario_id).text.text
        expected = (oracles.similarity(text, FOG_COLLISION.description)
                    + oracles.similarity(text, RED_DAY.description)) / 2
        assert c.relevance == pytest.approx(expected, abs=1e-12)


def test_k_at_least_bank_size_returns_everything():
    cs = recommend(five_bank(), [FOG_COLLISION], K=10)
    assert sorted(cs.ids) == five_bank().ids()
    assert [m.relevance for m in cs.members] == sorted((m.relevance for m in cs.members), reverse=True)


def test_ties_go_to_smaller_ids():
    cs = recommend(five_bank(), [FOG_COLLISION], K=3, phi=lambda a, b: 0.5)
    assert cs.ids == ["s0001", "s0002", "s0003"]


def test_errors():
    with pytest.raises(EmptyPatternSet):
        recommend(five_bank(), [], K=2)
    with pytest.raises(EmptyBank):
        recommend(Bank(), [FOG_COLLISION], K=2)


def test_matches_exhaustive_oracle_on_small_banks():
    rng = random.Random(5)
    for _ in range(30):
        ids = [f"s{i:04d}" for i in range(1, rng.randint(2, 9))]
        scores = {i: rng.choice([0.1, 0.2, 0.3, rng.random()]) for i in ids}
        K = rng.randint(1, 4)
        cs = recommend(Bank([make_record(A("clear", "day", "highway", (), i)) for i in ids]),
                       [FOG_COLLISION], K, phi=lambda text, p: scores[text.split("Note: ")[1]])
        assert sorted(cs.ids) == oracles.best_subset(scores, K)


# --------------------------------------------------------------------------- reflection


def candidates_for(bank: Bank, ids: list[str], patterns) -> CandidateSet:
    by_id = {c.scenario_id: c for c in score_bank(bank, patterns)}
    return CandidateSet(len(ids), tuple(by_id[i] for i in ids))


def test_no_suggestions_when_covered_and_distinct():
    bank = five_bank()
    cs = candidates_for(bank, ["s0001", "s0004"], [RED_DAY])
    assert reflect_rules(cs, [RED_DAY], bank) == []


def test_identical_texts_replace_the_higher_id():
    same = "The weather is clear. It is day time. A red light ahead."
    bank = Bank([
        make_record(A("clear", "day", "urban_intersection", (), "one"), text=ScenarioText("", same)),
        make_record(A("clear", "day", "urban_intersection", (), "two"), text=ScenarioText("", same)),
        make_record(A("rain", "dusk", "highway")),
    ])
    cs = candidates_for(bank, ["s0001", "s0002"], [RED_DAY])
    replaces = [s for s in reflect_rules(cs, [RED_DAY], bank) if s.op == "replace"]
    assert len(replaces) == 1
    assert replaces[0].target_scenario_id == "s0002"
    assert replaces[0].replacement_or_added_id == "s0003"


def test_uncovered_fog_collision_is_augmented():
    bank = five_bank()
    patterns = [RED_DAY, FOG_COLLISION]
    cs = candidates_for(bank, ["s0001", "s0002", "s0003"], patterns)
    suggestions = reflect_rules(cs, patterns, bank)
    augments = [s for s in suggestions if s.op == "augment"]
    assert [(s.replacement_or_added_id, s.pattern_id) for s in augments] == [("s0004", "p01")]
    assert ("prioritize", "s0004") in {s.key for s in suggestions}


def test_refine_identity():
    bank = five_bank()
    cs = candidates_for(bank, ["s0001", "s0003"], [RED_DAY])
    assert refine(cs, [], bank, [RED_DAY]) == RefinedSet.from_candidates(cs)


def test_refine_replace_keeps_size():
    bank = five_bank()
    cs = candidates_for(bank, ["s0001", "s0003"], [RED_DAY])
    out = refine(cs, [ReflectionSuggestion("replace", "s0003", "s0005")], bank, [RED_DAY])
    assert sorted(out.ids) == ["s0001", "s0005"]


def test_prioritize_boost():
    cs = CandidateSet(2, (ScoredCandidate("s0002", 0.55, ()), ScoredCandidate("s0001", 0.5, ())))
    out = refine(cs, [ReflectionSuggestion("prioritize", "s0001")], five_bank(), [RED_DAY])
    assert out.members[0] == ("s0001", pytest.approx(0.6))
    assert out.members[1] == ("s0002", 0.55)
    assert out.prioritized == ("s0001",)


def test_augment_evicts_least_relevant_unprotected_member():
    cs = CandidateSet(3, (ScoredCandidate("s0001", 0.9, ()), ScoredCandidate("s0002", 0.1, ()),
                          ScoredCandidate("s0003", 0.2, ())))
    out = refine(cs, [ReflectionSuggestion("augment", None, "s0004", "p01"),
                      ReflectionSuggestion("prioritize", "s0002")], five_bank(), [FOG_COLLISION])
    assert sorted(out.ids) == ["s0001", "s0002", "s0004"]
    assert out.audit[0]["evicted"] == "s0003"


def test_conflicting_suggestions():
    bank = five_bank()
    cs = candidates_for(bank, ["s0001", "s0003"], [RED_DAY])
    with pytest.raises(ConflictingSuggestions):
        refine(cs, [ReflectionSuggestion("replace", "s0003", "s0005"),
                    ReflectionSuggestion("prioritize", "s0003")], bank, [RED_DAY])


def test_refinement_preserves_size_and_uniqueness():
    rng = random.Random(11)
    bank = five_bank()
    for _ in range(200):
        members = rng.sample(bank.ids(), 3)
        cs = CandidateSet(3, tuple(ScoredCandidate(i, rng.random(), ()) for i in members))
        outside = [i for i in bank.ids() if i not in members]
        suggestions, used = [], set()
        for _ in range(rng.randint(0, 3)):
            op = rng.choice(["replace", "augment", "prioritize"])
            if op == "replace":
                targets = [m for m in members if ("replace", m) not in {s.key for s in suggestions}]
                pool = [o for o in outside if o not in used]
                if targets and pool:
                    new = rng.choice(pool)
                    used.add(new)
                    suggestions.append(ReflectionSuggestion("replace", rng.choice(targets), new))
            elif op == "augment":
                pool = [o for o in outside if o not in used]
                if pool:
                    new = rng.choice(pool)
                    used.add(new)
                    suggestions.append(ReflectionSuggestion("augment", None, new, "p01"))
        replaced = {s.target_scenario_id for s in suggestions if s.op == "replace"}
        keep = [m for m in members if m not in replaced]
        if keep and rng.random() < 0.5:
            suggestions.append(ReflectionSuggestion("prioritize", rng.choice(keep)))
        out = refine(cs, suggestions, bank, [FOG_COLLISION])
        assert len(out.ids) == 3 == len(set(out.ids))


def test_rule_reflection_is_idempotent_on_its_output():
    same = "The weather is clear. It is day time. A red light ahead."
    bank = Bank([
        make_record(A("clear", "day", "urban_intersection", (), "one"), text=ScenarioText("", same)),
        make_record(A("clear", "day", "urban_intersection", (), "two"), text=ScenarioText("", same)),
        make_record(A("rain", "dusk", "highway")),
        make_record(A("fog", "night", "merge_ramp", ("stopped_lead_vehicle",))),
    ])
    patterns = [RED_DAY]
    cs = candidates_for(bank, ["s0001", "s0002"], patterns)
    first = reflect_rules(cs, patterns, bank)
    refined = refine(cs, first, bank, patterns)
    again = reflect_rules(candidates_for(bank, refined.ids, patterns), patterns, bank)
    assert [s for s in again if s.op == "replace"] == []


# --------------------------------------------------------------------------- LLM reflection


def test_reflect_llm_replay(tmp_path):
    bank = five_bank()
    patterns = [RED_DAY, FOG_COLLISION]
    cs = candidates_for(bank, ["s0001", "s0003"], patterns)
    doc = {"suggestions": [{"op": "augment", "replacement_or_added_id": "s0004", "pattern_id": "p01",
                            "rationale": "fog collisions are not covered"}]}
    rec, rep, _ = record_then_replay(tmp_path, [fenced(doc)])
    reflect_llm(cs, patterns, rec, bank)
    out = reflect_llm(cs, patterns, rep, bank)
    assert out == [ReflectionSuggestion("augment", None, "s0004", "p01", "fog collisions are not covered")]


def test_reflect_llm_unknown_id_and_empty_list(tmp_path):
    bank = five_bank()
    cs = candidates_for(bank, ["s0001"], [RED_DAY])
    bad = {"suggestions": [{"op": "augment", "replacement_or_added_id": "s0777", "pattern_id": "p02",
                            "rationale": "x"}]}
    rec, _, _ = record_then_replay(tmp_path / "a", [fenced(bad)])
    with pytest.raises(MalformedLlmOutput):
        reflect_llm(cs, [RED_DAY], rec, bank)
    rec, _, _ = record_then_replay(tmp_path / "b", [fenced({"suggestions": []})])
    assert reflect_llm(cs, [RED_DAY], rec, bank) == []

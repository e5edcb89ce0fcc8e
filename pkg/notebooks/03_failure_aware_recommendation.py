"""
From failures to training scenarios
===================================

Infractions from the pre-evaluation are grouped into failure patterns.  Each
bank scenario gets a relevance score (the mean similarity to the patterns),
the top K are selected, and a reflection pass audits that selection for gaps
and redundancy before it is used for fine-tuning.
"""

# %%
from sera.analysis import extract_patterns
from sera.embed import Embedder
from sera.fixtures import BASELINE_THETA, acceptance_bank, acceptance_routes
from sera.harness import pre_evaluate
from sera.recommend import recommend, reflect_rules, refine

bank = acceptance_bank()
emb = Embedder()
logs = pre_evaluate(BASELINE_THETA, acceptance_routes())

# %%
# Rule-based analysis: one pattern per (infraction kind, weather, time) group.
patterns = extract_patterns(logs, mode="rules")
for p in patterns:
    print(p.pattern_id, f"sev={p.severity}", p.description, p.evidence)

# %%
# Initial recommendation: the eight most relevant scenarios.
cands = recommend(bank, patterns, K=8, embedder=emb)
for m in cands.members:
    print(f"{m.scenario_id} r={m.relevance:.3f}  {bank.get(m.scenario_id).text.text[:80]}")

# %%
# Reflection checks coverage (is every pattern matched by some candidate?),
# redundancy (near-duplicate texts) and risk (severity-3 patterns).
suggestions = reflect_rules(cands, patterns, bank, emb)
for s in suggestions:
    print(s.op, s.target_scenario_id or "", s.replacement_or_added_id or "", "|", s.rationale)

# %%
# Refinement applies the suggestions in a fixed order and keeps the set at K.
# Prioritised members get their relevance boosted by 20 %.
refined = refine(cands, suggestions, bank, patterns, emb)
for sid, r in refined.members:
    mark = "*" if sid in refined.prioritized else " "
    print(f"{mark} {sid} r'={r:.3f}  {bank.get(sid).text.text[:80]}")
print("audit:", refined.audit)

"""
Scenario descriptions and the scenario bank
===========================================

A scenario is a handful of structured attributes: weather, time of day,
location, scene tags and an optional free-text note.  The bank stores each one
with a deterministic text rendering, and that text is what the recommender
compares against failure descriptions.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from sera.bank import Bank, make_record
from sera.embed import Embedder, phi, tokenize
from sera.fixtures import acceptance_bank
from sera.scenario import ScenarioAttributes, describe, parse_description

# %%
# The template renders one sentence per attribute group, always in the same
# order, so the same attributes always give byte-identical text.
a = ScenarioAttributes("fog", "night", "urban_intersection", ("occluded_pedestrian", "wet_road"))
print(describe(a).text)
print(parse_description(describe(a).text) == a)

# %%
# Ingestion deduplicates by a 64-bit hash of the canonical attributes and
# hands out sequential ids.
bank = Bank()
report = bank.ingest([make_record(a), make_record(a), make_record(ScenarioAttributes("rain", "dusk", "highway"))])
print(report, bank.ids())

# %%
# The demonstration bank has forty scenarios.  Most are routine free-flow
# driving; a minority carry the hazards the baseline policy struggles with.
demo = acceptance_bank()
for key, counts in demo.stats().items():
    print(f"{key:>12}: {counts}")

# %%
# Embeddings are hashed term frequencies: every token lands in one of 512
# buckets (keyed blake2b), weighted by log(1 + count), then L2-normalised.
emb = Embedder()
v = emb.embed("fog fog night")
nz = np.flatnonzero(v)
print(tokenize("fog fog night"), nz, v[nz].round(4))
print("log(3)/log(2) =", round(np.log(3) / np.log(2), 4), " ratio in vector =", round(v[nz].max() / v[nz].min(), 4))

# %%
# phi is the cosine of two embeddings, clipped to [0, 1].
pattern = "collision in fog at night near occluded pedestrian"
for rec in list(demo.scan())[:12]:
    print(f"{rec.scenario_id}  {phi(rec.text.text, pattern):.3f}  {rec.text.text[:70]}")

# %%
# Banks persist as JSON Lines and load back to an equal object.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "bank.jsonl"
    demo.save(path)
    print(path.read_text().splitlines()[0][:160], "...")
    print("roundtrip equal:", Bank.load(path) == demo)

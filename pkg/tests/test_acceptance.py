"""Acceptance criteria.  Each test prints one ``PASS``/``FAIL`` line; the lines
are repeated in the pytest terminal summary.  Run standalone with
``python tests/test_acceptance.py``."""

from __future__ import annotations

import json
import os
import random
import re
import socket
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from conftest import CountingTransport, ScriptedTransport, fenced  # noqa: E402
from sera.analysis import extract_patterns_rules, FailurePattern  # noqa: E402
from sera.bank import Bank, make_record  # noqa: E402
from sera.embed import Embedder, phi  # noqa: E402
from sera.errors import MalformedLlmOutput, SchemaError  # noqa: E402
from sera.fixtures import BASELINE_THETA, acceptance_bank, acceptance_routes, write_fixture  # noqa: E402
from sera.harness import (  # noqa: E402
    RawEvent, Route, Trajectory, evaluate, pre_evaluate, scenario_to_route,
)
from sera.io import load_logs, load_routes, save_logs, save_routes  # noqa: E402
from sera.llm import LlmHandle, LlmTask, complete, prompts  # noqa: E402
from sera.recommend import recommend, score_bank  # noqa: E402
from sera.repair import RepairConfig, dumps_report, repair, run_ablation  # noqa: E402
from sera.scenario import LOCATIONS, TIMES, WEATHERS, ScenarioAttributes  # noqa: E402

VERDICTS: list[str] = []
RED_RE = re.compile(r"Agent ran a red light at \(x=[-0-9.]+, y=[-0-9.]+, z=[-0-9.]+\)")
TAGS = ["red_light", "stopped_lead_vehicle", "occluded_pedestrian", "crossing_pedestrian",
        "school_zone", "wet_road", "cyclist", "bus_stop"]
VOCAB = ["collision", "fog", "night", "red", "light", "rain", "pedestrian", "merge", "lead", "vehicle",
         "snow", "dusk", "speed", "zone", "school", "the", "near", "ran", "at", "in"]


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def random_attrs(rng: random.Random) -> ScenarioAttributes:
    return ScenarioAttributes(rng.choice(WEATHERS), rng.choice(TIMES), rng.choice(LOCATIONS),
                              tuple(rng.sample(TAGS, rng.randint(0, 3))), f"variant {rng.randrange(10**9)}")


def random_pattern(rng: random.Random, pid: str) -> FailurePattern:
    text = " ".join(rng.choices(VOCAB, k=rng.randint(2, 8)))
    return FailurePattern(pid, "collision", {}, text, (("r", 0),), 3)


def random_bank(rng: random.Random, n: int) -> Bank:
    return Bank([make_record(random_attrs(rng)) for _ in range(n)])


# --------------------------------------------------------------------------- 1


def test_criterion_01_topk_matches_exhaustive_oracle():
    rng = random.Random(101)
    cases = []
    for _ in range(200):
        bank = random_bank(rng, rng.randint(1, 12))
        patterns = [random_pattern(rng, f"p{i}") for i in range(rng.randint(1, 3))]
        cases.append((bank, patterns, rng.randint(1, 4)))
    emb = Embedder()
    start = time.perf_counter()
    mismatches = 0
    for bank, patterns, K in cases:
        got = sorted(recommend(bank, patterns, K, emb).ids)
        scores = {c.scenario_id: c.relevance for c in score_bank(bank, patterns, emb)}
        mismatches += got != oracles.best_subset(scores, K)
    elapsed = time.perf_counter() - start
    verdict(1, mismatches == 0 and elapsed < 5.0,
            f"top-K == exhaustive argmax on 200 banks (mismatches={mismatches}, {elapsed:.2f} s < 5 s)")


# --------------------------------------------------------------------------- 2


def test_criterion_02_relevance_arithmetic():
    rng = random.Random(202)
    emb = Embedder()
    failures = []
    for draw in range(500):
        bank = random_bank(rng, rng.randint(2, 8))
        patterns = [random_pattern(rng, f"p{i}") for i in range(rng.randint(1, 5))]
        sid = rng.choice(bank.ids())
        text = bank.get(sid).text.text
        single = {c.scenario_id: c.relevance for c in score_bank(bank, patterns[:1], emb)}
        if single[sid] != phi(text, patterns[0].description, emb):
            failures.append((draw, "singleton"))
        shuffled = patterns[:]
        rng.shuffle(shuffled)
        a = [c.relevance for c in score_bank(bank, patterns, emb)]
        b = [c.relevance for c in score_bank(bank, shuffled, emb)]
        if a != b:
            failures.append((draw, "permutation"))
        c = rng.uniform(0.05, 20.0)
        K = rng.randint(1, len(bank))
        base = recommend(bank, patterns, K, emb)
        scaled = recommend(bank, patterns, K, emb, phi=lambda s, p: c * phi(s, p, emb))
        if base.ids != scaled.ids:
            failures.append((draw, "scaling"))
    verdict(2, not failures,
            f"r == phi for singleton P, permutation-invariant, argmax-invariant under scaling "
            f"(500 draws, failures={failures[:3]})")


# --------------------------------------------------------------------------- 3


def test_criterion_03_similarity_properties():
    rng = random.Random(303)
    bad = 0
    for _ in range(500):
        a = " ".join(rng.choices(VOCAB, k=rng.randint(1, 10)))
        b = " ".join(rng.choices(VOCAB, k=rng.randint(1, 10)))
        bad += not abs(phi(a, a) - 1.0) <= 1e-9
        bad += not 0.0 <= phi(a, b) <= 1.0
        bad += phi(a, b) != phi(b, a)
    verdict(3, bad == 0, f"phi(t,t)=1±1e-9, 0<=phi<=1, symmetric over 500 random pairs (violations={bad})")


# --------------------------------------------------------------------------- 4


def test_criterion_04_red_light_message_format():
    rng = random.Random(404)
    routes = acceptance_routes() + [
        scenario_to_route(ScenarioAttributes(rng.choice(WEATHERS), rng.choice(TIMES), "urban_intersection",
                                             ("red_light",)), seed)
        for seed in range(60)
    ]
    thetas = [BASELINE_THETA, np.array([2.0, 0, 0, 0, 0, 0, 0, 0])]
    messages = [e.message for th in thetas for lg in pre_evaluate(th, routes)
                for e in lg.events if e.kind == "red_light"]
    ok = bool(messages) and all(RED_RE.fullmatch(m) for m in messages)
    verdict(4, ok, f"{len(messages)} red-light messages all match the verbatim template")


# --------------------------------------------------------------------------- 5


def test_criterion_05_metric_contracts():
    route = Route("m", ScenarioAttributes("clear", "day", "highway"))
    base = dict(route_id="m", steps=(), terminal_reason="goal", final_position_m=150.0)
    clean = evaluate(Trajectory(**base), route)
    ok = abs(clean.metrics.driving_score - 100.0) <= 1e-9 and clean.success
    kinds = ["speeding", "route_deviation", "red_light", "collision", "speeding", "red_light"]
    checks = 0
    for final in (150.0, 90.0):
        prev = evaluate(Trajectory(**dict(base, final_position_m=final)), route)
        for n in range(1, len(kinds) + 1):
            events = tuple(RawEvent(k, i, 10.0 * i) for i, k in enumerate(kinds[:n]))
            log = evaluate(Trajectory(**dict(base, final_position_m=final, events=events)), route)
            ok &= log.metrics.driving_score < prev.metrics.driving_score
            critical = {"collision", "red_light"} & set(kinds[:n])
            ok &= log.success == (not critical and final == 150.0)
            prev = log
            checks += 1
    verdict(5, bool(ok), f"clean run scores 100; {checks} added infractions each lower the score; "
                         "success == full completion without collision or red light")


# --------------------------------------------------------------------------- 6


def test_criterion_06_repair_effectiveness():
    start = time.perf_counter()
    report = repair(BASELINE_THETA, acceptance_routes(), acceptance_bank(), RepairConfig())
    elapsed = time.perf_counter() - start
    b, a = report["before"]["summary"], report["after"]["summary"]
    ok = (a["infractions"] < b["infractions"] and a["driving_score"] > b["driving_score"]
          and a["success_rate"] > b["success_rate"] and elapsed < 60.0)
    verdict(6, ok, f"infractions {b['infractions']} -> {a['infractions']}, driving score "
                   f"{b['driving_score']:.2f} -> {a['driving_score']:.2f}, success "
                   f"{b['success_rate']:.0f}% -> {a['success_rate']:.0f}% in {elapsed:.1f} s (< 60 s)")


# --------------------------------------------------------------------------- 7


def test_criterion_07_ablation_ordering(tmp_path):
    cfg = RepairConfig.load(write_fixture(tmp_path))
    ds = {arm: r["after"]["summary"]["driving_score"] for arm, r in run_ablation(cfg).items()}
    ok = ds["full"] >= ds["initial"] >= ds["random"] and ds["full"] > ds["random"]
    verdict(7, ok, "final driving score full >= initial >= random: "
                   + ", ".join(f"{k}={v:.2f}" for k, v in ds.items()))


# --------------------------------------------------------------------------- 8


def _fixture_transport(logs):
    """Answers analysis prompts with rule-derived patterns and reflection prompts with no changes."""
    patterns = {"patterns": [p.to_dict() for p in extract_patterns_rules(logs)]}

    def transport(url, payload, headers, timeout_s):
        prompt = payload["messages"][1]["content"]
        doc = patterns if "failure_patterns.v1" in prompt else {"suggestions": []}
        return {"choices": [{"message": {"content": fenced(doc)}}]}

    return transport


def _run_cli(args, env=None):
    return subprocess.run([sys.executable, "-m", "sera.cli", *args], capture_output=True, text=True,
                          env={**os.environ, **(env or {})}, check=True)


def test_criterion_08_determinism(tmp_path):
    cfg_path = write_fixture(tmp_path)
    for i in (1, 2):
        _run_cli(["repair", "--config", str(cfg_path), "--out", str(tmp_path / f"rules{i}.json")])
    rules_same = (tmp_path / "rules1.json").read_bytes() == (tmp_path / "rules2.json").read_bytes()

    # record LLM fixtures once, then replay them in two separate processes
    llm_cfg = tmp_path / "llm.toml"
    llm_cfg.write_text(cfg_path.read_text().replace('analyzer = "rules"', 'analyzer = "llm"')
                       .replace('reflection = "rules"', 'reflection = "llm"'))
    logs = pre_evaluate(BASELINE_THETA, acceptance_routes())
    recorder = LlmHandle(mode="record", fixture_dir=tmp_path / "llm", transport=_fixture_transport(logs))
    repair(BASELINE_THETA, acceptance_routes(), acceptance_bank(), RepairConfig.load(llm_cfg), recorder)
    env = {"SERA_LLM_MODE": "replay", "SERA_FIXTURE_DIR": str(tmp_path / "llm"),
           "SERA_LLM_BASE_URL": "http://127.0.0.1:9"}
    for i in (1, 2):
        _run_cli(["repair", "--config", str(llm_cfg), "--out", str(tmp_path / f"llm{i}.json")], env)
    llm_same = (tmp_path / "llm1.json").read_bytes() == (tmp_path / "llm2.json").read_bytes()
    verdict(8, rules_same and llm_same,
            f"`sera repair` reports byte-identical across runs (rules={rules_same}, llm replay={llm_same})")


# --------------------------------------------------------------------------- 9


def _schema_error_line(path: Path, loader, line_no: int) -> int | None:
    lines = path.read_text().splitlines()
    lines[line_no - 1] = lines[line_no - 1][:-7]
    path.write_text("\n".join(lines) + "\n")
    try:
        loader(path)
    except SchemaError as exc:
        return exc.line if f"line {line_no}" in str(exc) else None
    return None


def test_criterion_09_persistence(tmp_path):
    bank = acceptance_bank()
    bank.refresh_embeddings(Embedder())
    bank.save(tmp_path / "bank.jsonl")
    ok = Bank.load(tmp_path / "bank.jsonl") == bank
    routes = acceptance_routes()
    save_routes(routes, tmp_path / "routes.jsonl")
    ok &= load_routes(tmp_path / "routes.jsonl") == routes
    logs = pre_evaluate(BASELINE_THETA, routes)
    save_logs(logs, tmp_path / "logs.jsonl")
    ok &= load_logs(tmp_path / "logs.jsonl") == list(logs)
    report = repair(BASELINE_THETA, routes[:3], bank, RepairConfig(max_grad_steps=5))
    (tmp_path / "report.json").write_text(dumps_report(report))
    ok &= json.loads((tmp_path / "report.json").read_text()) == json.loads(json.dumps(report))
    lines = {
        "bank": _schema_error_line(tmp_path / "bank.jsonl", Bank.load, 7),
        "routes": _schema_error_line(tmp_path / "routes.jsonl", load_routes, 4),
        "logs": _schema_error_line(tmp_path / "logs.jsonl", load_logs, 9),
    }
    ok &= lines == {"bank": 7, "routes": 4, "logs": 9}
    verdict(9, bool(ok), f"save -> load structurally equal; malformed line reported as {lines}")


# --------------------------------------------------------------------------- 10


def test_criterion_10_llm_gateway(tmp_path, monkeypatch):
    task = LlmTask("paraphrase", prompts.paraphrase_prompt({"weather": "fog"}, "Dense fog."), "paraphrase.v1")
    bad = fenced({"sentence": "missing the required key"})
    transport = ScriptedTransport([bad])
    recorder = LlmHandle(mode="record", fixture_dir=tmp_path, transport=transport, max_retries=2)
    with pytest.raises(MalformedLlmOutput):
        complete(recorder, task)
    attempts = len(transport.calls)

    opened: list = []

    def forbid(*args, **kwargs):
        opened.append(args)
        raise OSError("network disabled in replay")

    monkeypatch.setattr(socket, "socket", forbid)
    monkeypatch.setattr(socket, "create_connection", forbid)
    counter = CountingTransport()
    replayer = LlmHandle(mode="replay", fixture_dir=tmp_path, transport=counter, max_retries=2)
    rejected = False
    try:
        complete(replayer, task)
    except MalformedLlmOutput as exc:
        rejected = "text" in str(exc)
    ok = attempts == 3 and rejected and counter.calls == 0 and not opened
    verdict(10, ok, f"schema-violating responses rejected after {attempts} attempts with MalformedLlmOutput; "
                    f"replay network operations = {counter.calls + len(opened)}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

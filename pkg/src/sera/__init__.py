"""Failure-aware scenario recommendation and policy repair for a longitudinal
driving simulator."""

from __future__ import annotations

from .analysis import FailurePattern, extract_patterns, extract_patterns_llm, extract_patterns_rules
from .bank import Bank, IngestReport, ScenarioRecord, make_record
from .embed import Embedder, phi
from .errors import (
    ConfigError,
    ConflictingSuggestions,
    DuplicateId,
    EmptyBank,
    EmptyPatternSet,
    EmptyRouteSet,
    EmptyText,
    FixtureMissing,
    LlmUnavailable,
    MalformedLlmOutput,
    NotFound,
    SchemaError,
    SeraError,
    StageError,
    ValidationError,
)
from .harness import (
    Hazard,
    Metrics,
    PerformanceLog,
    Route,
    Trajectory,
    aggregate,
    evaluate,
    policy_act,
    pre_evaluate,
    run_route,
    scenario_to_route,
    simulate,
)
from .recommend import (
    CandidateSet,
    RefinedSet,
    ReflectionSuggestion,
    ScoredCandidate,
    reflect_llm,
    reflect_rules,
    refine,
)
from .repair import RepairConfig, fine_tune, run_ablation, run_repair
from .scenario import ScenarioAttributes, ScenarioText, describe, paraphrase, parse_description

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

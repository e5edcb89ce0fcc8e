from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from sera.bank import Bank, make_record
from sera.errors import ConfigError, StageError
from sera.fixtures import BASELINE_THETA, acceptance_bank, acceptance_routes, write_fixture
from sera.harness import constant_accel_theta, run_route, scenario_to_route, simulate
from sera.repair import (
    RepairConfig, batch_losses, episode_routes, fail_loss, fine_tune, repair, run_repair,
)
from sera.scenario import ScenarioAttributes as A

SEEDS = RepairConfig().episode_seeds()


def small_bank() -> Bank:
    return Bank([make_record(a) for a in (
        A("clear", "day", "highway"),
        A("clear", "day", "highway", ("stopped_lead_vehicle",)),
        A("clear", "night", "urban_intersection", ("red_light",)),
    )])


def test_config_validation():
    with pytest.raises(ConfigError):
        RepairConfig(selection="greedy")
    with pytest.raises(ConfigError):
        RepairConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        RepairConfig.from_dict({"K": 8, "colour": "red"})


def test_config_file_paths_resolve_relative_to_it(tmp_path):
    path = write_fixture(tmp_path / "fx")
    cfg = RepairConfig.load(path)
    assert cfg.routes == str(tmp_path / "fx" / "routes.jsonl")
    assert (cfg.K, cfg.analyzer, cfg.selection) == (8, "rules", "full")
    (tmp_path / "broken.toml").write_text("K = \n")
    with pytest.raises(ConfigError):
        RepairConfig.load(tmp_path / "broken.toml")


def test_clean_rollout_loss_is_jerk_only():
    bank = small_bank()
    theta = constant_accel_theta(2.0)
    routes = episode_routes(["s0001"], bank, SEEDS)
    res = simulate(np.repeat(theta[None], len(routes), axis=0), routes)
    assert res.counts.sum() == 0 and np.all(res.completion(np.full(len(routes), 150.0)) == 1.0)
    expected = float(np.mean(0.1 * res.mean_abs_jerk()))
    assert fail_loss(theta, ["s0001"], bank, SEEDS) == pytest.approx(expected, abs=1e-12)


def test_collision_floor():
    assert fail_loss(constant_accel_theta(2.0), ["s0002"], small_bank(), SEEDS) >= 10.0


def test_loss_ignores_member_order():
    bank = small_bank()
    a = fail_loss(BASELINE_THETA, ["s0001", "s0002", "s0003"], bank, SEEDS)
    b = fail_loss(BASELINE_THETA, ["s0003", "s0001", "s0002"], bank, SEEDS)
    assert a == pytest.approx(b, abs=1e-12)


def test_batch_losses_evaluate_rows_independently():
    bank = small_bank()
    routes = episode_routes(["s0002", "s0003"], bank, SEEDS)
    thetas = np.stack([BASELINE_THETA, constant_accel_theta(2.0)])
    both = batch_losses(thetas, routes)
    assert both[1] == batch_losses(thetas[1:], routes)[0]


def test_fine_tune_keeps_a_clean_policy():
    theta = constant_accel_theta(2.0)
    result = fine_tune(theta, ["s0001"], small_bank(), RepairConfig())
    assert np.array_equal(result.theta, theta)
    assert len(result.curve) <= 10
    assert result.best_loss == result.initial_loss


def test_fine_tune_removes_red_light_at_night():
    bank = small_bank()
    cfg = RepairConfig(seed=3)  # episode seeds on which the baseline runs two red lights
    routes = episode_routes(["s0003"], bank, cfg.episode_seeds())

    def red_count(theta):
        return sum(e.kind == "red_light" for r in routes for e in run_route(theta, r).events)

    assert red_count(BASELINE_THETA) == 2
    result = fine_tune(BASELINE_THETA, ["s0003"], bank, cfg)
    assert len(result.curve) <= cfg.max_grad_steps
    assert result.best_loss <= result.initial_loss
    assert red_count(result.theta) == 0


def test_reflection_off_equals_initial_selection():
    routes, bank = acceptance_routes()[:4], acceptance_bank()
    off = repair(BASELINE_THETA, routes, bank, RepairConfig(selection="full", reflection="off"))
    initial = repair(BASELINE_THETA, routes, bank, RepairConfig(selection="initial"))
    for key in ("final_theta", "after", "iterations"):
        assert off[key] == initial[key]


def test_per_route_granularity_updates_sequentially():
    routes, bank = acceptance_routes()[:3], acceptance_bank()
    report = repair(BASELINE_THETA, routes, bank, RepairConfig(granularity="per_route", max_grad_steps=20))
    assert [it["label"] for it in report["iterations"]] == [r.route_id for r in routes]
    for it in report["iterations"]:
        if "fine_tune" in it:
            assert len(it["fine_tune"]["loss_curve"]) <= 20


def test_report_shape():
    report = repair(BASELINE_THETA, acceptance_routes()[:2], acceptance_bank(), RepairConfig(max_grad_steps=5))
    assert set(report) == {"config", "embedder_fingerprint", "initial_theta", "final_theta",
                           "before", "after", "iterations"}
    assert report["config"]["K"] == 8
    assert set(report["before"]["summary"]) >= {"driving_score", "success_rate", "efficiency", "comfortness"}


def test_stage_errors_are_tagged(tmp_path):
    path = write_fixture(tmp_path)
    cfg = dataclasses.replace(RepairConfig.load(path), bank=str(tmp_path / "missing.jsonl"))
    with pytest.raises(StageError) as err:
        run_repair(cfg)
    assert err.value.stage == "load"
    routes = [scenario_to_route(A("clear", "day", "urban_intersection", ("red_light",)), 1)]
    with pytest.raises(StageError) as err:
        repair(BASELINE_THETA, routes, Bank(), RepairConfig())
    assert err.value.stage == "recommend"

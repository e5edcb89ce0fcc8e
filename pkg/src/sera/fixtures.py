"""Seeded demonstration fixture: a baseline policy, ten evaluation routes and a
forty-scenario bank on which the baseline fails in several distinct ways."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .bank import Bank, make_record
from .harness import Route, scenario_to_route
from .scenario import TIMES, WEATHERS
from .scenario import ScenarioAttributes as A

# bias, speed, dist_to_hazard, red_light_proximity, lead_vehicle_proximity,
# pedestrian_proximity, speed_zone_proximity, speed_excess
BASELINE_THETA = np.array([4.0, -5.0, 0.0, -2.0, -4.0, 0.0, 0.0, -2.0])

_ROUTES = [
    ("r01", A("clear", "day", "urban_intersection", ("red_light",)), 1),
    ("r02", A("rain", "night", "urban_intersection", ("red_light",)), 2),
    ("r03", A("fog", "night", "merge_ramp", ("stopped_lead_vehicle",)), 3),
    ("r04", A("clear", "day", "highway", ("stopped_lead_vehicle",)), 4),
    ("r05", A("clear", "night", "residential", ("occluded_pedestrian",)), 5),
    ("r06", A("clear", "day", "highway"), 6),
    ("r07", A("rain", "dusk", "roundabout"), 7),
    ("r08", A("snow", "dawn", "urban_intersection", ("crossing_pedestrian",)), 8),
    ("r09", A("clear", "day", "highway", ("school_zone",)), 9),
    ("r10", A("fog", "day", "urban_intersection", ("red_light", "stopped_lead_vehicle")), 10),
]

_BANK = [
    # traffic lights
    A("clear", "day", "urban_intersection", ("red_light",)),
    A("rain", "night", "urban_intersection", ("red_light",)),
    A("clear", "night", "urban_intersection", ("red_light",), "A delivery van is parked at the corner."),
    A("clear", "night", "urban_intersection", ("red_light",), "Cyclists wait at the stop line."),
    # lead vehicles
    A("fog", "night", "merge_ramp", ("stopped_lead_vehicle",)),
    A("clear", "day", "highway", ("stopped_lead_vehicle",)),
    A("fog", "day", "urban_intersection", ("red_light", "stopped_lead_vehicle")),
    # pedestrians
    A("clear", "night", "residential", ("occluded_pedestrian",)),
    A("snow", "dawn", "urban_intersection", ("crossing_pedestrian",)),
    A("rain", "night", "residential", ("crossing_pedestrian",)),
    # speed zones
    A("rain", "dusk", "roundabout"),
    A("clear", "day", "highway", ("school_zone",)),
    # routine free-flow driving
    *(A(w, t, "highway") for w in WEATHERS for t in TIMES),
    *(A(w, t, "merge_ramp") for w in WEATHERS for t in ("day", "night", "dusk")),
]


def acceptance_routes() -> list[Route]:
    return [scenario_to_route(attrs, seed, route_id=rid) for rid, attrs, seed in _ROUTES]


def acceptance_bank() -> Bank:
    bank = Bank()
    bank.ingest([make_record(a) for a in _BANK])
    return bank


CONFIG_TOML = """\
routes = "routes.jsonl"
bank = "bank.jsonl"
policy = "policy.json"
K = 8
analyzer = "rules"
reflection = "rules"
selection = "full"
granularity = "batch"
seed = 0
"""


def write_fixture(directory: str | Path) -> Path:
    """Write routes, bank, baseline policy and a repair config into ``directory``."""
    from .io import save_policy, save_routes

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_routes(acceptance_routes(), directory / "routes.jsonl")
    acceptance_bank().save(directory / "bank.jsonl")
    save_policy(BASELINE_THETA, directory / "policy.json")
    (directory / "sera.toml").write_text(CONFIG_TOML, encoding="utf-8")
    return directory / "sera.toml"

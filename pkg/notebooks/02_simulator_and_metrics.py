"""
A longitudinal driving simulator
================================

The harness drives a point vehicle along a 150 m route with a linear policy
over eight features.  Hazards (traffic lights, stopped vehicles, crossing
pedestrians, speed zones) produce infraction events, and each run is scored
with a driving score, a success flag, efficiency and comfort.
"""

# %%
import numpy as np

from sera.fixtures import BASELINE_THETA, acceptance_routes
from sera.harness import (
    FEATURE_NAMES, Hazard, Route, constant_accel_theta, evaluate, pre_evaluate, run_route, simulate,
)
from sera.scenario import ScenarioAttributes

# %%
# Flooring the accelerator on an empty road: the car hits the 15 m/s cap after
# 7.5 s and covers the remaining distance at cruise speed.
empty = Route("empty", ScenarioAttributes("clear", "day", "highway"))
traj = run_route(constant_accel_theta(2.0), empty)
speeds = np.array([o.speed_mps for o, _ in traj.steps])
print(traj.terminal_reason, len(traj.steps), "steps; speed at 5 s, 10 s:", speeds[50], speeds[100])

# %%
# The same policy against a vehicle stopped 50 m ahead.
lead = Route("lead", ScenarioAttributes("clear", "day", "highway", ("stopped_lead_vehicle",)),
             (Hazard("stopped_lead_vehicle", 50.0, {"stop_s": 1000.0}),))
log = evaluate(run_route(constant_accel_theta(2.0), lead), lead)
print(log.events[0].message)
print("completion", round(log.route_completion_fraction, 4), log.metrics)

# %%
# The shipped baseline policy weights, feature by feature.
for name, w in zip(FEATURE_NAMES, BASELINE_THETA):
    print(f"{name:>24} {w:+.1f}")

# %%
# On the ten demonstration routes the baseline fails in several distinct ways.
logs = pre_evaluate(BASELINE_THETA, acceptance_routes())
for lg in logs:
    c = lg.conditions
    what = ", ".join(e.kind for e in lg.events) or "clean"
    print(f"{lg.route_id} {c.weather:>5} {c.time:>5} {c.location:<18} DS={lg.metrics.driving_score:6.2f} {what}")
print(logs.summary)

# %%
# Rollouts are vectorised: many (policy, route) pairs advance together.  This
# is what makes finite-difference fine-tuning cheap.
routes = acceptance_routes()
thetas = BASELINE_THETA + np.random.default_rng(0).normal(0, 0.5, (len(routes), 8))
res = simulate(thetas, routes)
print(res.counts.sum(axis=0), "(collision, red_light, deviation, speeding)")

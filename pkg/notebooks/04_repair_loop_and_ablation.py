"""
Closing the loop: repair and ablation
=====================================

The refined scenarios become training routes.  The policy is tuned by
gradient descent with central finite differences on a failure loss, then
re-evaluated on the original routes.  The ablation compares three ways of
choosing training scenarios under the same budget.
"""

# %%
import tempfile
import time

from sera.fixtures import BASELINE_THETA, acceptance_bank, acceptance_routes, write_fixture
from sera.repair import RepairConfig, ablation_table, repair, run_ablation

routes, bank = acceptance_routes(), acceptance_bank()

# %%
# One batch iteration with rule-based analysis and reflection.
t0 = time.perf_counter()
report = repair(BASELINE_THETA, routes, bank, RepairConfig())
print(f"{time.perf_counter() - t0:.1f} s")
it = report["iterations"][0]
ft = it["fine_tune"]
print("training loss", round(ft["initial_loss"], 3), "->", round(ft["best_loss"], 3),
      "after", len(ft["loss_curve"]), "updates")
print("before:", report["before"]["summary"])
print("after: ", report["after"]["summary"])

# %%
# Which infractions remain?
for lg in report["after"]["logs"]:
    for e in lg["events"]:
        print(lg["route_id"], e["message"])

# %%
# The loss curve, coarsely.
curve = ft["loss_curve"]
for k in range(0, len(curve), max(1, len(curve) // 10)):
    print(f"{k:>4} {curve[k]:.3f} " + "#" * int(40 * curve[k] / max(curve)))

# %%
# Ablation: random K scenarios, the initial top-K, and the reflected set.
with tempfile.TemporaryDirectory() as tmp:
    cfg = RepairConfig.load(write_fixture(tmp))
    print(ablation_table(run_ablation(cfg)))

##############################################################################
# Copyright© 2025 UT-Battelle, LLC
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
##############################################################################
"""
Desk scale training and evaluation campaign.

Trains a DDPG policy for a few hundred epochs with smaller networks and a
shorter warmup, evaluates it on 20 seeded random goals and on the three
normal operation tests, runs the torque constrained test against an
unconstrained run on the same goal, then the paired comparison against
MPC on seeded random goals.  Prints the checks; nothing here asserts, the
outcomes are logged.

Usage:
    python -m uwarm_py.progression.desk_campaign -epochs 400 -out desk_run
"""
import argparse
import logging
import os
import numpy as np
import jax

from uwarm_py.config import load_config, TEST1_GOAL
from uwarm_py.harness import Scenario, train, evaluate, compare
from uwarm_py.metrics import settling_times

logger = logging.getLogger(__name__)

TEST_GOALS = {
    "test1": TEST1_GOAL,
    "test2": [-1.78, 0.11, -2.14, -2.26],
    "test3": [2.0, -1.0, -1.75, 1.5],
}
WEAK_SHOULDER = {"degradation": {"torque_scale": [0.25, 1.0, 1.0, 1.0]}}


def desk_config(epochs: int, seed: int=0) -> dict:
    return load_config(overrides={
        "ddpg": {"actor_hidden": [64, 64], "critic_hidden": [64, 64],
                 "warmup": 2000, "buffer_capacity": 200000, "lr_decay_steps": 20000},
        "train": {"epochs": epochs, "seed": seed, "eval_every": 25,
                  "checkpoint_every": 50},
    })


def learning_smoke(returns: list, n: int=10) -> bool:
    """Mean return of the last n epochs exceeds that of the first n."""
    if len(returns) < 2*n:
        return False
    first, last = np.mean(returns[:n]), np.mean(returns[-n:])
    print("mean return first %d: %0.4f, last %d: %0.4f" % (n, first, n, last))
    return bool(last > first)


def random_goal_checks(reports: list, violated: list, max_overshoot: float=5.0,
                       max_msse: float=0.01, min_settled: float=0.9) -> dict:
    """
    Checks over a random goal evaluation: no bound violation, median
    overshoot [%] and mean MSSE [rad] below their thresholds, and the
    fraction of goals settled within the episode.
    """
    os_median = float(np.median([r.OS for r in reports]))
    msse_mean = float(np.mean([r.MSSE for r in reports]))
    settled = float(np.mean([not r.never_settled for r in reports]))
    n_violated = int(np.sum(violated))
    return {
        "violations": n_violated,
        "median_overshoot": os_median,
        "mean_msse": msse_mean,
        "settled_fraction": settled,
        "passed": (n_violated == 0 and os_median < max_overshoot
                   and msse_mean < max_msse and settled >= min_settled),
    }


def shoulder_settling(weak_log, base_log, band: float=0.02, floor: float=0.01) -> tuple:
    """
    Joint 1 settling times of the constrained and unconstrained runs, a
    joint that never settles counts as the episode duration.  Returns
    (weak, base, weak > base).
    """
    def first(log):
        st = settling_times(log, band, floor)[0]
        return float(log.duration if np.isnan(st) else st)
    weak, base = first(weak_log), first(base_log)
    return weak, base, weak > base


def main(epochs: int=400, out: str="desk_run", seed: int=0, n_goals: int=20):
    cfg = desk_config(epochs, seed)
    res = train(cfg, os.path.join(out, "train"))
    print("learning progress: %s" % learning_smoke(res.returns))
    ckpt = res.final_checkpoint

    ev = evaluate(Scenario("random_goals", "rl", None, repeats=n_goals, seed=seed), cfg,
                  os.path.join(out, "random_goals"), checkpoint=ckpt, plots=False)
    checks = random_goal_checks(ev.reports, [log.violated for log in ev.logs])
    print("random goals: violations %d, median overshoot %0.4f %%, mean msse %0.4e rad, "
          "settled %0.0f %%, passed %s"
          % (checks["violations"], checks["median_overshoot"], checks["mean_msse"],
             100.*checks["settled_fraction"], checks["passed"]))

    for name, goal in TEST_GOALS.items():
        ev = evaluate(Scenario(name, "rl", goal), cfg, os.path.join(out, name),
                      checkpoint=ckpt, plots=False)
        print("%s: rmse %0.4e, msse %0.4e, settled %s"
              % (name, ev.mean.RMSE, ev.mean.MSSE, not ev.mean.never_settled))
        if name == "test3":
            base_log = ev.logs[0]

    # shoulder at a quarter of its torque
    weak = Scenario("test3_weak_shoulder", "rl", TEST_GOALS["test3"], overrides=WEAK_SHOULDER)
    ev = evaluate(weak, cfg, os.path.join(out, weak.name), checkpoint=ckpt, plots=False)
    band, floor = cfg["metrics"]["settle_band"], cfg["metrics"]["settle_floor"]
    st_weak, st_base, slower = shoulder_settling(ev.logs[0], base_log, band, floor)
    print("torque constrained: violated %s, settled %s, joint 1 settling %0.2f s "
          "against %0.2f s unconstrained, slower %s"
          % (ev.logs[0].violated, not ev.mean.never_settled, st_weak, st_base, slower))

    # goal None: n_goals seeded random goals shared by both controllers
    cmp = compare(Scenario("rl", "rl"), Scenario("mpc", "mpc"), n_goals, cfg,
                  os.path.join(out, "compare"), checkpoint=ckpt)
    print(cmp.table)
    print("directional checks passed: %s" % cmp.passed)
    for msg in cmp.failed_checks:
        print("  " + msg)


if __name__ == "__main__":
    jax.config.update("jax_enable_x64", True)
    logging.basicConfig(level=logging.INFO)
    parser = argparse.ArgumentParser()
    parser.add_argument("-epochs", help="training epochs", type=int, default=400)
    parser.add_argument("-out", help="output directory", type=str, default="desk_run")
    parser.add_argument("-seed", help="training seed", type=int, default=0)
    parser.add_argument("-n", help="random goals per check and comparison", type=int, default=20)
    args = parser.parse_args()
    main(args.epochs, args.out, args.seed, args.n)

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
Training, evaluation and RL versus MPC comparison campaigns.

Every artifact (checkpoints, CSV logs, reports, plots) is a function of
the configuration and the seeds only.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import copy
import logging
import os
import time

import numpy as np
import jax

from uwarm_py.config import (merge_config, validate_config, dump_config, config_hash,
                             arm_model_from_config, degradation_from_config,
                             reward_params_from_config, ddpg_hyper_from_config,
                             mpc_config_from_config, env_kwargs_from_config,
                             metrics_kwargs_from_config, train_config_from_config, tomllib)
from uwarm_py.dynamics import Degradation
from uwarm_py.environment import ArmEnv, Transition, sample_goal, normalize_state
from uwarm_py.agent import DdpgAgent, epsilon_schedule
from uwarm_py.checkpoint import save_checkpoint, load_checkpoint
from uwarm_py.mlp import forward_actor
from uwarm_py.mpc import MpcController
from uwarm_py.metrics import (EpisodeLog, MetricsReport, compute_report, mean_report,
                              write_csv, write_report, format_comparison_table,
                              render_plots, HAS_MATPLOTLIB)
from uwarm_py.errors import (ConfigError, ArtifactNotFoundError, CheckpointError,
                             TrainingDivergedError)

logger = logging.getLogger(__name__)

_SCENARIO_KEYS = {"name", "goal", "controller", "checkpoint", "repeats", "seed",
                  "degradation", "reward", "mpc"}
_OVERRIDE_SECTIONS = ("degradation", "reward", "mpc")


@dataclass
class Scenario:
    """
    Named evaluation setup.  goal None draws a seeded random goal per
    repeat; overrides hold config sections merged over the base config.
    """
    name: str
    controller: str = "rl"
    goal: list = None
    checkpoint: str = None
    repeats: int = 1
    seed: int = 0
    overrides: dict = field(default_factory=dict)


def _parse_scenario(raw: dict, cfg: dict) -> Scenario:
    unknown = set(raw) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"scenario: unknown keys {sorted(unknown)}")
    if "name" not in raw:
        raise ConfigError("scenario: missing name")
    name = raw["name"]
    controller = raw.get("controller", "rl")
    if controller not in ("rl", "mpc"):
        raise ConfigError(f"scenario {name}: controller must be 'rl' or 'mpc'")
    goal = raw.get("goal", "random")
    if goal == "random":
        goal = None
    else:
        n = len(cfg["arm"]["position_min"])
        if not isinstance(goal, list) or len(goal) != n:
            raise ConfigError(f"scenario {name}: goal must be {n} numbers or 'random'")
        lo, hi = np.asarray(cfg["arm"]["position_min"]), np.asarray(cfg["arm"]["position_max"])
        if np.any(np.asarray(goal) < lo) or np.any(np.asarray(goal) > hi):
            raise ConfigError(f"scenario {name}: goal outside the joint limits")
    overrides = {k: raw[k] for k in _OVERRIDE_SECTIONS if k in raw}
    # fail early on bad override keys
    validate_config(merge_config(cfg, overrides))
    repeats = int(raw.get("repeats", 1))
    if repeats < 1:
        raise ConfigError(f"scenario {name}: repeats must be >= 1")
    return Scenario(name, controller, goal, raw.get("checkpoint", None), repeats,
                    int(raw.get("seed", 0)), overrides)


def load_scenarios(path: str, cfg: dict) -> list:
    """
    Read the ``[[scenario]]`` tables of a TOML file.
    """
    if not os.path.isfile(path):
        raise ArtifactNotFoundError(path)
    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}")
    if set(data) - {"scenario"} or not data.get("scenario"):
        raise ConfigError(f"{path}: expected one or more [[scenario]] tables only")
    scenarios = [_parse_scenario(raw, cfg) for raw in data["scenario"]]
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ConfigError(f"{path}: scenario names must be unique")
    return scenarios


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

class _Setup:
    """Domain objects built once from a (scenario merged) config."""
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.model = arm_model_from_config(cfg)
        self.degradation = degradation_from_config(cfg, self.model.n_joints)
        self.reward_params = reward_params_from_config(cfg, self.model)
        self.env_kwargs = env_kwargs_from_config(cfg)
        self.mpc_config = mpc_config_from_config(cfg, self.model.n_joints)
        self.metrics_kwargs = metrics_kwargs_from_config(cfg)

    def degradation_for(self, offset: int=0) -> Degradation:
        """
        Degradation of repeat ``offset``: the sensor seed moves with the
        repeat and a random degradation is redrawn from the moved seed.
        """
        if not offset:
            return self.degradation
        cfg = copy.deepcopy(self.cfg)
        cfg["degradation"]["rng_seed"] = int(cfg["degradation"]["rng_seed"]) + offset
        return degradation_from_config(cfg, self.model.n_joints)

    def make_env(self, seed: int=0, offset: int=0) -> ArmEnv:
        return ArmEnv(self.model, self.degradation_for(offset), self.reward_params,
                      seed=seed, **self.env_kwargs)


def _checkpoint_path(given: str, scenario: Scenario, cfg: dict) -> str:
    # argument, then scenario, then compare.checkpoint
    return given or scenario.checkpoint or cfg["compare"]["checkpoint"] or None


def _load_actor(path: str, n_joints: int):
    if path is None:
        raise ArtifactNotFoundError("<no checkpoint given, set compare.checkpoint or pass one>")
    ckpt = load_checkpoint(path)
    sizes = ckpt.nets.actor.layer_sizes
    if sizes[0] != 3*n_joints or sizes[-1] != n_joints:
        raise CheckpointError(f"{path}: actor sizes {sizes} do not fit a {n_joints} joint arm")
    return ckpt.nets.actor


def run_episode(env: ArmEnv, policy, goal=None) -> EpisodeLog:
    """
    Roll out one episode; policy maps an AgentState to a normalized action.
    """
    obs = env.reset(goal)
    diagnostics = None
    if isinstance(policy, MpcController):
        policy.reset()
        diagnostics = policy.diagnostics
    while not env.terminal:
        action = policy.act(obs) if isinstance(policy, MpcController) else policy(obs)
        obs, _, _ = env.step(action)
    return env.episode_log(diagnostics)


def _policy(setup: _Setup, controller: str, actor=None):
    if controller == "mpc":
        return MpcController(setup.model, setup.mpc_config)
    # noiseless, epsilon = 0
    return lambda obs: forward_actor(actor, normalize_state(setup.model, obs))


def _episode_goals(setup: _Setup, goal, n: int, seed: int) -> list:
    if goal is not None:
        return [np.asarray(goal, dtype=np.float64)] * n
    key = jax.random.PRNGKey(seed)
    margin = setup.env_kwargs["goal_margin"]
    return [np.asarray(sample_goal(setup.model, jax.random.fold_in(key, k), margin))
            for k in range(n)]


def _run_episodes(setup: _Setup, controller: str, goals: list, actor=None,
                  workers: int=1) -> list:
    def one(k):
        env = setup.make_env(seed=k, offset=k)
        return run_episode(env, _policy(setup, controller, actor), goals[k])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(len(goals))))
    return [one(k) for k in range(len(goals))]


def _write_episodes(name: str, logs: list, reports: list, out_dir: str, plots: bool):
    paths = []
    for k, (log, rep) in enumerate(zip(logs, reports)):
        prefix = os.path.join(out_dir, f"{name}_ep{k:03d}")
        if plots and HAS_MATPLOTLIB:
            paths.extend(render_plots(log, prefix))
        else:
            write_csv(log, f"{prefix}.csv")
            paths.append(f"{prefix}.csv")
        write_report(rep, f"{prefix}_report.txt")
        paths.append(f"{prefix}_report.txt")
    if plots and not HAS_MATPLOTLIB:
        logger.warning("matplotlib not available, skipping plots")
    return paths


@dataclass
class EvalResult:
    logs: list
    reports: list
    mean: MetricsReport
    paths: list


def evaluate(scenario: Scenario, config: dict, out_dir: str, checkpoint: str=None,
             workers: int=1, plots: bool=True) -> EvalResult:
    """
    Run the scenario's repeats without exploration noise and write one log
    and report per episode plus the mean report.

    Args:
        scenario: evaluation setup
        config: base configuration
        out_dir: output directory
        checkpoint: actor checkpoint, overrides scenario.checkpoint and compare.checkpoint
        workers: concurrent episodes
        plots: write SVG figures when matplotlib is available
    """
    tic = time.perf_counter()
    setup = _Setup(validate_config(merge_config(config, scenario.overrides)))
    actor = None
    if scenario.controller == "rl":
        actor = _load_actor(_checkpoint_path(checkpoint, scenario, config), setup.model.n_joints)
    os.makedirs(out_dir, exist_ok=True)
    goals = _episode_goals(setup, scenario.goal, scenario.repeats, scenario.seed)
    logs = _run_episodes(setup, scenario.controller, goals, actor, workers)
    reports = [compute_report(log, **setup.metrics_kwargs) for log in logs]
    paths = _write_episodes(scenario.name, logs, reports, out_dir, plots)
    mean = mean_report(reports)
    mean_path = os.path.join(out_dir, f"{scenario.name}_mean_report.txt")
    write_report(mean, mean_path)
    toc = time.perf_counter()
    logger.info(f"Evaluated scenario {scenario.name} ({len(logs)} episodes) in {toc - tic:0.4f} seconds")
    logger.info("\n" + format_comparison_table([(scenario.name, mean)]))
    return EvalResult(logs, reports, mean, paths + [mean_path])


@dataclass
class CompareResult:
    rows: list
    passed: bool
    failed_checks: list
    table: str
    paths: list


def compare(rl_scenario: Scenario, mpc_scenario: Scenario, n: int, config: dict,
            out_dir: str, checkpoint: str=None, workers: int=1, plots: bool=False) -> CompareResult:
    """
    Paired campaign: both controllers run on the same n goals (the
    scenario goal if fixed, else seeded random goals), the mean metrics
    form a two row table.  If RL does not beat MPC on both mean overshoot
    and MSSE a tuning report is written next to the table.
    """
    tic = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    rows, setups, paths = [], [], []
    seed = int(config["compare"]["seed"])
    for scen in (rl_scenario, mpc_scenario):
        setup = _Setup(validate_config(merge_config(config, scen.overrides)))
        actor = None
        if scen.controller == "rl":
            actor = _load_actor(_checkpoint_path(checkpoint, scen, config), setup.model.n_joints)
        goals = _episode_goals(setup, scen.goal, n, seed)
        logs = _run_episodes(setup, scen.controller, goals, actor, workers)
        reports = [compute_report(log, **setup.metrics_kwargs) for log in logs]
        sub = os.path.join(out_dir, scen.name)
        os.makedirs(sub, exist_ok=True)
        paths += _write_episodes(scen.name, logs, reports, sub, plots)
        rows.append((scen.name, mean_report(reports)))
        setups.append(setup)

    table = format_comparison_table(rows)
    table_path = os.path.join(out_dir, "comparison.txt")
    with open(table_path, "w") as f:
        f.write(table)
    paths.append(table_path)

    (_, rl), (_, mp) = rows
    failed = []
    if not rl.OS < mp.OS:
        failed.append(f"mean overshoot: RL {rl.OS:.6g} % is not below MPC {mp.OS:.6g} %")
    if not rl.MSSE < mp.MSSE:
        failed.append(f"mean MSSE: RL {rl.MSSE:.6g} rad is not below MPC {mp.MSSE:.6g} rad")
    if failed:
        report_path = os.path.join(out_dir, "tuning_report.txt")
        with open(report_path, "w") as f:
            f.write("Directional checks failed:\n")
            f.writelines(f"  - {msg}\n" for msg in failed)
            f.write("\n" + table + "\nMPC tuning used:\n")
            f.write(dump_config({"mpc": setups[1].cfg["mpc"], "sim": setups[1].cfg["sim"]}))
        paths.append(report_path)
        logger.warning(f"comparison directional checks failed, see {report_path}")
    toc = time.perf_counter()
    logger.info(f"Compared controllers on {n} goals in {toc - tic:0.4f} seconds\n{table}")
    return CompareResult(rows, not failed, failed, table, paths)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

CURVE_HEADER = "epoch,steps,return,td_loss,mean_q,epsilon,violated,train_steps"
EVAL_HEADER = "epoch,return,rmse,msse,violated"


@dataclass
class TrainResult:
    curve_path: str
    checkpoints: list
    final_checkpoint: str
    returns: list
    env_steps: int
    eval_path: str = None


def _write_lines(path: str, header: str, lines: list):
    with open(path, "w") as f:
        f.write(header + "\n")
        f.writelines(line + "\n" for line in lines)


def train(config: dict, out_dir: str) -> TrainResult:
    """
    DDPG training: one episode per epoch with a fresh random goal, one
    learning update per environment step once the replay is warm, linear
    epsilon decay.  Writes the training curve, periodic, best and final
    checkpoints and the configuration used.  A diverged update raises
    TrainingDivergedError after the curve so far has been written; the
    checkpoints already on disk are kept.
    """
    cfg = validate_config(copy.deepcopy(config))
    setup = _Setup(cfg)
    tc = train_config_from_config(cfg)
    hyper = ddpg_hyper_from_config(cfg)
    n = setup.model.n_joints
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.toml"), "w") as f:
        f.write(dump_config(cfg))
    chash = config_hash(cfg)

    env = setup.make_env(seed=tc.seed)
    probe_env = ArmEnv(setup.model, Degradation.none(n), setup.reward_params,
                       seed=tc.seed, **setup.env_kwargs)
    agent = DdpgAgent(hyper, n_state=3*n, n_action=n, seed=tc.seed, dt=env.dt)

    curve, evals, checkpoints, returns = [], [], [], []
    best_return = -np.inf
    env_steps = 0
    curve_path = os.path.join(out_dir, "training_curve.csv")
    eval_path = os.path.join(out_dir, "eval_curve.csv") if tc.eval_every > 0 else None

    def ckpt(name, epoch):
        path = os.path.join(out_dir, name)
        meta = {"seed": tc.seed, "config_hash": chash, "epoch": epoch}
        return save_checkpoint(path, agent.nets, hyper, agent.train_steps, meta)

    tic = time.perf_counter()
    try:
        for epoch in range(tc.epochs):
            eps = epsilon_schedule(hyper, epoch, tc.epochs)
            obs = env.reset()
            s = env.normalize(obs)
            agent.reset_noise()
            ep_return, losses, qs = 0., [], []
            while not env.terminal:
                a = agent.act(s, eps, explore=True)
                obs, r, done = env.step(a)
                s2 = env.normalize(obs)
                agent.observe(Transition(s, a, r, s2, done))
                out = agent.train_step()
                if out is not None:
                    losses.append(out[0])
                    qs.append(out[1])
                ep_return += r
                s = s2
            env_steps += env.n_steps
            returns.append(ep_return)
            td = float(np.mean(losses)) if losses else float("nan")
            mq = float(np.mean(qs)) if qs else float("nan")
            curve.append(f"{epoch+1:d},{env.n_steps:d},{ep_return:.17g},{td:.17g},"
                         f"{mq:.17g},{eps:.17g},{int(env.violated):d},{agent.train_steps:d}")
            logger.info(f"epoch {epoch+1}/{tc.epochs}: return {ep_return:0.4f}, "
                        f"td loss {td:0.4e}, epsilon {eps:0.3f}, steps {env.n_steps}")

            if (epoch + 1) % tc.checkpoint_every == 0:
                checkpoints.append(ckpt(f"ckpt_{epoch+1:05d}.uwckp", epoch + 1))
            if ep_return > best_return and agent.warm:
                best_return = ep_return
                ckpt("best.uwckp", epoch + 1)
            if tc.eval_every > 0 and (epoch + 1) % tc.eval_every == 0:
                log = run_episode(probe_env, lambda o: forward_actor(agent.nets.actor, probe_env.normalize(o)),
                                  tc.probe_goal)
                rep = compute_report(log, **setup.metrics_kwargs)
                evals.append(f"{epoch+1:d},{float(np.sum(log.reward)):.17g},"
                             f"{rep.RMSE:.17g},{rep.MSSE:.17g},{int(log.violated):d}")
                logger.info(f"probe evaluation at epoch {epoch+1}: rmse {rep.RMSE:0.4e}, msse {rep.MSSE:0.4e}")
    except TrainingDivergedError:
        logger.error(f"training diverged at epoch {len(returns)+1}, keeping the checkpoints on disk")
        raise
    finally:
        _write_lines(curve_path, CURVE_HEADER, curve)
        if eval_path is not None:
            _write_lines(eval_path, EVAL_HEADER, evals)

    final = ckpt("final.uwckp", tc.epochs)
    checkpoints.append(final)
    toc = time.perf_counter()
    logger.info(f"Trained {tc.epochs} epochs ({env_steps} steps) in {toc - tic:0.4f} seconds")
    return TrainResult(curve_path, checkpoints, final, returns, env_steps, eval_path)


def demo(goal, config: dict, checkpoint: str=None, controller: str=None):
    """
    One noiseless episode towards goal with the RL policy (when a
    checkpoint is given) or MPC.

    Returns:
        (EpisodeLog, MetricsReport)
    """
    controller = controller or ("rl" if checkpoint else "mpc")
    setup = _Setup(validate_config(config))
    actor = _load_actor(checkpoint, setup.model.n_joints) if controller == "rl" else None
    log = _run_episodes(setup, controller, [np.asarray(goal, dtype=np.float64)], actor)[0]
    rep = compute_report(log, **setup.metrics_kwargs)
    logger.info("\n" + format_comparison_table([(f"demo-{controller}", rep)]))
    return log, rep

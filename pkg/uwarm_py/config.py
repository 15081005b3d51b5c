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
Configuration layer.

A configuration is a dict of flat sections (``[arm]``, ``[sim]``,
``[degradation]``, ``[reward]``, ``[env]``, ``[ddpg]``, ``[mpc]``,
``[metrics]``, ``[train]``, ``[compare]``), SI units throughout.  Files are
TOML and are merged over :data:`DEFAULT_CONFIG`; unknown keys are errors.
The builders below turn a configuration into the domain objects.
"""
import copy
import hashlib
import logging
import os

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib
import tomli_w
import numpy as np

from uwarm_py.dynamics import (ARM_DEFAULTS, ArmModel, Degradation, validate_arm_model,
                               validate_degradation, random_degradation)
from uwarm_py.environment import RewardParams, validate_reward_params
from uwarm_py.agent import DdpgHyper, validate_hyper
from uwarm_py.mpc import MpcConfig, validate_mpc_config
from uwarm_py.errors import ConfigError

logger = logging.getLogger(__name__)

# goal of the first normal operation test, also the training probe goal
TEST1_GOAL = [2.64, 0.26, -1.47, 0.82]

_HYPER = DdpgHyper()
_MPC = MpcConfig()

DEFAULT_CONFIG = {
    "arm": copy.deepcopy(ARM_DEFAULTS),
    "sim": {
        "dt_control": 0.05,
        "physics_dt": 0.005,
        "episode_seconds": 20.0,
    },
    "degradation": {
        "mass_scale": [1.0, 1.0, 1.0, 1.0],
        "damping_scale": [1.0, 1.0, 1.0, 1.0],
        "torque_scale": [1.0, 1.0, 1.0, 1.0],
        "sensor_pos_sigma": 0.0,
        "sensor_vel_sigma": 0.0,
        "rng_seed": 0,
        # draw mass and damping scales from U(1 - spread, 1 + spread)
        "random": False,
        "spread": 0.1,
    },
    "reward": {
        "sigma": 0.018,
        "violation_penalty": -10.0,
        "aggregate": "norm",
        # empty means the joint limits of [arm]
        "x_min": [],
        "x_max": [],
    },
    "env": {
        "home_pose": [0.0, 0.0, 0.0, 0.0],
        "goal_margin": 0.05,
    },
    "ddpg": {k: (list(v) if isinstance(v, tuple) else v) for k, v in _HYPER.as_dict().items()},
    "mpc": {
        "horizon": _MPC.horizon,
        "q_weight": list(_MPC.q_weight),
        "r_weight": list(_MPC.r_weight),
        "max_iters": _MPC.max_iters,
        "step_tolerance": _MPC.step_tolerance,
        "fd_eps": _MPC.fd_eps,
    },
    "metrics": {
        "msse_window": 2.0,
        "settle_band": 0.02,
        "settle_floor": 0.01,
        "min_step": 0.01,
    },
    "train": {
        "epochs": 2000,
        "seed": 0,
        "eval_every": 100,
        "checkpoint_every": 100,
        "probe_goal": list(TEST1_GOAL),
    },
    "compare": {
        "n": 20,
        "seed": 1234,
        "workers": 1,
        "plots": True,
        # actor checkpoint for compare and eval when none is passed, empty means none
        "checkpoint": "",
    },
}

# vectors whose length may differ from the default
_FREE_LENGTH = {("reward", "x_min"), ("reward", "x_max"),
                ("ddpg", "actor_hidden"), ("ddpg", "critic_hidden")}


def _check_value(section: str, key: str, default, value):
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        if isinstance(default, int) and not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        if (section, key) not in _FREE_LENGTH and len(value) != len(default):
            raise ConfigError(f"{where}: expected {len(default)} entries, got {len(value)}")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of numbers")


def merge_config(base: dict, update: dict, allowed: dict=None) -> dict:
    """
    Copy of base with the sections of update merged in.  Keys must exist
    in allowed (default: DEFAULT_CONFIG).
    """
    allowed = DEFAULT_CONFIG if allowed is None else allowed
    out = copy.deepcopy(base)
    for section, table in update.items():
        if section not in allowed:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}]: expected a table")
        for key, value in table.items():
            if key not in allowed[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            _check_value(section, key, allowed[section][key], value)
            out[section][key] = copy.deepcopy(value)
    return out


def load_config(path: str=None, overrides: dict=None) -> dict:
    """
    Defaults, merged with a TOML file, merged with an overrides dict, then
    validated by building every domain object once.
    """
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"no such config file: {path}")
        with open(path, "rb") as f:
            try:
                data = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"{path}: {e}")
        cfg = merge_config(cfg, data)
    if overrides:
        cfg = merge_config(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> dict:
    sim = cfg["sim"]
    if not (sim["dt_control"] > 0 and sim["physics_dt"] > 0 and sim["episode_seconds"] > 0):
        raise ConfigError("sim.dt_control: time steps and episode length must be > 0")
    model = arm_model_from_config(cfg)
    degradation_from_config(cfg, model.n_joints)
    reward_params_from_config(cfg, model)
    ddpg_hyper_from_config(cfg)
    mpc_config_from_config(cfg, model.n_joints)
    train_config_from_config(cfg)
    if len(cfg["env"]["home_pose"]) != model.n_joints:
        raise ConfigError("env.home_pose: wrong length")
    return cfg


def dump_config(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


def _sorted(d):
    return {k: _sorted(d[k]) for k in sorted(d)} if isinstance(d, dict) else d


def config_hash(cfg: dict) -> str:
    """SHA-256 of the key sorted TOML dump."""
    return hashlib.sha256(tomli_w.dumps(_sorted(cfg)).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def arm_model_from_config(cfg: dict) -> ArmModel:
    return validate_arm_model(ArmModel(**cfg["arm"]))


def degradation_from_config(cfg: dict, n_joints: int=4) -> Degradation:
    d = cfg["degradation"]
    if d["random"]:
        deg = random_degradation(
                n_joints, d["rng_seed"], d["spread"], torque_scale=d["torque_scale"],
                sensor_pos_sigma=d["sensor_pos_sigma"], sensor_vel_sigma=d["sensor_vel_sigma"])
    else:
        deg = Degradation(d["mass_scale"], d["damping_scale"], d["torque_scale"],
                          float(d["sensor_pos_sigma"]), float(d["sensor_vel_sigma"]),
                          int(d["rng_seed"]))
    return validate_degradation(deg, n_joints)


def reward_params_from_config(cfg: dict, model: ArmModel) -> RewardParams:
    r = cfg["reward"]
    kw = {"sigma": float(r["sigma"]), "violation_penalty": float(r["violation_penalty"]),
          "aggregate": r["aggregate"]}
    for key in ("x_min", "x_max"):
        if len(r[key]) not in (0, model.n_joints):
            raise ConfigError(f"reward.{key}: expected 0 or {model.n_joints} entries")
        if len(r[key]):
            kw[key] = r[key]
    return validate_reward_params(RewardParams.for_model(model, **kw))


def ddpg_hyper_from_config(cfg: dict) -> DdpgHyper:
    d = dict(cfg["ddpg"])
    d["actor_hidden"] = tuple(int(v) for v in d["actor_hidden"])
    d["critic_hidden"] = tuple(int(v) for v in d["critic_hidden"])
    if not (d["actor_hidden"] and d["critic_hidden"]):
        raise ConfigError("ddpg.actor_hidden: at least one hidden layer")
    return validate_hyper(DdpgHyper(**d))


def mpc_config_from_config(cfg: dict, n_joints: int=4) -> MpcConfig:
    m = cfg["mpc"]
    conf = MpcConfig(
        horizon=int(m["horizon"]), q_weight=tuple(float(v) for v in m["q_weight"]),
        r_weight=tuple(float(v) for v in m["r_weight"]), max_iters=int(m["max_iters"]),
        step_tolerance=float(m["step_tolerance"]), dt=float(cfg["sim"]["dt_control"]),
        physics_dt=float(cfg["sim"]["physics_dt"]), fd_eps=float(m["fd_eps"]))
    return validate_mpc_config(conf, 2*n_joints, n_joints)


def env_kwargs_from_config(cfg: dict) -> dict:
    return {
        "dt_control": float(cfg["sim"]["dt_control"]),
        "physics_dt": float(cfg["sim"]["physics_dt"]),
        "episode_seconds": float(cfg["sim"]["episode_seconds"]),
        "home_pose": list(cfg["env"]["home_pose"]),
        "goal_margin": float(cfg["env"]["goal_margin"]),
    }


def metrics_kwargs_from_config(cfg: dict) -> dict:
    return dict(cfg["metrics"])


class TrainConfig:
    """
    Training loop settings; the model, degradation, reward and
    hyperparameter sections are built separately.
    """
    def __init__(self, **kwargs):
        self.epochs = int(kwargs.get("epochs", 2000))
        self.epoch_seconds = float(kwargs.get("epoch_seconds", 20.0))
        self.dt_control = float(kwargs.get("dt_control", 0.05))
        self.seed = int(kwargs.get("seed", 0))
        self.eval_every = int(kwargs.get("eval_every", 100))
        self.checkpoint_every = int(kwargs.get("checkpoint_every", 100))
        self.probe_goal = list(kwargs.get("probe_goal", TEST1_GOAL))

    @property
    def steps_per_epoch(self) -> int:
        return int(round(self.epoch_seconds / self.dt_control))


def train_config_from_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    tc = TrainConfig(epoch_seconds=cfg["sim"]["episode_seconds"],
                     dt_control=cfg["sim"]["dt_control"], **t)
    if tc.epochs < 1:
        raise ConfigError("train.epochs: must be >= 1")
    ratio = tc.epoch_seconds / tc.dt_control
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigError("sim.episode_seconds: must be a whole number of control steps")
    if tc.eval_every < 0 or tc.checkpoint_every < 1:
        raise ConfigError("train.checkpoint_every: must be >= 1 and eval_every >= 0")
    if cfg["sim"]["physics_dt"] > tc.dt_control:
        raise ConfigError("sim.physics_dt: larger than dt_control")
    return tc

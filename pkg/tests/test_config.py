"""
Configuration layer tests.
"""
import os
import pytest
import numpy as np
import jax
jax.config.update("jax_enable_x64", True)

from uwarm_py.config import (
    DEFAULT_CONFIG, load_config, merge_config, dump_config, config_hash,
    arm_model_from_config, degradation_from_config, reward_params_from_config,
    ddpg_hyper_from_config, mpc_config_from_config, train_config_from_config)
from uwarm_py.agent import DdpgHyper
from uwarm_py.errors import ConfigError

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def test_defaults_build():
    cfg = load_config()
    model = arm_model_from_config(cfg)
    assert model.n_joints == 4
    assert np.allclose(np.asarray(model.torque_limits), [10., 8., 4., 2.])
    assert ddpg_hyper_from_config(cfg) == DdpgHyper()
    mpc = mpc_config_from_config(cfg)
    assert mpc.n_substeps == 10
    rp = reward_params_from_config(cfg, model)
    assert np.allclose(np.asarray(rp.x_max), 3.0)
    tc = train_config_from_config(cfg)
    assert tc.steps_per_epoch == 400 and tc.epochs == 2000


def test_default_toml_matches_defaults():
    """
    The shipped default.toml lists every key with the built in values.
    """
    cfg = load_config(os.path.join(REPO, "configs", "default.toml"))
    assert cfg == load_config()
    assert config_hash(cfg) == config_hash(DEFAULT_CONFIG)


def test_overrides_and_errors(tmp_path):
    cfg = load_config(overrides={"sim": {"episode_seconds": 1.0}, "train": {"epochs": 3}})
    assert train_config_from_config(cfg).steps_per_epoch == 20
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(overrides={"bogus": {}})
    with pytest.raises(ConfigError, match="unknown key arm.colour"):
        load_config(overrides={"arm": {"colour": 1}})
    with pytest.raises(ConfigError, match="arm.torque_limits"):
        load_config(overrides={"arm": {"torque_limits": [1., 2.]}})
    with pytest.raises(ConfigError, match="expected an integer"):
        load_config(overrides={"train": {"epochs": 1.5}})
    with pytest.raises(ConfigError, match="sim.episode_seconds"):
        load_config(overrides={"sim": {"episode_seconds": 1.01}})
    with pytest.raises(ConfigError, match="sim.physics_dt"):
        load_config(overrides={"sim": {"physics_dt": 0.1}})
    with pytest.raises(ConfigError, match="reward.sigma"):
        load_config(overrides={"reward": {"sigma": -1.0}})
    with pytest.raises(ConfigError, match="no such config file"):
        load_config(str(tmp_path / "none.toml"))
    bad = tmp_path / "bad.toml"
    bad.write_text("[arm\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_toml_file_merge(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("[mpc]\nhorizon = 5\n\n[degradation]\ntorque_scale = [0.25, 1.0, 1.0, 1.0]\n")
    cfg = load_config(str(path))
    assert cfg["mpc"]["horizon"] == 5
    deg = degradation_from_config(cfg)
    assert np.allclose(np.asarray(deg.torque_scale), [0.25, 1., 1., 1.])
    # untouched sections keep their defaults
    assert cfg["ddpg"] == DEFAULT_CONFIG["ddpg"]


def test_dump_roundtrip_and_hash(tmp_path):
    cfg = load_config(overrides={"train": {"seed": 4}})
    path = tmp_path / "dump.toml"
    path.write_text(dump_config(cfg))
    assert load_config(str(path)) == cfg
    assert config_hash(cfg) != config_hash(DEFAULT_CONFIG)
    assert len(config_hash(cfg)) == 64


def test_random_degradation_from_config():
    cfg = load_config(overrides={"degradation": {"random": True, "rng_seed": 3, "spread": 0.2,
                                                 "sensor_pos_sigma": 0.001}})
    deg = degradation_from_config(cfg)
    assert np.all(np.abs(np.asarray(deg.mass_scale) - 1.) <= 0.2)
    assert deg.sensor_pos_sigma == 0.001 and deg.rng_seed == 3


def test_merge_is_a_copy():
    base = load_config()
    out = merge_config(base, {"env": {"goal_margin": 0.1}})
    assert base["env"]["goal_margin"] == 0.05
    assert out["env"]["goal_margin"] == 0.1

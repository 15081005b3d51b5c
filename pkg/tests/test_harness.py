"""
End to end tests of training, evaluation, comparison and the command line
on shortened episodes with small networks.
"""
import copy
import os
import pytest
import numpy as np
import jax
jax.config.update("jax_enable_x64", True)

from uwarm_py import harness
from uwarm_py.cli import main
from uwarm_py.config import load_config, dump_config
from uwarm_py.checkpoint import load_checkpoint
from uwarm_py.metrics import read_report, read_csv
from uwarm_py.errors import ConfigError, ArtifactNotFoundError

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

SHORT = {
    "sim": {"episode_seconds": 1.0},
    "reward": {"x_min": [-100.]*4, "x_max": [100.]*4},
    "ddpg": {"actor_hidden": [8, 8], "critic_hidden": [8, 8], "batch_size": 4,
             "warmup": 8, "buffer_capacity": 100},
    "train": {"epochs": 2, "eval_every": 1, "checkpoint_every": 1},
    "compare": {"n": 2, "plots": False},
    "mpc": {"horizon": 3, "max_iters": 50},
}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("train"))
    cfg = load_config(overrides=SHORT)
    return cfg, harness.train(cfg, out), out


def test_train_artifacts(trained):
    """
    Fixed length episodes, curve rows, checkpoints and the config copy.
    """
    cfg, res, out = trained
    assert res.env_steps == 40
    assert len(res.returns) == 2
    with open(res.curve_path) as f:
        lines = f.read().splitlines()
    assert lines[0] == harness.CURVE_HEADER
    assert len(lines) == 3
    assert lines[1].split(",")[1] == "20"
    for name in ("ckpt_00001.uwckp", "ckpt_00002.uwckp", "final.uwckp", "best.uwckp",
                 "config.toml", "eval_curve.csv"):
        assert os.path.isfile(os.path.join(out, name))
    ck = load_checkpoint(res.final_checkpoint, actor_sizes=(12, 8, 8, 4))
    # warm after 8 transitions, one update per step after that
    assert ck.train_steps == 40 - 7
    assert ck.meta["epoch"] == 2
    assert load_config(os.path.join(out, "config.toml")) == cfg


def test_train_reproducible(trained, tmp_path):
    cfg, res, out = trained
    again = harness.train(cfg, str(tmp_path))
    assert np.allclose(again.returns, res.returns, rtol=1e-12, atol=0)


def test_evaluate(trained, tmp_path):
    cfg, res, _ = trained
    scen = harness.Scenario("t1", "rl", [2.64, 0.26, -1.47, 0.82], repeats=2)
    ev = harness.evaluate(scen, cfg, str(tmp_path), checkpoint=res.final_checkpoint, plots=False)
    assert len(ev.logs) == 2 and all(len(log) == 20 for log in ev.logs)
    # noiseless plant, deterministic policy
    assert np.all(ev.logs[0].q == ev.logs[1].q)
    mean = read_report(os.path.join(str(tmp_path), "t1_mean_report.txt"))
    assert abs(mean.RMSE - ev.mean.RMSE) < 1e-15
    back = read_csv(os.path.join(str(tmp_path), "t1_ep000.csv"))
    assert np.all(back.q == ev.logs[0].q)
    with pytest.raises(ArtifactNotFoundError):
        harness.evaluate(scen, cfg, str(tmp_path), checkpoint=str(tmp_path / "none.uwckp"))


def test_compare(trained, tmp_path):
    cfg, res, _ = trained
    goal = [2.13, -0.74, -1.03, 2.51]
    out = harness.compare(harness.Scenario("rl", "rl", goal), harness.Scenario("mpc", "mpc", goal),
                          2, cfg, str(tmp_path), checkpoint=res.final_checkpoint)
    assert [r[0] for r in out.rows] == ["rl", "mpc"]
    assert os.path.isfile(os.path.join(str(tmp_path), "comparison.txt"))
    # a barely trained policy loses, the tuning report says why
    if not out.passed:
        assert os.path.isfile(os.path.join(str(tmp_path), "tuning_report.txt"))
        assert out.failed_checks
    print(out.table)


def test_demo_mpc():
    cfg = load_config(overrides=SHORT)
    log, rep = harness.demo([0.5, 0.3, -0.2, 0.1], cfg)
    assert len(log) == 20
    assert len(log.diagnostics["iterations"]) == 20
    assert rep.RMSE > 0


def test_load_scenarios(tmp_path):
    cfg = load_config()
    scens = harness.load_scenarios(os.path.join(REPO, "configs", "scenarios", "torque_constrained.toml"), cfg)
    assert scens[0].overrides["degradation"]["torque_scale"] == [0.25, 1.0, 1.0, 1.0]
    for name in ("normal_operation", "comparison", "degraded"):
        harness.load_scenarios(os.path.join(REPO, "configs", "scenarios", f"{name}.toml"), cfg)
    dup = tmp_path / "dup.toml"
    dup.write_text('[[scenario]]\nname = "a"\n\n[[scenario]]\nname = "a"\n')
    with pytest.raises(ConfigError, match="unique"):
        harness.load_scenarios(str(dup), cfg)
    bad = tmp_path / "bad.toml"
    bad.write_text('[[scenario]]\nname = "a"\ngoal = [9.0, 0.0, 0.0, 0.0]\n')
    with pytest.raises(ConfigError, match="joint limits"):
        harness.load_scenarios(str(bad), cfg)
    bad.write_text('[[scenario]]\nname = "a"\ncontroller = "pid"\n')
    with pytest.raises(ConfigError, match="controller"):
        harness.load_scenarios(str(bad), cfg)


def test_cli(trained, tmp_path, capsys):
    cfg, res, _ = trained
    assert main(["--print-config"]) == 0
    assert "[arm]" in capsys.readouterr().out
    assert main([]) == 1
    assert main(["eval", "--out", str(tmp_path)]) == 1
    assert main(["eval", "--scenario", str(tmp_path / "none.toml"), "--out", str(tmp_path)]) == 1
    run_cfg = tmp_path / "run.toml"
    run_cfg.write_text(dump_config(cfg))
    assert main(["demo", "--goal", "0.5,0.3,-0.2,0.1", "--config", str(run_cfg),
                 "--checkpoint", res.final_checkpoint, "--out", str(tmp_path / "demo")]) == 0
    assert "rl" in capsys.readouterr().out
    assert main(["demo", "--goal", "0.5,x"]) == 1
    # compare takes the checkpoint from [compare] when none is passed
    assert main(["compare", "--config", str(run_cfg), "--out", str(tmp_path / "c0")]) == 1
    with_ckpt = copy.deepcopy(cfg)
    with_ckpt["compare"]["checkpoint"] = res.final_checkpoint
    run_cfg.write_text(dump_config(with_ckpt))
    assert main(["compare", "--config", str(run_cfg), "--out", str(tmp_path / "c1")]) == 0
    assert os.path.isfile(str(tmp_path / "c1" / "comparison.txt"))
    capsys.readouterr()
    scen_file = os.path.join(REPO, "configs", "scenarios", "comparison.toml")
    assert main(["compare", "--config", str(run_cfg), "--scenario", scen_file,
                 "--out", str(tmp_path / "c2")]) == 0
    out = capsys.readouterr().out
    assert "rl" in out and "mpc" in out
    lone = tmp_path / "lone.toml"
    lone.write_text('[[scenario]]\nname = "a"\ncontroller = "rl"\n')
    assert main(["compare", "--config", str(run_cfg), "--scenario", str(lone),
                 "--out", str(tmp_path / "c3")]) == 1


def test_repeats_redraw_random_degradation():
    """
    Repeats of a random degradation scenario see different plants, a fixed
    degradation only moves its sensor seed.
    """
    cfg = load_config(overrides={"degradation": {"random": True, "spread": 0.2, "rng_seed": 3}})
    setup = harness._Setup(cfg)
    first, second = setup.degradation_for(0), setup.degradation_for(1)
    assert first is setup.degradation
    assert not np.allclose(first.mass_scale, second.mass_scale)
    assert second.rng_seed == 4
    # reproducible per repeat
    assert np.all(setup.degradation_for(1).mass_scale == second.mass_scale)
    envs = [setup.make_env(seed=k, offset=k) for k in range(3)]
    scales = [np.asarray(env.degradation.mass_scale) for env in envs]
    assert not np.allclose(scales[1], scales[2])

    fixed = harness._Setup(load_config(overrides={"degradation": {"mass_scale": [1.1, 1., 1., 1.]}}))
    moved = fixed.degradation_for(5)
    assert np.all(moved.mass_scale == fixed.degradation.mass_scale)
    assert moved.rng_seed == fixed.degradation.rng_seed + 5


def test_default_episode_steps():
    """20 s episodes at a 0.05 s control period are 400 steps."""
    cfg = load_config()
    assert harness.train_config_from_config(cfg).steps_per_epoch == 400
    assert harness._Setup(cfg).make_env().max_steps == 400

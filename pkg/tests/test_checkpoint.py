"""
Checkpoint format tests.
"""
import json
import os
import pytest
import numpy as np
import jax
from jax import numpy as jnp
jax.config.update("jax_enable_x64", True)

from uwarm_py.agent import DdpgHyper, init_nets, critic_update
from uwarm_py.environment import Transition
from uwarm_py.checkpoint import save_checkpoint, load_checkpoint, meta_path, MAGIC, VERSION
from uwarm_py.errors import UwarmError, CheckpointError, ArtifactNotFoundError

HYPER = DdpgHyper(actor_hidden=(6, 5), critic_hidden=(7,), batch_size=4, buffer_capacity=10)


def _nets():
    nets = init_nets(jax.random.PRNGKey(0), 12, 4, HYPER)
    np.random.seed(0)
    batch = Transition(jnp.asarray(np.random.randn(4, 12)), jnp.asarray(np.random.randn(4, 4)),
                       jnp.asarray(np.random.randn(4)), jnp.asarray(np.random.randn(4, 12)),
                       jnp.zeros(4, dtype=bool))
    # non zero Adam moments
    return critic_update(nets, batch, HYPER)[0]


def test_save_load_exact(tmp_path):
    """
    Weights, moments, step counts and metadata come back bit for bit.
    """
    nets = _nets()
    path = str(tmp_path / "a.uwckp")
    save_checkpoint(path, nets, HYPER, 17, {"seed": 3, "epoch": 5})
    ck = load_checkpoint(path, actor_sizes=(12, 6, 5, 4), critic_sizes=(16, 7, 1))
    assert ck.train_steps == 17
    assert ck.hyper == HYPER
    assert ck.meta == {"seed": 3, "epoch": 5}
    for name in ("actor", "critic", "actor_target", "critic_target"):
        a, b = getattr(nets, name), getattr(ck.nets, name)
        assert a.layer_sizes == b.layer_sizes
        assert a.out_activation == b.out_activation
        assert int(a.step_count) == int(b.step_count)
        for l in range(a.n_layers):
            for fa, fb in ((a.weights, b.weights), (a.biases, b.biases),
                           (a.m_w, b.m_w), (a.v_b, b.v_b)):
                assert np.all(np.asarray(fa[l]) == np.asarray(fb[l]))
    assert int(ck.nets.critic.step_count) == 1
    assert os.path.isfile(meta_path(path))


def test_save_deterministic(tmp_path):
    """
    Saving the same state twice gives identical bytes.
    """
    nets = _nets()
    p1, p2 = str(tmp_path / "1.uwckp"), str(tmp_path / "2.uwckp")
    save_checkpoint(p1, nets, HYPER, 3)
    save_checkpoint(p2, nets, HYPER, 3)
    with open(p1, "rb") as f1, open(p2, "rb") as f2:
        assert f1.read() == f2.read()
    assert not os.path.exists(p1 + ".tmp")


def test_load_rejects_corrupt(tmp_path):
    nets = _nets()
    path = str(tmp_path / "c.uwckp")
    save_checkpoint(path, nets, HYPER, 0)
    with open(path, "rb") as f:
        raw = f.read()

    bad = str(tmp_path / "bad.uwckp")
    for payload, match in ((b"NOTACKPT" + raw[8:], "bad magic"),
                           (raw[:-8], "truncated"),
                           (raw + b"\0"*8, "trailing")):
        with open(bad, "wb") as f:
            f.write(payload)
        with pytest.raises(CheckpointError, match=match):
            load_checkpoint(bad)
    # version field
    with open(bad, "wb") as f:
        f.write(MAGIC + np.asarray([99], dtype="<u4").tobytes() + raw[12:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(bad)


def test_load_size_mismatch(tmp_path):
    path = str(tmp_path / "d.uwckp")
    save_checkpoint(path, _nets(), HYPER, 0)
    with pytest.raises(CheckpointError, match="layer sizes"):
        load_checkpoint(path, actor_sizes=(12, 400, 300, 4))


def test_load_missing(tmp_path):
    with pytest.raises(ArtifactNotFoundError):
        load_checkpoint(str(tmp_path / "missing.uwckp"))
    with pytest.raises(FileNotFoundError):
        load_checkpoint(str(tmp_path / "missing.uwckp"))


def test_header_is_canonical_json(tmp_path):
    path = str(tmp_path / "e.uwckp")
    save_checkpoint(path, _nets(), HYPER, 2)
    ck = load_checkpoint(path)
    assert ck.header["train_steps"] == 2
    assert ck.header["networks"]["actor"]["out_activation"] == "tanh"
    with open(meta_path(path)) as f:
        assert json.load(f) == {}


def test_load_rejects_incomplete_header(tmp_path):
    """
    A well formed JSON header missing required sections is a checkpoint
    error, not a KeyError.
    """
    path = str(tmp_path / "f.uwckp")
    save_checkpoint(path, _nets(), HYPER, 1)
    with open(path, "rb") as f:
        raw = f.read()
    hlen = int(np.frombuffer(raw, dtype="<u4", count=2, offset=len(MAGIC))[1])
    start = len(MAGIC) + 8
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    payload = raw[start + hlen:]

    bad = str(tmp_path / "g.uwckp")
    for drop in ("networks", "hyper", "train_steps"):
        h = {k: v for k, v in header.items() if k != drop}
        hb = json.dumps(h, sort_keys=True).encode("utf-8")
        with open(bad, "wb") as f:
            f.write(MAGIC + np.asarray([VERSION, len(hb)], dtype="<u4").tobytes() + hb + payload)
        with pytest.raises(CheckpointError, match="malformed header") as err:
            load_checkpoint(bad)
        assert isinstance(err.value, UwarmError)
        assert not isinstance(err.value, KeyError)

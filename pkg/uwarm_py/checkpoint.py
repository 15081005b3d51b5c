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
Binary checkpoints of the DDPG networks.

Layout (all integers little endian uint32, all floats little endian float64):

.. code-block::

    b"UWARMCKP" | version | header length | header (canonical JSON, utf-8)
    for net in (actor, critic, actor_target, critic_target):
        for layer in net:
            W, b, m_W, m_b, v_W, v_b   (row major, flat)

The JSON header holds the layer sizes, output activations, LeakyReLU
slopes and step counts of each network, the hyperparameters and the agent
training step.  A sidecar ``<path>.meta.json`` holds the run metadata
(seed, config hash, epoch).
"""
from dataclasses import dataclass
import json
import logging
import os

import numpy as np
import jax.numpy as jnp

from uwarm_py.mlp import MlpParams
from uwarm_py.agent import DdpgHyper, DdpgNets
from uwarm_py.errors import ArtifactNotFoundError, CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"UWARMCKP"
VERSION = 1
NET_NAMES = ("actor", "critic", "actor_target", "critic_target")


@dataclass
class Checkpoint:
    nets: DdpgNets
    hyper: DdpgHyper
    train_steps: int
    header: dict
    meta: dict


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _net_header(p: MlpParams) -> dict:
    return {
        "layer_sizes": list(p.layer_sizes),
        "out_activation": p.out_activation,
        "leaky_slope": p.leaky_slope,
        "step_count": int(p.step_count),
    }


def _net_arrays(p: MlpParams):
    for l in range(p.n_layers):
        for a in (p.weights[l], p.biases[l], p.m_w[l], p.m_b[l], p.v_w[l], p.v_b[l]):
            yield np.asarray(a, dtype="<f8")


def meta_path(path: str) -> str:
    return f"{path}.meta.json"


def save_checkpoint(path: str, nets: DdpgNets, hyper: DdpgHyper, train_steps: int,
                    meta: dict=None) -> str:
    """
    Write the checkpoint and its sidecar.  The file is replaced atomically
    so an interrupted write leaves the previous checkpoint intact.
    """
    header = {
        "hyper": hyper.as_dict(),
        "train_steps": int(train_steps),
        "networks": {name: _net_header(getattr(nets, name)) for name in NET_NAMES},
    }
    hdr = _canonical_json(header)
    chunks = [MAGIC, np.asarray([VERSION, len(hdr)], dtype="<u4").tobytes(), hdr]
    for name in NET_NAMES:
        chunks.extend(a.tobytes() for a in _net_arrays(getattr(nets, name)))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)
    with open(meta_path(path), "w") as f:
        json.dump({} if meta is None else meta, f, sort_keys=True, indent=2)
        f.write("\n")
    logger.info(f"wrote checkpoint {path} at training step {train_steps}")
    return path


def _read_net(buf: memoryview, offset: int, h: dict):
    sizes = [int(s) for s in h["layer_sizes"]]
    tensors = {k: [] for k in ("w", "b", "m_w", "m_b", "v_w", "v_b")}
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        for k, shape in (("w", (n_in, n_out)), ("b", (n_out,)),
                         ("m_w", (n_in, n_out)), ("m_b", (n_out,)),
                         ("v_w", (n_in, n_out)), ("v_b", (n_out,))):
            count = int(np.prod(shape))
            nbytes = 8*count
            if offset + nbytes > len(buf):
                raise CheckpointError("truncated checkpoint payload")
            a = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(shape)
            tensors[k].append(jnp.asarray(a.astype(np.float64)))
            offset += nbytes
    params = MlpParams(
        tuple(tensors["w"]), tuple(tensors["b"]),
        tuple(tensors["m_w"]), tuple(tensors["m_b"]),
        tuple(tensors["v_w"]), tuple(tensors["v_b"]),
        jnp.asarray(int(h["step_count"]), dtype=jnp.int64),
        tuple(sizes), str(h["out_activation"]), float(h["leaky_slope"]))
    return params, offset


def load_checkpoint(path: str, actor_sizes=None, critic_sizes=None) -> Checkpoint:
    """
    Read a checkpoint written by :func:`save_checkpoint`.

    Args:
        path: checkpoint file
        actor_sizes: optional expected actor layer sizes
        critic_sizes: optional expected critic layer sizes
    """
    if not os.path.isfile(path):
        raise ArtifactNotFoundError(path)
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = np.frombuffer(raw, dtype="<u4", count=2, offset=len(MAGIC))
    if int(version) != VERSION:
        raise CheckpointError(f"{path}: unsupported version {int(version)}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start:start + int(hlen)].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})")

    expected = {"actor": actor_sizes, "actor_target": actor_sizes,
                "critic": critic_sizes, "critic_target": critic_sizes}
    buf = memoryview(raw)
    offset = start + int(hlen)
    nets = {}
    try:
        for name in NET_NAMES:
            h = header["networks"][name]
            if expected[name] is not None and list(expected[name]) != list(h["layer_sizes"]):
                raise CheckpointError(
                    f"{path}: {name} layer sizes {h['layer_sizes']} != {list(expected[name])}")
            nets[name], offset = _read_net(buf, offset, h)
        if offset != len(raw):
            raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")

        hd = dict(header["hyper"])
        hd["actor_hidden"] = tuple(hd["actor_hidden"])
        hd["critic_hidden"] = tuple(hd["critic_hidden"])
        hyper = DdpgHyper(**hd)
        train_steps = int(header["train_steps"])
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: malformed header ({type(e).__name__}: {e})")
    meta = {}
    if os.path.isfile(meta_path(path)):
        with open(meta_path(path)) as f:
            meta = json.load(f)
    return Checkpoint(DdpgNets(**nets), hyper, train_steps, header, meta)

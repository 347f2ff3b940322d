"""World-model checkpoints as versioned ``.npz`` archives.

Format (version 1): one uncompressed npz holding

* ``format_version`` - int scalar
* ``trans_activations`` / ``reward_activations`` - unicode arrays
* ``trans_members`` - int scalar (ensemble size)
* ``trans_W{k}``, ``trans_b{k}``, ``reward_W{k}``, ``reward_b{k}`` - layer parameters
* ``norm_state_mean``, ``norm_state_std``, ``norm_action_mean``, ``norm_action_std``,
  ``norm_delta_std`` - normalizer statistics

Arrays are stored at their in-memory dtype, so a round trip is bit-exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .nets import ContractError, DenseNet
from .world_model import Normalizer, RewardModel, TransitionEnsemble, WorldModel

FORMAT_VERSION = 1
_NORM_FIELDS = ("state_mean", "state_std", "action_mean", "action_std", "delta_std")


def _pack(prefix, net: DenseNet, out: dict):
    out[f"{prefix}_activations"] = np.array(net.activations)
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}_W{k}"] = w
        out[f"{prefix}_b{k}"] = b


def _unpack(prefix, data, members=None) -> DenseNet:
    acts = [str(a) for a in data[f"{prefix}_activations"]]
    weights = [data[f"{prefix}_W{k}"] for k in range(len(acts))]
    biases = [data[f"{prefix}_b{k}"] for k in range(len(acts))]
    return DenseNet(weights, biases, acts, members)


def save_checkpoint(model: WorldModel, path) -> Path:
    path = Path(path)
    arrays = {"format_version": np.array(FORMAT_VERSION),
              "trans_members": np.array(model.ensemble.net.members)}
    _pack("trans", model.ensemble.net, arrays)
    _pack("reward", model.reward.net, arrays)
    for name in _NORM_FIELDS:
        arrays[f"norm_{name}"] = getattr(model.normalizer, name)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> WorldModel:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"]) if "format_version" in data else None
        if version != FORMAT_VERSION:
            raise ContractError(f"unsupported checkpoint format version {version}")
        nz = Normalizer(*(data[f"norm_{name}"] for name in _NORM_FIELDS))
        trans = _unpack("trans", data, int(data["trans_members"]))
        rew = _unpack("reward", data)
    return WorldModel(TransitionEnsemble(trans, nz), RewardModel(rew, nz), nz)

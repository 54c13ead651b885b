"""Versioned binary checkpoint container.

Layout: magic 'PXCK', u32 version, u64 header length, JSON header, raw
blob bytes. The header echoes the model config, training step, recorded
test loss and a named blob index (name, dtype, shape, offset). Weights and
optimizer moments round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig

MAGIC = b"PXCK"
VERSION = 1


class CheckpointError(Exception):
    pass


def _tensor_blob(t: torch.Tensor):
    arr = t.detach().cpu().contiguous().numpy()
    return arr.tobytes(), str(arr.dtype), list(arr.shape)


def save_checkpoint(path, model, kind: str, step: int = 0,
                    test_loss: float | None = None, optimizer=None) -> None:
    """kind: 'policy' or 'idm'. Optimizer state, if given, is stored by
    parameter index alongside the named weights."""
    blobs = []
    payload = bytearray()

    def add(name, tensor):
        data, dtype, shape = _tensor_blob(tensor)
        blobs.append({"name": name, "dtype": dtype, "shape": shape,
                      "offset": len(payload), "nbytes": len(data)})
        payload.extend(data)

    for name, tensor in model.state_dict().items():
        add(f"model/{name}", tensor)

    opt_meta = None
    if optimizer is not None:
        sd = optimizer.state_dict()
        opt_meta = {"param_groups": sd["param_groups"], "state_keys": {}}
        for idx, state in sd["state"].items():
            keys = []
            for key, value in state.items():
                if isinstance(value, torch.Tensor):
                    add(f"opt/{idx}/{key}", value)
                    keys.append([key, "tensor"])
                else:
                    keys.append([key, value])
            opt_meta["state_keys"][str(idx)] = keys

    header = json.dumps({
        "kind": kind,
        "step": step,
        "test_loss": test_loss,
        "config": asdict(model.cfg),
        "blobs": blobs,
        "optimizer": opt_meta,
    }).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        f.write(bytes(payload))


@dataclass
class Checkpoint:
    kind: str
    step: int
    test_loss: float | None
    config: ModelConfig
    blobs: dict  # name -> torch.Tensor
    optimizer_meta: dict | None

    def state_dict(self) -> dict:
        return {k[len("model/"):]: v for k, v in self.blobs.items()
                if k.startswith("model/")}

    def build_model(self):
        from .idm import InverseDynamicsModel
        from .policy import PolicyModel
        cls = {"policy": PolicyModel, "idm": InverseDynamicsModel}[self.kind]
        model = cls(self.config)
        model.load_state_dict(self.state_dict())
        return model

    def load_optimizer(self, optimizer) -> None:
        if self.optimizer_meta is None:
            raise CheckpointError("checkpoint holds no optimizer state")
        state = {}
        for idx_str, keys in self.optimizer_meta["state_keys"].items():
            entry = {}
            for key, value in keys:
                if value == "tensor":
                    entry[key] = self.blobs[f"opt/{idx_str}/{key}"]
                else:
                    entry[key] = value
            state[int(idx_str)] = entry
        optimizer.load_state_dict({
            "state": state,
            "param_groups": self.optimizer_meta["param_groups"],
        })


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(raw[16 : 16 + hlen])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    base = 16 + hlen
    blobs = {}
    for spec in header["blobs"]:
        start = base + spec["offset"]
        arr = np.frombuffer(raw[start : start + spec["nbytes"]],
                            dtype=spec["dtype"]).reshape(spec["shape"]).copy()
        blobs[spec["name"]] = torch.from_numpy(arr)
    return Checkpoint(
        kind=header["kind"],
        step=header["step"],
        test_loss=header["test_loss"],
        config=ModelConfig(**header["config"]),
        blobs=blobs,
        optimizer_meta=header["optimizer"],
    )

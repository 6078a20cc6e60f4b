"""Checkpoint archive: layer specs + fingerprints, metadata, and raw tensors.

A checkpoint is a single uncompressed zip with fixed entry order and zeroed
timestamps (byte-identical across save/load/save):

    arch.json      {net name: {"fingerprint": ..., "layers": [LayerSpec...]}}
    meta.json      free-form run metadata (step, config echo, rng state, ...)
    tensors.json   {tensor key: {"shape": [...], "dtype": ..., "entry": ...}}
    data/NNNN.f32  raw little-endian float32 blobs

Tensor keys are "net:<name>/<state_dict key>" for parameters/buffers and
"opt:<name>/<param key>/<slot>" for optimizer state.
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np
import torch

from ..errors import IncompatibleCheckpointError
from .arch import specs_to_json

_ZIP_TIME = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_TIME)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, data)


def _optimizer_tensors(name, opt, param_names):
    """Flatten optimizer state into (key, tensor) pairs keyed by param name."""
    out = {}
    for group in opt.param_groups:
        for p in group["params"]:
            state = opt.state.get(p, {})
            pname = param_names[id(p)]
            for slot, value in state.items():
                if isinstance(value, torch.Tensor):
                    out[f"opt:{name}/{pname}/{slot}"] = value
    return out


def save_checkpoint(path, nets: dict, meta: dict, optimizers: dict | None = None) -> None:
    """Write all nets' parameters (and optional optimizer state) to `path`."""
    arch = {
        name: {"fingerprint": net.fingerprint, "layers": specs_to_json(net.layer_specs)}
        for name, net in nets.items()
    }
    tensors = {}
    for name, net in nets.items():
        for key, value in net.state_dict().items():
            tensors[f"net:{name}/{key}"] = value
    opt_meta = {}
    if optimizers:
        for name, opt in optimizers.items():
            param_names = {
                id(p): key for key, p in nets[name].named_parameters()
            }
            tensors.update(_optimizer_tensors(name, opt, param_names))
            groups = []
            for group in opt.param_groups:
                g = {k: v for k, v in group.items() if k != "params"}
                g["param_names"] = [param_names[id(p)] for p in group["params"]]
                groups.append(g)
            opt_meta[name] = groups

    index = {}
    blobs = []
    for i, key in enumerate(sorted(tensors)):
        t = tensors[key].detach().cpu()
        index[key] = {
            "shape": list(t.shape),
            "dtype": str(t.dtype).replace("torch.", ""),
            "entry": f"data/{i:04d}.f32",
        }
        blobs.append(t.to(torch.float32).numpy().astype("<f4").tobytes())

    full_meta = dict(meta)
    full_meta["optimizers"] = opt_meta
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _write_entry(zf, "arch.json", json.dumps(arch, sort_keys=True, indent=1).encode())
        _write_entry(zf, "meta.json", json.dumps(full_meta, sort_keys=True, indent=1).encode())
        _write_entry(zf, "tensors.json", json.dumps(index, sort_keys=True, indent=1).encode())
        for (key, blob) in zip(sorted(tensors), blobs):
            _write_entry(zf, index[key]["entry"], blob)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


class Checkpoint:
    def __init__(self, arch, meta, tensors):
        self.arch = arch
        self.meta = meta
        self.tensors = tensors

    def net_state(self, name: str) -> dict:
        prefix = f"net:{name}/"
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def load_checkpoint(path) -> Checkpoint:
    with zipfile.ZipFile(path) as zf:
        arch = json.loads(zf.read("arch.json"))
        meta = json.loads(zf.read("meta.json"))
        index = json.loads(zf.read("tensors.json"))
        tensors = {}
        for key, entry in index.items():
            raw = np.frombuffer(zf.read(entry["entry"]), dtype="<f4").reshape(entry["shape"])
            t = torch.from_numpy(raw.copy())
            tensors[key] = t.to(getattr(torch, entry["dtype"]))
    return Checkpoint(arch, meta, tensors)


def restore_net(net, ckpt: Checkpoint, name: str) -> None:
    """Load parameters into `net`, verifying the architecture fingerprint."""
    if name not in ckpt.arch:
        raise IncompatibleCheckpointError(f"checkpoint has no net {name!r}")
    stored = ckpt.arch[name]["fingerprint"]
    if stored != net.fingerprint:
        raise IncompatibleCheckpointError(
            f"fingerprint mismatch for {name!r}: checkpoint {stored}, net {net.fingerprint}"
        )
    net.load_state_dict(ckpt.net_state(name))


def restore_optimizer(opt, net, ckpt: Checkpoint, name: str) -> None:
    """Rebuild optimizer hyperparameters and per-parameter state."""
    groups_meta = ckpt.meta.get("optimizers", {}).get(name)
    if not groups_meta:
        return
    params_by_name = dict(net.named_parameters())
    prefix = f"opt:{name}/"
    state_keys = [k for k in ckpt.tensors if k.startswith(prefix)]
    for group, gmeta in zip(opt.param_groups, groups_meta):
        for k, v in gmeta.items():
            if k in group and k != "param_names":
                group[k] = tuple(v) if isinstance(v, list) and k == "betas" else v
    for key in state_keys:
        rest = key[len(prefix):]
        pname, slot = rest.rsplit("/", 1)
        p = params_by_name[pname]
        opt.state.setdefault(p, {})[slot] = ckpt.tensors[key].clone()

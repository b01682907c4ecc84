"""Checkpoint files: a single ``.npz`` holding every array plus a JSON header.

The header (stored under ``meta``) carries the architecture, the training
config, candidate counts, the distribution, Adam scalars, the iteration
counter and the bit-generator states. Arrays are stored raw, so a restored
run continues bit for bit.
"""

from __future__ import annotations

import io
import json
import os
from pathlib import Path

import numpy as np

from .distribution import JointAssignmentDistribution
from .errors import DataError
from .sharing import ArchitectureSpec, build_banks
from .tensor import AdamState
from .trainer import TrainConfig, TrainState

FORMAT_VERSION = 1


def save_checkpoint(state: TrainState, config: TrainConfig, path) -> None:
    """Write atomically: a crash mid-write never clobbers the previous file."""
    params = state.bank.parameters()
    meta = {
        "format": FORMAT_VERSION,
        "arch": state.bank.arch.to_dict(),
        "config": config.to_dict(),
        "ks": state.bank.ks,
        "mode": state.mode,
        "iteration": state.iteration,
        "pi": json.loads(state.dist.to_json()),
        "adam": {
            "beta1": state.adam.beta1,
            "beta2": state.adam.beta2,
            "eps": state.adam.eps,
            "t": state.adam.t,
            "steps": {str(k): v for k, v in state.adam.steps.items()},
        },
        "rngs": {name: rng.bit_generator.state for name, rng in state.rngs.items()},
    }
    arrays = {"meta": np.array(json.dumps(meta))}
    for p in params:
        arrays[f"param_{p.id}"] = p.data
        arrays[f"adam_m_{p.id}"] = state.adam.m[p.id]
        arrays[f"adam_v_{p.id}"] = state.adam.v[p.id]
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    try:
        npz = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    with npz:
        meta = json.loads(str(npz["meta"]))
        if meta.get("format") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        arch = ArchitectureSpec.from_dict(meta["arch"])
        config = TrainConfig.from_dict(meta["config"])
        # build_banks fixes structure and ids; values are overwritten below
        bank = build_banks(arch, meta["ks"], np.random.default_rng(0))
        a = meta["adam"]
        adam = AdamState(a["beta1"], a["beta2"], a["eps"], a["t"])
        for p in bank.parameters():
            p.data[...] = npz[f"param_{p.id}"]
            adam.m[p.id] = npz[f"adam_m_{p.id}"].copy()
            adam.v[p.id] = npz[f"adam_v_{p.id}"].copy()
            adam.steps[p.id] = int(a["steps"][str(p.id)])
    dist = JointAssignmentDistribution.from_json(json.dumps(meta["pi"]))
    rngs = {}
    for name, st in meta["rngs"].items():
        bg = getattr(np.random, st["bit_generator"])()
        bg.state = st
        rngs[name] = np.random.Generator(bg)
    return TrainState(bank, dist, adam, meta["mode"], meta["iteration"], rngs), config

"""Binary policy checkpoints.

Layout: 4-byte magic ``QFCK``, little-endian uint32 header length, a UTF-8
JSON header, then the network parameters as little-endian float32 in the
order declared by the header (per layer: weight matrix row-major with shape
``(in, out)``, then bias).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from quadfly.env import EnvConfig
from quadfly.nn import Mlp

MAGIC = b"QFCK"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated or otherwise corrupt checkpoint file."""


class CheckpointMismatch(CheckpointError):
    """Checkpoint is well formed but incompatible with what was requested."""


@dataclass
class Checkpoint:
    actor: Mlp
    env: EnvConfig
    step: int
    seed: int
    version: int = VERSION

    @property
    def descriptor(self) -> dict:
        return self.actor.descriptor()


def save_checkpoint(path, actor: Mlp, env: EnvConfig, step: int, seed: int) -> None:
    header = {
        "format_version": VERSION,
        "architecture": actor.descriptor(),
        "n_params": int(actor.n_params),
        "dtype": "<f4",
        "step": int(step),
        "seed": int(seed),
        "env": env.to_dict(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    data = np.asarray(actor.params, dtype="<f4").tobytes()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + data)


def load_checkpoint(path, expect_architecture: dict | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + n:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8:8 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    if header.get("format_version") != VERSION:
        raise CheckpointMismatch(f"{path}: format version {header.get('format_version')}, expected {VERSION}")
    arch = header["architecture"]
    if expect_architecture is not None and arch != expect_architecture:
        raise CheckpointMismatch(f"{path}: architecture {arch} does not match {expect_architecture}")
    actor = Mlp(arch["sizes"], arch["hidden"], arch["output"])
    body = raw[8 + n:]
    if len(body) != 4 * actor.n_params or header["n_params"] != actor.n_params:
        raise CheckpointError(f"{path}: expected {4 * actor.n_params} parameter bytes, found {len(body)}")
    actor.params[...] = np.frombuffer(body, dtype="<f4")
    env = EnvConfig.from_dict(header["env"])
    if actor.sizes[0] != env.actor_obs_dim:
        raise CheckpointMismatch(f"{path}: actor input {actor.sizes[0]} != observation size {env.actor_obs_dim}")
    return Checkpoint(actor, env, header["step"], header["seed"], header["format_version"])

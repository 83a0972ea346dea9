"""Versioned single-file checkpoint container.

Layout (all integers little-endian):

    magic   b"PFCK"
    u32     format version
    u64     header length in bytes
    bytes   header JSON (configs, iteration, source dims, blob index)
    bytes   blob data: named float32 arrays, offsets recorded in the header
    bytes   64 ascii hex chars: sha256 of everything above

Writes go to a temp file in the target directory followed by an atomic
rename, so a concurrently serving process never observes a torn file. The
checksum is verified on load; any mismatch is a hard error.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .discriminator import Discriminator, DiscriminatorConfig
from .errors import ChecksumError, ConfigError
from .generator import Generator, GeneratorConfig
from .training import Adam, CurriculumRanges, TrainConfig, TrainState

MAGIC = b"PFCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    format_version: int
    iteration: int
    generator_config: GeneratorConfig
    discriminator_config: DiscriminatorConfig
    train_config: TrainConfig
    source_image: np.ndarray  # (3,H,W) float32, padded to the generator's grid
    source_orig_hw: tuple[int, int]
    blobs: dict[str, np.ndarray]


def _config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["transform_ranges"] = CurriculumRanges(**d["transform_ranges"])
    return TrainConfig(**d)


def collect_blobs(state: TrainState) -> dict[str, np.ndarray]:
    blobs: dict[str, np.ndarray] = {}
    for name, p in state.g.named_params():
        blobs[f"g.{name}"] = p.data
    for name, b in state.g.named_buffers():
        blobs[f"gbuf.{name}"] = b
    for name, p in state.d.named_params():
        blobs[f"d.{name}"] = p.data
    for name, b in state.d.named_buffers():
        blobs[f"dbuf.{name}"] = b
    for name, arr in state.opt_g.state_blobs("adam_g"):
        blobs[name] = arr
    for name, arr in state.opt_d.state_blobs("adam_d"):
        blobs[name] = arr
    return blobs


def save_checkpoint(path, state: TrainState, source_image: np.ndarray,
                    source_orig_hw: tuple[int, int]) -> None:
    blobs = collect_blobs(state)
    blobs["source"] = np.ascontiguousarray(source_image, dtype=np.float32)

    index = []
    offset = 0
    chunks = []
    for name in sorted(blobs):
        arr = np.ascontiguousarray(blobs[name], dtype=np.float32)
        raw = arr.astype("<f4", copy=False).tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset,
                      "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)

    header = {
        "format_version": FORMAT_VERSION,
        "iteration": state.iteration,
        "generator_config": _config_to_dict(state.g.config),
        "discriminator_config": _config_to_dict(state.d.config),
        "train_config": _config_to_dict(state.cfg),
        "source_orig_hw": list(source_orig_hw),
        "blobs": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    digest = hashlib.sha256()
    prefix = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header_bytes))
    digest.update(prefix)
    digest.update(header_bytes)
    for raw in chunks:
        digest.update(raw)

    dirname = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".pfck.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(prefix)
            fh.write(header_bytes)
            for raw in chunks:
                fh.write(raw)
            fh.write(digest.hexdigest().encode("ascii"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        payload = fh.read()
    if len(payload) < 16 + 64 or payload[:4] != MAGIC:
        raise ChecksumError(f"{path}: not a patchforge checkpoint")
    body, stored = payload[:-64], payload[-64:]
    actual = hashlib.sha256(body).hexdigest().encode("ascii")
    if actual != stored:
        raise ChecksumError(f"{path}: content checksum mismatch")
    version, header_len = struct.unpack("<IQ", body[4:16])
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format version {version}")
    header = json.loads(body[16 : 16 + header_len].decode("utf-8"))
    data = body[16 + header_len :]

    blobs = {}
    for ent in header["blobs"]:
        raw = data[ent["offset"] : ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(ent["shape"]).copy()
        blobs[ent["name"]] = arr
    source = blobs.pop("source")
    return Checkpoint(
        format_version=version,
        iteration=header["iteration"],
        generator_config=GeneratorConfig(**header["generator_config"]),
        discriminator_config=DiscriminatorConfig(**header["discriminator_config"]),
        train_config=_train_config_from_dict(header["train_config"]),
        source_image=source,
        source_orig_hw=tuple(header["source_orig_hw"]),
        blobs=blobs,
    )


def _load_group(target, blobs: dict, prefix: str) -> None:
    for name, p in target.named_params():
        key = f"{prefix}.{name}"
        if key not in blobs:
            raise ConfigError(f"checkpoint missing parameter {key}")
        if tuple(p.data.shape) != tuple(blobs[key].shape):
            raise ConfigError(f"shape mismatch for {key}")
        p.data[...] = blobs[key]
    for name, _ in target.named_buffers():
        key = f"{prefix}buf.{name}"
        if key not in blobs:
            raise ConfigError(f"checkpoint missing buffer {key}")
        target.set_buffer(name, blobs[key])


def restore_generator(ckpt: Checkpoint) -> Generator:
    """Generator with checkpointed weights, ready for inference."""
    g = Generator(ckpt.generator_config, np.random.default_rng(0))
    _load_group(g, ckpt.blobs, "g")
    return g


def restore_state(ckpt: Checkpoint) -> TrainState:
    """Full training state (both nets + optimizers) for resuming."""
    from .training import build_models

    state = build_models(ckpt.train_config, ckpt.generator_config,
                         ckpt.discriminator_config)
    _load_group(state.g, ckpt.blobs, "g")
    _load_group(state.d, ckpt.blobs, "d")
    state.opt_g.load_blobs("adam_g", ckpt.blobs)
    state.opt_d.load_blobs("adam_d", ckpt.blobs)
    state.iteration = ckpt.iteration
    return state

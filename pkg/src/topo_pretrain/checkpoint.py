"""Checkpoint container: magic line, JSON header, raw little-endian float32 payload.

    TOPCKPT\\n
    <8-byte little-endian header length><UTF-8 JSON header><payload>

The header lists every array as ``{"name", "shape", "offset"}`` (offset in
float32 units) so the file is inspectable with ``head -c``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import (
    EncoderConfig,
    GINLayer,
    Model,
    Module,
    ViewLearner,
    make_input_head,
    make_output_head,
)

FORMAT_VERSION = 1
MAGIC = b"TOPCKPT\n"


class CheckpointError(ValueError):
    """Unreadable, corrupt or incompatible checkpoint."""


@dataclass
class Checkpoint:
    encoder_config: EncoderConfig
    input_head: dict
    output_head: dict
    params: list[tuple[str, np.ndarray]]
    buffers: list[tuple[str, np.ndarray]] = field(default_factory=list)
    view_params: list[tuple[str, np.ndarray]] | None = None
    view_buffers: list[tuple[str, np.ndarray]] | None = None
    method: str = "none"
    corpus_digest: str = ""
    seed: int = 0
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    @property
    def checkpoint_id(self) -> str:
        return hashlib.sha256(checkpoint_bytes(self)).hexdigest()[:16]


def _module_arrays(mod: Module):
    params = [(n, t.data.astype(np.float32).copy()) for n, t in mod.named_parameters()]
    buffers = [(n, getattr(st, attr).astype(np.float32).copy())
               for n, st, attr in mod.named_buffers()]
    return params, buffers


def _load_arrays(mod: Module, params, buffers) -> None:
    named = dict(mod.named_parameters())
    if list(named) != [n for n, _ in params]:
        raise CheckpointError("parameter names/order do not match the model layout")
    for name, arr in params:
        t = named[name]
        if t.shape != arr.shape:
            raise CheckpointError(f"{name}: shape {arr.shape} != model {t.shape}")
        t.data = arr.copy()
    slots = {n: (st, attr) for n, st, attr in mod.named_buffers()}
    for name, arr in buffers:
        if name not in slots:
            raise CheckpointError(f"unknown buffer {name}")
        st, attr = slots[name]
        setattr(st, attr, arr.astype(np.float32).copy())


def checkpoint_from_model(model: Model, view: ViewLearner | None = None, method: str = "none",
                          corpus_digest: str = "", seed: int = 0, extra: dict | None = None
                          ) -> Checkpoint:
    params, buffers = _module_arrays(model)
    vp = vb = None
    if view is not None:
        vp, vb = _module_arrays(view)
    out_desc = {"kind": "none"} if model.output_head is None else model.output_head.descriptor()
    return Checkpoint(encoder_config=model.config, input_head=model.input_head.descriptor(),
                      output_head=out_desc, params=params, buffers=buffers,
                      view_params=vp, view_buffers=vb, method=method,
                      corpus_digest=corpus_digest, seed=seed, extra=dict(extra or {}))


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    cfg = ckpt.encoder_config
    rng = np.random.default_rng(0)
    h = cfg.hidden_dim
    model = Model(cfg, make_input_head(ckpt.input_head, h, rng),
                  [GINLayer(rng, h, cfg.batch_norm, cfg.epsilon_learnable)
                   for _ in range(cfg.num_layers)],
                  make_output_head(ckpt.output_head, h, rng))
    _load_arrays(model, ckpt.params, ckpt.buffers)
    return model


def view_from_checkpoint(ckpt: Checkpoint) -> ViewLearner | None:
    if ckpt.view_params is None:
        return None
    view = ViewLearner(ckpt.encoder_config)
    _load_arrays(view, ckpt.view_params, ckpt.view_buffers or [])
    return view


def _layout(groups: dict[str, list[tuple[str, np.ndarray]] | None]):
    entries, chunks, offset = {}, [], 0
    for key, arrays in groups.items():
        if arrays is None:
            entries[key] = None
            continue
        rows = []
        for name, arr in arrays:
            flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
            rows.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(flat.tobytes())
            offset += flat.size
        entries[key] = rows
    return entries, b"".join(chunks)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    entries, payload = _layout({"params": ckpt.params, "buffers": ckpt.buffers,
                                "view_params": ckpt.view_params,
                                "view_buffers": ckpt.view_buffers})
    header = {
        "format_version": ckpt.format_version,
        "encoder_config": ckpt.encoder_config.to_dict(),
        "input_head": ckpt.input_head,
        "output_head": ckpt.output_head,
        "method": ckpt.method,
        "corpus_digest": ckpt.corpus_digest,
        "seed": ckpt.seed,
        "extra": ckpt.extra,
        "arrays": entries,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(raw)) + raw + payload


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    try:
        (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
        header = json.loads(data[pos + 8:pos + 8 + hlen])
    except (struct.error, json.JSONDecodeError) as err:
        raise CheckpointError(f"corrupt header: {err}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {header.get('format_version')!r}")
    payload = np.frombuffer(data[pos + 8 + hlen:], dtype="<f4")

    def arrays(key):
        rows = header["arrays"].get(key)
        if rows is None:
            return None
        out = []
        for row in rows:
            n = int(np.prod(row["shape"])) if row["shape"] else 1
            chunk = payload[row["offset"]:row["offset"] + n]
            if chunk.size != n:
                raise CheckpointError(f"payload truncated at {row['name']}")
            out.append((row["name"], chunk.astype(np.float32).reshape(row["shape"])))
        return out

    return Checkpoint(
        encoder_config=EncoderConfig.from_dict(header["encoder_config"]),
        input_head=header["input_head"], output_head=header["output_head"],
        params=arrays("params"), buffers=arrays("buffers") or [],
        view_params=arrays("view_params"), view_buffers=arrays("view_buffers"),
        method=header["method"], corpus_digest=header["corpus_digest"],
        seed=header["seed"], format_version=header["format_version"],
        extra=header.get("extra", {}),
    )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read {path}: {err.strerror}") from None
    return checkpoint_from_bytes(data)

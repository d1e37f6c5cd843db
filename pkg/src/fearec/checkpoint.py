"""Model checkpoint container.

Layout: the magic bytes ``FEAREC01``, a little-endian uint64 header length,
a JSON header, then the concatenated parameter payload.  The header carries
the model configuration and, per parameter, its shape and byte offset into
the payload.  Tensors are stored as little-endian float32 in canonical-name
order, so identical parameters always serialize to identical bytes (no
timestamps, no environment state).

Canonical parameter names (layers are 1-based):

    item_table, pos_table, emb_norm.scale, emb_norm.shift,
    layer{l}.Wq, layer{l}.Wk, layer{l}.Wv, layer{l}.Wo,
    layer{l}.ffn_W1, layer{l}.ffn_b1, layer{l}.ffn_W2, layer{l}.ffn_b2,
    layer{l}.norm.scale, layer{l}.norm.shift,
    final_norm.scale, final_norm.shift
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .encoder import FEARec, ModelConfig

MAGIC = b"FEAREC01"


def canonical_parameters(model: FEARec) -> list[tuple[str, torch.Tensor]]:
    """(canonical name, tensor) pairs in the fixed serialization order."""
    pairs: list[tuple[str, torch.Tensor]] = [
        ("item_table", model.item_table),
        ("pos_table", model.pos_table),
        ("emb_norm.scale", model.emb_norm_scale),
        ("emb_norm.shift", model.emb_norm_shift),
    ]
    for i, layer in enumerate(model.layers, start=1):
        pairs.extend(
            [
                (f"layer{i}.Wq", layer.Wq),
                (f"layer{i}.Wk", layer.Wk),
                (f"layer{i}.Wv", layer.Wv),
                (f"layer{i}.Wo", layer.Wo),
                (f"layer{i}.ffn_W1", layer.ffn_W1),
                (f"layer{i}.ffn_b1", layer.ffn_b1),
                (f"layer{i}.ffn_W2", layer.ffn_W2),
                (f"layer{i}.ffn_b2", layer.ffn_b2),
                (f"layer{i}.norm.scale", layer.norm_scale),
                (f"layer{i}.norm.shift", layer.norm_shift),
            ]
        )
    pairs.append(("final_norm.scale", model.final_norm_scale))
    pairs.append(("final_norm.shift", model.final_norm_shift))
    return pairs


def save_checkpoint(path, model: FEARec) -> None:
    entries = {}
    chunks = []
    offset = 0
    for name, tensor in canonical_parameters(model):
        arr = tensor.detach().cpu().numpy().astype("<f4")
        raw = arr.tobytes()
        entries[name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"config": model.cfg.to_dict(), "params": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with Path(path).open("wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<Q", len(header)))
        handle.write(header)
        for raw in chunks:
            handle.write(raw)


def load_checkpoint(path) -> FEARec:
    """Rebuild the model (float32) from a checkpoint file."""
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"not a model checkpoint: {path}")
    header_len = struct.unpack("<Q", blob[len(MAGIC) : len(MAGIC) + 8])[0]
    header_start = len(MAGIC) + 8
    header = json.loads(blob[header_start : header_start + header_len])
    payload = blob[header_start + header_len :]

    cfg = ModelConfig.from_dict(header["config"])
    model = FEARec(cfg)
    with torch.no_grad():
        for name, tensor in canonical_parameters(model):
            entry = header["params"].get(name)
            if entry is None:
                raise ValueError(f"checkpoint missing parameter {name}")
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
            tensor.copy_(torch.from_numpy(arr.reshape(shape).copy()))
    return model

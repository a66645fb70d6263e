"""Binary model snapshots and helpers shared by session/service persistence.

Model snapshot layout: one JSON header line (shapes, hyperparameters,
hash of the architecture state), then raw little-endian float64 blocks
in fixed order: global head weights, global biases, shared attention
queries, then each local head (ascending group id) as weights, biases.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import DimMismatch
from .heads import LinearHead, LocalHead, ModelParams, SharedAttention
from .morph import ArchState

MODEL_FORMAT = "alice-model-v1"


def arch_hash(arch: ArchState) -> str:
    doc = {
        "num_classes": arch.num_classes,
        "groups": [list(g.members) for g in arch.groups],
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


def model_to_bytes(model: ModelParams, arch: ArchState, hyper: dict | None = None) -> bytes:
    in_dim = model.global_head.weights.shape[1]
    header = {
        "format": MODEL_FORMAT,
        "arch_hash": arch_hash(arch),
        "global_arity": model.global_head.arity,
        "in_dim": in_dim,
        "m": model.attention.m,
        "locals": [
            {"group_id": gid, "arity": model.local_heads[gid].arity}
            for gid in sorted(model.local_heads)
        ],
        "hyper": hyper or {},
    }
    blocks = [json.dumps(header, sort_keys=True).encode("utf-8"), b"\n"]
    blocks.append(np.ascontiguousarray(model.global_head.weights, "<f8").tobytes())
    blocks.append(np.ascontiguousarray(model.global_head.biases, "<f8").tobytes())
    blocks.append(np.ascontiguousarray(model.attention.queries, "<f8").tobytes())
    for gid in sorted(model.local_heads):
        head = model.local_heads[gid]
        blocks.append(np.ascontiguousarray(head.weights, "<f8").tobytes())
        blocks.append(np.ascontiguousarray(head.biases, "<f8").tobytes())
    return b"".join(blocks)


def model_from_bytes(data: bytes) -> tuple[ModelParams, dict]:
    newline = data.index(b"\n")
    header = json.loads(data[:newline].decode("utf-8"))
    if header.get("format") != MODEL_FORMAT:
        raise DimMismatch(f"unknown model snapshot format {header.get('format')!r}")
    body = np.frombuffer(data[newline + 1:], dtype="<f8")
    arity, in_dim, m = header["global_arity"], header["in_dim"], header["m"]
    expected = arity * in_dim + arity + m * in_dim + sum(
        lh["arity"] * (m * in_dim) + lh["arity"] for lh in header["locals"])
    if body.size != expected:
        raise DimMismatch(
            f"model snapshot holds {body.size} parameters, expected {expected}")

    def take(n: int) -> np.ndarray:
        nonlocal body
        out, body = body[:n], body[n:]
        return np.array(out, dtype=np.float64)

    global_head = LinearHead(take(arity * in_dim).reshape(arity, in_dim), take(arity))
    attention = SharedAttention(take(m * in_dim).reshape(m, in_dim))
    local_heads = {}
    for lh in header["locals"]:
        gid, la = int(lh["group_id"]), int(lh["arity"])
        local_heads[gid] = LocalHead(
            gid, take(la * m * in_dim).reshape(la, m * in_dim), take(la))
    return ModelParams(global_head, attention, local_heads), header

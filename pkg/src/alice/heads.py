"""Trainable heads: global linear classifier, shared latent-query
attention with per-group local heads, cross-entropy training with
momentum SGD, and saliency grids.

Gradients are derived by hand for exactly these three parameter blocks
(global W/b, shared attention queries, local W/b per group); there is no
general autodiff. Everything runs in float64 with stable softmax
(max subtraction), and gradient accumulation follows a fixed order so
training is bit-deterministic given (seed, data, config).

Attention follows the M-latent-query form: the H*W grid cells act as
both keys and values, logits are Q K^T / sqrt(d), and each local head is
a private fully-connected layer on the query-major flattened attention
output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, InvalidLabel, UnknownClass
from .morph import PLAIN, ArchState


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


@dataclass
class LinearHead:
    weights: np.ndarray  # (arity, in_dim)
    biases: np.ndarray   # (arity,)

    @property
    def arity(self) -> int:
        return self.weights.shape[0]


@dataclass
class SharedAttention:
    queries: np.ndarray  # (M, d)

    @property
    def m(self) -> int:
        return self.queries.shape[0]


@dataclass
class LocalHead:
    group_id: int
    weights: np.ndarray  # (arity, M*d)
    biases: np.ndarray   # (arity,)

    @property
    def arity(self) -> int:
        return self.weights.shape[0]


@dataclass
class ModelParams:
    global_head: LinearHead
    attention: SharedAttention
    local_heads: dict[int, LocalHead] = field(default_factory=dict)


# -- forward passes -----------------------------------------------------------

def _as_cells(maps: np.ndarray) -> np.ndarray:
    """(B, H, W, d) or (H, W, d) -> (B, H*W, d) in row-major cell order."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim == 3:
        maps = maps[None]
    b, h, w, d = maps.shape
    return maps.reshape(b, h * w, d)


def _attention(queries: np.ndarray, cells: np.ndarray):
    """Batched attention: returns (A, P) for cells (B, n, d)."""
    d = queries.shape[1]
    if cells.shape[2] != d:
        raise DimMismatch(f"query width {d} != map channels {cells.shape[2]}")
    logits = np.einsum("md,bnd->bmn", queries, cells) / np.sqrt(d)
    p = softmax(logits, axis=2)
    a = np.einsum("bmn,bnd->bmd", p, cells)
    return a, p


def attention_forward(queries: np.ndarray, amap: np.ndarray) -> np.ndarray:
    """Attention output A (M, d) for a single (H, W, d) map."""
    a, _ = _attention(np.asarray(queries, dtype=np.float64), _as_cells(amap))
    return a[0]


def global_forward(head: LinearHead, pooled: np.ndarray) -> np.ndarray:
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.shape[-1] != head.weights.shape[1]:
        raise DimMismatch(
            f"pooled dim {pooled.shape[-1]} != head input {head.weights.shape[1]}")
    return pooled @ head.weights.T + head.biases


def local_forward(shared: SharedAttention, head: LocalHead, amap: np.ndarray) -> np.ndarray:
    """Logits of one local head on a single map (query-major flattening)."""
    a = attention_forward(shared.queries, amap)
    flat = a.reshape(-1)
    if flat.shape[0] != head.weights.shape[1]:
        raise DimMismatch(
            f"flattened attention dim {flat.shape[0]} != head input {head.weights.shape[1]}")
    return head.weights @ flat + head.biases


# -- loss and gradients --------------------------------------------------------

def _check_labels(labels: np.ndarray, arity: int):
    if labels.size == 0:
        raise InvalidLabel("empty batch")
    if labels.min() < 0 or labels.max() >= arity:
        raise InvalidLabel(f"labels must be in [0, {arity})")


def global_loss_and_grads(head: LinearHead, pooled: np.ndarray, labels):
    """Mean cross-entropy over a pooled-feature batch, with dW and db."""
    x = np.asarray(pooled, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    _check_labels(y, head.arity)
    z = global_forward(head, x)
    logp = _log_softmax(z)
    n = x.shape[0]
    loss = -float(logp[np.arange(n), y].mean())
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    return loss, {"weights": dz.T @ x, "biases": dz.sum(axis=0)}


def local_loss_and_grads(shared: SharedAttention, head: LocalHead, maps, labels,
                         weight: float = 1.0):
    """Mean cross-entropy of one local head over a batch of full maps.

    Returns gradients for the private W/b and for the shared queries;
    ``weight`` rescales the contribution (used when a training batch
    mixes several groups and each sub-batch contributes count/total).
    """
    cells = _as_cells(maps)
    y = np.asarray(labels, dtype=int)
    _check_labels(y, head.arity)
    q = np.asarray(shared.queries, dtype=np.float64)
    m, d = q.shape
    b = cells.shape[0]
    a, p = _attention(q, cells)
    flat = a.reshape(b, m * d)
    z = flat @ head.weights.T + head.biases
    logp = _log_softmax(z)
    loss = -float(logp[np.arange(b), y].mean()) * weight

    dz = np.exp(logp)
    dz[np.arange(b), y] -= 1.0
    dz *= weight / b
    d_w = dz.T @ flat
    d_b = dz.sum(axis=0)
    d_a = (dz @ head.weights).reshape(b, m, d)
    d_p = np.einsum("bmd,bnd->bmn", d_a, cells)
    d_s = p * (d_p - np.sum(d_p * p, axis=2, keepdims=True))
    d_q = np.einsum("bmn,bnd->md", d_s, cells) / np.sqrt(d)
    return loss, {"queries": d_q, "weights": d_w, "biases": d_b}


# -- optimizer ------------------------------------------------------------------

def lr_at_epoch(base_lr: float, epoch: int) -> float:
    """Step decay: base_lr * 0.9 ** floor(epoch / 2)."""
    return base_lr * 0.9 ** (epoch // 2)


@dataclass
class OptimizerState:
    base_lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-5
    epoch: int = 0
    momenta: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return lr_at_epoch(self.base_lr, self.epoch)


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             opt: OptimizerState, no_decay=frozenset()):
    """Classic momentum SGD, in place.

    buf <- momentum * buf + (grad + wd * param); param <- param - lr * buf.
    Weight decay applies to weight matrices and attention queries, never
    to parameters named in ``no_decay`` (biases).
    """
    lr = opt.lr
    for name in sorted(grads):
        g = grads[name]
        if name not in no_decay and opt.weight_decay:
            g = g + opt.weight_decay * params[name]
        buf = opt.momenta.get(name)
        if buf is None:
            buf = np.zeros_like(params[name])
            opt.momenta[name] = buf
        buf *= opt.momentum
        buf += g
        params[name] -= lr * buf


# -- initialization --------------------------------------------------------------

def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, (rows, cols))


def init_model(arch: ArchState, d: int, m: int, seed) -> ModelParams:
    """Fresh parameters for the current hierarchy, fully seed-determined.

    Weight matrices and attention queries are uniform in [-a, a] with
    a = sqrt(6 / (fan_in + fan_out)); biases start at zero. Local heads
    are created in ascending group-id order.
    """
    rng = np.random.default_rng(seed)
    global_head = LinearHead(_glorot(rng, arch.arity, d), np.zeros(arch.arity))
    attention = SharedAttention(_glorot(rng, m, d))
    local_heads = {}
    for group in arch.groups:
        arity = len(group.members)
        local_heads[group.group_id] = LocalHead(
            group.group_id, _glorot(rng, arity, m * d), np.zeros(arity))
    return ModelParams(global_head, attention, local_heads)


# -- saliency ----------------------------------------------------------------------

def saliency(model: ModelParams, arch: ArchState, amap: np.ndarray,
             target_fine: int) -> np.ndarray:
    """Gradient of the target class's pre-softmax score w.r.t. the map,
    absolute value, max over channels: an H x W non-negative grid.

    Plain classes differentiate their global-node score (average pooling
    spreads the gradient uniformly over cells); grouped classes
    differentiate their local-head score through the shared attention.
    """
    amap = np.asarray(amap, dtype=np.float64)
    h, w, d = amap.shape
    if not 0 <= target_fine < arch.num_classes:
        raise UnknownClass(f"fine class {target_fine} out of range")
    node = arch.nodes[arch.node_of(target_fine)]
    if node.kind == PLAIN:
        grad_cell = model.global_head.weights[arch.node_of(target_fine)] / (h * w)
        return np.full((h, w), np.max(np.abs(grad_cell)))

    group = arch.group_by_id(node.ref)
    head = model.local_heads[group.group_id]
    row = group.members.index(target_fine)
    q = model.attention.queries
    m = q.shape[0]
    cells = _as_cells(amap)[0]
    logits = q @ cells.T / np.sqrt(d)
    p = softmax(logits, axis=1)
    d_a = head.weights[row].reshape(m, d)
    d_p = d_a @ cells.T
    d_s = p * (d_p - np.sum(d_p * p, axis=1, keepdims=True))
    d_cells = p.T @ d_a + d_s.T @ q / np.sqrt(d)
    return np.max(np.abs(d_cells.reshape(h, w, d)), axis=2)

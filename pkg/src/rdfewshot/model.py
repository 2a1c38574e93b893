"""Few-shot recognition model: convolutional embedding, channel attention,
and an image-to-class local-descriptor metric.

The embedding is the standard four-block, 64-filter architecture with 2x2
max pooling after the first two blocks only, so an 84x84 input keeps a
21x21 spatial grid: each of the m = 441 positions is a 64-long local
descriptor.  A squeeze-and-excitation block (shared between support and
query branches) rescales channels with weights sigmoid(W2 relu(W1 z)),
where z is the per-channel spatial mean.

A query is scored against a class by summing, over its descriptors, the
cosine similarities of the k nearest descriptors pooled from all of that
class's support images; the class with the highest sum wins.  A
prototype-mean baseline (nearest mean embedding by squared Euclidean
distance) is available behind the same interface.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np

from .exceptions import ConfigError
from .nn import tensor as T
from .nn.tensor import Tensor, custom_op, no_grad
from .nn.layers import BatchNorm2d, Conv2d, MaxPool2d, ReLU, cross_entropy

logger = logging.getLogger(__name__)

_warned_zero_norm = False


def _warn_zero_norm(count: int, where: str) -> None:
    global _warned_zero_norm
    msg = f"{count} zero-norm descriptor(s) in {where}; their similarities are 0"
    if _warned_zero_norm:
        logger.debug(msg)
    else:
        logger.warning(msg)
        _warned_zero_norm = True


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and metric knobs; serialized with every run."""

    layout: str = "conv64f-v1"
    input_channels: int = 3
    descriptor_dim: int = 64
    se_reduction: int = 16
    knn_k: int = 3
    se_enabled: bool = True
    metric: str = "knn"

    def __post_init__(self):
        if self.descriptor_dim % self.se_reduction:
            raise ConfigError(
                f"se_reduction {self.se_reduction} must divide descriptor_dim "
                f"{self.descriptor_dim}")
        if self.metric not in ("knn", "prototype"):
            raise ConfigError(f"metric must be 'knn' or 'prototype', got {self.metric!r}")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Cosine metric kernels
# ---------------------------------------------------------------------------

def _normalize_rows(x: np.ndarray):
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe, norms[:, 0]


def _denormalize_grad(gy: np.ndarray, yn: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Gradient through y = x/|x| given grad wrt y; zero rows get zero grad."""
    inner = (gy * yn).sum(axis=1, keepdims=True)
    gx = (gy - yn * inner) / np.where(norms[:, None] > 0.0, norms[:, None], 1.0)
    gx[norms == 0.0] = 0.0
    return gx


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors; 0 when either has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        _warn_zero_norm(1, "cosine_sim")
        return 0.0
    return float(a @ b / (na * nb))


def _topk_sims(query_desc: np.ndarray, pool: np.ndarray, k: int):
    """Top-k cosine values and their pool indices per query descriptor.

    k is tiny, so k argmax sweeps beat a full partition of the similarity
    matrix; ties resolve to the lower pool index.
    """
    m = pool.shape[0]
    if k > m:
        raise ConfigError(f"k={k} exceeds pool size {m}")
    qn, qr = _normalize_rows(np.asarray(query_desc))
    pn, pr = _normalize_rows(np.asarray(pool))
    zeros = int((qr == 0).sum() + (pr == 0).sum())
    if zeros:
        _warn_zero_norm(zeros, "knn metric")
    sims = qn @ pn.T
    if k == m:
        idx = np.broadcast_to(np.arange(m), sims.shape).copy()
        vals = sims
    else:
        rows = np.arange(sims.shape[0])
        idx = np.empty((sims.shape[0], k), dtype=np.intp)
        vals = np.empty((sims.shape[0], k), dtype=sims.dtype)
        for j in range(k):
            best = sims.argmax(axis=1)
            idx[:, j] = best
            vals[:, j] = sims[rows, best]
            sims[rows, best] = -np.inf
    return vals, idx, (qn, qr, pn, pr)


def class_score(query_desc: np.ndarray, pool: np.ndarray, k: int) -> float:
    """Sum over query descriptors of their k best in-class cosine similarities."""
    vals, _, _ = _topk_sims(query_desc, pool, k)
    return float(vals.sum())


def class_score_neighbors(query_desc: np.ndarray, pool: np.ndarray, k: int):
    """(score, list of per-descriptor neighbor index sets) for oracle checks."""
    vals, idx, _ = _topk_sims(query_desc, pool, k)
    return float(vals.sum()), [frozenset(row) for row in idx]


def normalize_rows_op(x: Tensor, where: str = "descriptors") -> Tensor:
    """Row-wise unit normalization on the tape; zero rows stay zero (their
    similarities are 0 and they carry no gradient)."""
    yn, norms = _normalize_rows(x.data)
    zeros = int((norms == 0).sum())
    if zeros:
        _warn_zero_norm(zeros, where)
    return custom_op(yn, (x,), lambda g: (
        _denormalize_grad(g, yn, norms).astype(x.data.dtype, copy=False),))


def _topk_unit_sims(qn: np.ndarray, pn: np.ndarray, k: int):
    """Top-k of qn @ pn.T per row for unit (or zero) rows; lower index wins ties."""
    m = pn.shape[0]
    if k > m:
        raise ConfigError(f"k={k} exceeds pool size {m}")
    sims = qn @ pn.T
    if k == m:
        idx = np.broadcast_to(np.arange(m), sims.shape).copy()
        return sims, idx
    rows = np.arange(sims.shape[0])
    idx = np.empty((sims.shape[0], k), dtype=np.intp)
    vals = np.empty((sims.shape[0], k), dtype=sims.dtype)
    for j in range(k):
        best = sims.argmax(axis=1)
        idx[:, j] = best
        vals[:, j] = sims[rows, best]
        sims[rows, best] = -np.inf
    return vals, idx


def knn_class_scores(query_unit: Tensor, pool_unit: Tensor, k: int,
                     per_query: int) -> Tensor:
    """Differentiable episode kernel over pre-normalized descriptors.

    ``query_unit`` stacks unit descriptors of several query images,
    (n_query*per_query, d); ``pool_unit`` is one class's unit support
    descriptors (pool_size, d).  Returns one score per query image.
    Gradients flow into the selected similarities only (the top-k choice is
    locally constant).
    """
    p_rows, d = query_unit.data.shape
    if p_rows % per_query:
        raise ConfigError(f"query rows {p_rows} not divisible by per_query {per_query}")
    n_query = p_rows // per_query
    qn, pn = query_unit.data, pool_unit.data
    vals, idx = _topk_unit_sims(qn, pn, k)
    scores = vals.sum(axis=1).reshape(n_query, per_query).sum(axis=1)

    def back(g):
        # every selected similarity of query row p shares the weight g[p]
        grow = np.repeat(np.asarray(g), per_query)          # (p_rows,)
        gqn = grow[:, None] * pn[idx].sum(axis=1)
        flat = idx.reshape(-1)
        contrib = np.repeat(grow[:, None] * qn, idx.shape[1], axis=0)
        order = np.argsort(flat, kind="stable")
        sorted_idx = flat[order]
        starts = np.flatnonzero(np.r_[True, np.diff(sorted_idx) > 0])
        sums = np.add.reduceat(contrib[order], starts, axis=0)
        gpn = np.zeros_like(pn)
        gpn[sorted_idx[starts]] = sums
        return (gqn.astype(qn.dtype, copy=False), gpn.astype(pn.dtype, copy=False))
    return custom_op(scores.astype(qn.dtype, copy=False),
                     (query_unit, pool_unit), back)


def descriptor_view(features: Tensor) -> Tensor:
    """(B, h, w, d) feature maps seen as (B, h*w, d) local descriptor lists.

    Channels-last makes this a pure reshape: descriptor i is the channel
    vector at spatial position i, same storage, no copy of different values.
    """
    b, h, w, d = features.data.shape
    return T.reshape(features, (b, h * w, d))


# ---------------------------------------------------------------------------
# Embedding network and attention block
# ---------------------------------------------------------------------------

class Conv64F:
    """Four conv blocks (3x3, 64 filters, batchnorm, ReLU), pooling after the
    first two; 84x84 inputs yield 21x21x64 features."""

    def __init__(self, in_channels: int = 3, channels: int = 64,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.blocks = []
        prev = in_channels
        for i in range(4):
            conv = Conv2d(prev, channels, kernel=3, stride=1, pad=1, bias=False,
                          rng=rng, dtype=dtype)
            bn = BatchNorm2d(channels, dtype=dtype)
            pool = MaxPool2d(2) if i < 2 else None
            self.blocks.append((conv, bn, ReLU(), pool))
            prev = channels

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        out = x
        for conv, bn, act, pool in self.blocks:
            out = act.forward(bn.forward(conv.forward(out, train), train), train)
            if pool is not None:
                out = pool.forward(out, train)
        return out

    def params(self, prefix: str = "embed") -> list:
        out = []
        for i, (conv, bn, _, _) in enumerate(self.blocks, start=1):
            out += conv.params(f"{prefix}.block{i}.conv")
            out += bn.params(f"{prefix}.block{i}.bn")
        return out

    def buffers(self, prefix: str = "embed") -> list:
        out = []
        for i, (_, bn, _, _) in enumerate(self.blocks, start=1):
            out += bn.buffers(f"{prefix}.block{i}.bn")
        return out

    def set_buffer(self, name: str, value: np.ndarray, prefix: str = "embed") -> None:
        for i, (_, bn, _, _) in enumerate(self.blocks, start=1):
            if name.startswith(f"{prefix}.block{i}.bn."):
                bn.set_buffer(name, value)
                return
        raise ConfigError(f"unknown embedding buffer {name!r}")


class SEBlock:
    """Channel attention: squeeze (spatial mean), excite (bottleneck MLP with
    sigmoid), recalibrate (channel-wise product)."""

    def __init__(self, channels: int = 64, reduction: int = 16,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if channels % reduction:
            raise ConfigError(f"reduction {reduction} must divide channels {channels}")
        rng = rng or np.random.default_rng(0)
        hidden = channels // reduction
        from .nn.layers import kaiming_uniform
        self.w1 = Tensor(kaiming_uniform((hidden, channels), channels, rng, dtype),
                         requires_grad=True)
        self.w2 = Tensor(kaiming_uniform((channels, hidden), hidden, rng, dtype),
                         requires_grad=True)
        self.channels, self.reduction = channels, reduction

    def squeeze(self, features: Tensor) -> Tensor:
        """Per-channel spatial mean: (B, h, w, d) -> (B, d)."""
        return T.tmean(features, axis=(1, 2))

    def excite(self, z: Tensor) -> Tensor:
        """Channel weights in (0, 1): sigmoid(W2 relu(W1 z))."""
        hidden = T.relu(T.matmul(z, T.transpose(self.w1)))
        return T.sigmoid(T.matmul(hidden, T.transpose(self.w2)))

    def recalibrate(self, features: Tensor, s: Tensor) -> Tensor:
        b, d = s.data.shape
        return T.mul(features, T.reshape(s, (b, 1, 1, d)))

    def forward(self, features: Tensor) -> tuple:
        s = self.excite(self.squeeze(features))
        return self.recalibrate(features, s), s

    def params(self, prefix: str = "se") -> list:
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.w2", self.w2)]


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------

class FewShotNetwork:
    """Embedding + attention + metric, with named-parameter access for
    optimizers and checkpoints."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0,
                 dtype=np.float32, batch_size: int = 64):
        self.config = config or ModelConfig()
        self.dtype = dtype
        self.batch_size = batch_size
        root = np.random.SeedSequence(seed)
        embed_rng, se_rng = (np.random.default_rng(s) for s in root.spawn(2))
        self.embedder = Conv64F(self.config.input_channels,
                                self.config.descriptor_dim, rng=embed_rng, dtype=dtype)
        self.se = SEBlock(self.config.descriptor_dim, self.config.se_reduction,
                          rng=se_rng, dtype=dtype)

    # -- parameters and persistence --

    def named_params(self) -> list:
        params = self.embedder.params()
        if self.config.se_enabled:
            params += self.se.params()
        return params

    def named_buffers(self) -> list:
        return self.embedder.buffers()

    def state_arrays(self) -> dict:
        out = {name: p.data.copy() for name, p in self.embedder.params() + self.se.params()}
        out.update({name: b.copy() for name, b in self.named_buffers()})
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        own = dict(self.embedder.params() + self.se.params())
        for name, value in arrays.items():
            if name in own:
                p = own[name]
                if p.data.shape != value.shape:
                    raise ConfigError(
                        f"checkpoint param {name} has shape {value.shape}, "
                        f"expected {p.data.shape}")
                p.data = value.astype(self.dtype)
            elif ".bn.running_" in name:
                self.embedder.set_buffer(name, value)
            else:
                raise ConfigError(f"checkpoint has unknown entry {name!r}")

    # -- forward paths --

    def represent(self, images: np.ndarray, train: bool,
                  se_override: np.ndarray | None = None) -> Tensor:
        """Embed images and apply channel attention: (B,H,W,C) -> (B,h,w,d).

        ``se_override`` replaces the learned channel weights with a fixed
        vector (used by the attention ablation).
        """
        images = np.asarray(images, dtype=self.dtype)
        chunks = []
        for start in range(0, images.shape[0], self.batch_size):
            x = Tensor(images[start:start + self.batch_size])
            chunks.append(self.embedder.forward(x, train))
        features = chunks[0] if len(chunks) == 1 else T.concat(chunks, axis=0)
        if se_override is not None:
            b = features.data.shape[0]
            s = Tensor(np.broadcast_to(
                np.asarray(se_override, dtype=self.dtype),
                (b, self.config.descriptor_dim)).copy())
            return self.se.recalibrate(features, s)
        if self.config.se_enabled:
            recalibrated, _ = self.se.forward(features)
            return recalibrated
        return features

    def episode_logits(self, support_x: np.ndarray, support_y: np.ndarray,
                       query_x: np.ndarray, n_classes: int, train: bool = True,
                       se_override: np.ndarray | None = None) -> Tensor:
        """Class scores (n_query, n_classes) used directly as CE logits.

        Inputs are channels-last image stacks (B, H, W, C).
        """
        support_y = np.asarray(support_y)
        n_support = support_x.shape[0]
        batch = np.concatenate([support_x, query_x], axis=0)
        features = self.represent(batch, train, se_override=se_override)
        if self.config.metric == "prototype":
            return self._prototype_logits(features, support_y, n_support, n_classes)
        return self._knn_logits(features, support_y, n_support, n_classes)

    def _knn_logits(self, features: Tensor, support_y, n_support, n_classes) -> Tensor:
        b, h, w, d = features.data.shape
        m = h * w
        desc = normalize_rows_op(
            T.reshape(features, (b * m, d)), "episode descriptors")
        desc = T.reshape(desc, (b, m, d))
        query = T.reshape(desc[n_support:], ((b - n_support) * m, d))
        cols = []
        for c in range(n_classes):
            members = np.flatnonzero(support_y == c)
            if members.size == 0:
                raise ConfigError(f"episode has no support samples for class {c}")
            pool = T.reshape(desc[members], (members.size * m, d))
            if self.config.knn_k > members.size * m:
                raise ConfigError(
                    f"k={self.config.knn_k} exceeds class pool size {members.size * m}")
            cols.append(knn_class_scores(query, pool, self.config.knn_k, m))
        return T.stack_columns(cols)

    def _prototype_logits(self, features: Tensor, support_y, n_support, n_classes) -> Tensor:
        gap = T.tmean(features, axis=(1, 2))                 # (B, d)
        qgap = gap[n_support:]
        cols = []
        for c in range(n_classes):
            members = np.flatnonzero(support_y == c)
            if members.size == 0:
                raise ConfigError(f"episode has no support samples for class {c}")
            proto = T.tmean(gap[members], axis=0, keepdims=True)
            delta = T.sub(qgap, proto)
            cols.append(T.mul(T.tsum(T.mul(delta, delta), axis=1), -1.0))
        return T.stack_columns(cols)

    def predict_episode(self, support_x, support_y, query_x, n_classes: int,
                        se_override: np.ndarray | None = None) -> tuple:
        """Eval-mode classification: (predicted labels, raw scores).

        Ties resolve to the lowest class index (argmax convention).
        """
        with no_grad():
            logits = self.episode_logits(support_x, support_y, query_x, n_classes,
                                         train=False, se_override=se_override)
        scores = logits.data
        return scores.argmax(axis=1), scores

    def embed_eval_descriptors(self, images: np.ndarray,
                               se_override: np.ndarray | None = None) -> np.ndarray:
        """Eval-mode local descriptors (B, m, d) for a stack of images.

        Eval batchnorm uses running statistics, so each image's embedding is
        independent of its batch; callers may cache these across episodes.
        """
        with no_grad():
            feats = self.represent(images, train=False, se_override=se_override)
        b, h, w, d = feats.data.shape
        return feats.data.reshape(b, h * w, d)

    def predict_from_descriptors(self, support_desc: np.ndarray, support_y,
                                 query_desc: np.ndarray, n_classes: int) -> tuple:
        """Classify from precomputed descriptors; matches predict_episode.

        ``support_desc``/``query_desc`` are (B, m, d) stacks as returned by
        ``embed_eval_descriptors``.
        """
        support_y = np.asarray(support_y)
        nq, m, d = query_desc.shape
        scores = np.empty((nq, n_classes), dtype=np.float64)
        if self.config.metric == "prototype":
            qgap = query_desc.mean(axis=1)
            sgap = support_desc.mean(axis=1)
            for c in range(n_classes):
                proto = sgap[support_y == c].mean(axis=0)
                delta = qgap - proto
                scores[:, c] = -np.sum(delta * delta, axis=1)
        else:
            qn, _ = _normalize_rows(query_desc.reshape(nq * m, d))
            for c in range(n_classes):
                pool = support_desc[support_y == c].reshape(-1, d)
                if self.config.knn_k > pool.shape[0]:
                    raise ConfigError(
                        f"k={self.config.knn_k} exceeds class pool size {pool.shape[0]}")
                pn, _ = _normalize_rows(pool)
                vals, _ = _topk_unit_sims(qn, pn, self.config.knn_k)
                scores[:, c] = vals.sum(axis=1).reshape(nq, m).sum(axis=1)
        return scores.argmax(axis=1), scores

    def episode_loss(self, support_x, support_y, query_x, query_y,
                     n_classes: int, train: bool = True) -> tuple:
        """(loss Tensor, logits Tensor) for one episode."""
        logits = self.episode_logits(support_x, support_y, query_x, n_classes, train=train)
        return cross_entropy(logits, np.asarray(query_y)), logits

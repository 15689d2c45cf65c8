"""Dual-stream QA model: frame encoder, token encoder, cross-attention
fusion, two-layer classifier. Forward functions return caches that the
matching backward functions consume; parameter gradients accumulate into a
ParamStore so several forwards (original / positive / negative streams)
can share one gradient buffer.

tanh is the only nonlinearity: every layer stays smooth, which keeps
central-difference gradient audits meaningful at eps ~ 1e-5.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError, InputError
from .numkit import ParamStore, softmax, softmax_backward

PAD_ID = 0


@dataclass
class ModelConfig:
    token_vocab_size: int
    answer_set_size: int
    d: int = 64
    n_heads: int = 4
    n_video_layers: int = 2
    n_text_layers: int = 2
    n_frames: int = 8
    frame_channels: int = 1
    frame_size: int = 64
    patch_size: int = 16
    text_len: int = 16
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d % self.n_heads != 0:
            raise ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.frame_size % self.patch_size != 0:
            raise ConfigError(f"frame_size {self.frame_size} not divisible by patch_size {self.patch_size}")
        if self.n_patches > 64:
            raise ConfigError(f"{self.n_patches} patches per frame exceeds the 64-patch budget")
        if self.answer_set_size < 2:
            raise ConfigError("answer set needs at least 2 entries")
        if min(self.text_len, self.n_frames, self.token_vocab_size) < 1:
            raise ConfigError("text_len, n_frames and token_vocab_size must be >= 1")

    @property
    def n_patches(self) -> int:
        return (self.frame_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.frame_channels * self.patch_size**2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_params(cfg: ModelConfig) -> ParamStore:
    """Weights uniform(-1/sqrt(d), 1/sqrt(d)), biases zero, LN scales one.
    Creation order is fixed, so a seed pins every value."""
    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / math.sqrt(cfg.d)
    store = ParamStore()

    def weight(name: str, shape: tuple[int, ...]) -> None:
        store.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(name: str, shape: tuple[int, ...]) -> None:
        store.add(name, np.zeros(shape))

    def block(prefix: str) -> None:
        store.add(f"{prefix}.ln1.g", np.ones(cfg.d))
        zeros(f"{prefix}.ln1.b", (cfg.d,))
        for w in ("wq", "wk", "wv", "wo"):
            weight(f"{prefix}.attn.{w}", (cfg.d, cfg.d))
        store.add(f"{prefix}.ln2.g", np.ones(cfg.d))
        zeros(f"{prefix}.ln2.b", (cfg.d,))
        weight(f"{prefix}.mlp.w1", (cfg.d, cfg.mlp_ratio * cfg.d))
        zeros(f"{prefix}.mlp.b1", (cfg.mlp_ratio * cfg.d,))
        weight(f"{prefix}.mlp.w2", (cfg.mlp_ratio * cfg.d, cfg.d))
        zeros(f"{prefix}.mlp.b2", (cfg.d,))

    weight("video.patch_embed.w", (cfg.patch_dim, cfg.d))
    zeros("video.patch_embed.b", (cfg.d,))
    weight("video.pos", (cfg.n_frames, cfg.d))
    for i in range(cfg.n_video_layers):
        block(f"video.block{i}")
    weight("text.tok_embed", (cfg.token_vocab_size, cfg.d))
    weight("text.pos", (cfg.text_len, cfg.d))
    for i in range(cfg.n_text_layers):
        block(f"text.block{i}")
    for w in ("wq", "wk", "wv", "wo"):
        weight(f"fuse.attn.{w}", (cfg.d, cfg.d))
    weight("cls.w1", (cfg.d, cfg.d))
    zeros("cls.b1", (cfg.d,))
    weight("cls.w2", (cfg.d, cfg.answer_set_size))
    zeros("cls.b2", (cfg.answer_set_size,))
    return store


def param_count(cfg: ModelConfig) -> int:
    """Total scalar parameter count; pure function of the config."""
    return init_params(cfg).n_params()


# ---------------------------------------------------------------------------
# Layer primitives (forward returns a cache the backward consumes)
# ---------------------------------------------------------------------------


def _linear_bwd(d_y: np.ndarray, x: np.ndarray, w: np.ndarray, need_dx: bool = True):
    din, dout = x.shape[-1], d_y.shape[-1]
    x2 = x.reshape(-1, din)
    dy2 = d_y.reshape(-1, dout)
    dx = d_y @ w.T if need_dx else None
    return dx, x2.T @ dy2, dy2.sum(axis=0)


def _layernorm_fwd(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_bwd(d_y: np.ndarray, cache):
    xhat, inv, g = cache
    d = xhat.shape[-1]
    dg = (d_y * xhat).reshape(-1, d).sum(axis=0)
    db = d_y.reshape(-1, d).sum(axis=0)
    dxhat = d_y * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return inv * (dxhat - m1 - xhat * m2), dg, db


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def _mha_fwd(x_q: np.ndarray, x_kv: np.ndarray, store: ParamStore, prefix: str, n_heads: int):
    """Multi-head attention: queries from x_q, keys/values from x_kv."""
    p = store.params
    wq, wk, wv, wo = (p[f"{prefix}.wq"], p[f"{prefix}.wk"], p[f"{prefix}.wv"], p[f"{prefix}.wo"])
    qh = _split_heads(x_q @ wq, n_heads)
    kh = _split_heads(x_kv @ wk, n_heads)
    vh = _split_heads(x_kv @ wv, n_heads)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    attn = softmax(qh @ kh.transpose(0, 1, 3, 2) * scale, axis=-1)
    ctxh = attn @ vh
    ctx = _merge_heads(ctxh)
    out = ctx @ wo
    cache = (x_q, x_kv, qh, kh, vh, attn, ctx, scale, prefix, n_heads)
    return out, cache


def _mha_bwd(d_out: np.ndarray, cache, store: ParamStore):
    x_q, x_kv, qh, kh, vh, attn, ctx, scale, prefix, n_heads = cache
    wq, wk, wv, wo = (store.params[f"{prefix}.{w}"] for w in ("wq", "wk", "wv", "wo"))
    d_ctx, dwo, _ = _linear_bwd(d_out, ctx, wo)
    store.add_grad(f"{prefix}.wo", dwo)
    d_ctxh = _split_heads(d_ctx, n_heads)
    d_attn = d_ctxh @ vh.transpose(0, 1, 3, 2)
    d_vh = attn.transpose(0, 1, 3, 2) @ d_ctxh
    d_scores = softmax_backward(d_attn, attn, axis=-1)
    d_qh = d_scores @ kh * scale
    d_kh = d_scores.transpose(0, 1, 3, 2) @ qh * scale
    d_q, d_k, d_v = _merge_heads(d_qh), _merge_heads(d_kh), _merge_heads(d_vh)
    d_xq, dwq, _ = _linear_bwd(d_q, x_q, wq)
    store.add_grad(f"{prefix}.wq", dwq)
    d_xkv_k, dwk, _ = _linear_bwd(d_k, x_kv, wk)
    store.add_grad(f"{prefix}.wk", dwk)
    d_xkv_v, dwv, _ = _linear_bwd(d_v, x_kv, wv)
    store.add_grad(f"{prefix}.wv", dwv)
    return d_xq, d_xkv_k + d_xkv_v


def _block_fwd(x: np.ndarray, store: ParamStore, prefix: str, n_heads: int):
    p = store.params
    h1, c_ln1 = _layernorm_fwd(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    a, c_mha = _mha_fwd(h1, h1, store, f"{prefix}.attn", n_heads)
    x2 = x + a
    h2, c_ln2 = _layernorm_fwd(x2, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    u = h2 @ p[f"{prefix}.mlp.w1"] + p[f"{prefix}.mlp.b1"]
    t = np.tanh(u)
    out = x2 + (t @ p[f"{prefix}.mlp.w2"] + p[f"{prefix}.mlp.b2"])
    return out, (c_ln1, c_mha, c_ln2, h2, t, prefix)


def _block_bwd(d_out: np.ndarray, cache, store: ParamStore, n_heads: int):
    c_ln1, c_mha, c_ln2, h2, t, prefix = cache
    p = store.params
    d_t, dw2, db2 = _linear_bwd(d_out, t, p[f"{prefix}.mlp.w2"])
    store.add_grad(f"{prefix}.mlp.w2", dw2)
    store.add_grad(f"{prefix}.mlp.b2", db2)
    d_u = d_t * (1.0 - t * t)
    d_h2, dw1, db1 = _linear_bwd(d_u, h2, p[f"{prefix}.mlp.w1"])
    store.add_grad(f"{prefix}.mlp.w1", dw1)
    store.add_grad(f"{prefix}.mlp.b1", db1)
    d_x2_ln, dg2, db2_ln = _layernorm_bwd(d_h2, c_ln2)
    store.add_grad(f"{prefix}.ln2.g", dg2)
    store.add_grad(f"{prefix}.ln2.b", db2_ln)
    d_x2 = d_out + d_x2_ln
    d_xq, d_xkv = _mha_bwd(d_x2, c_mha, store)
    d_x_ln, dg1, db1_ln = _layernorm_bwd(d_xq + d_xkv, c_ln1)
    store.add_grad(f"{prefix}.ln1.g", dg1)
    store.add_grad(f"{prefix}.ln1.b", db1_ln)
    return d_x2 + d_x_ln


# ---------------------------------------------------------------------------
# Encoders, fusion, classifier
# ---------------------------------------------------------------------------


def _patchify(frames: np.ndarray, ps: int) -> np.ndarray:
    b, n, c, h, w = frames.shape
    x = frames.reshape(b, n, c, h // ps, ps, w // ps, ps)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6)
    return x.reshape(b, n, (h // ps) * (w // ps), c * ps * ps)


def encode_video_batch(frames: np.ndarray, store: ParamStore, cfg: ModelConfig):
    """(B, N, C, H, W) frames -> (B, N, d) per-frame features."""
    frames = np.asarray(frames, dtype=np.float64)
    expect = (cfg.n_frames, cfg.frame_channels, cfg.frame_size, cfg.frame_size)
    if frames.ndim != 5 or frames.shape[1:] != expect:
        raise DimensionError(f"video batch shape {frames.shape}, expected (B,) + {expect}")
    p = store.params
    patches = _patchify(frames, cfg.patch_size)
    emb = patches @ p["video.patch_embed.w"] + p["video.patch_embed.b"]
    frame_feat = emb.mean(axis=2)
    x = frame_feat + p["video.pos"]
    block_caches = []
    for i in range(cfg.n_video_layers):
        x, c = _block_fwd(x, store, f"video.block{i}", cfg.n_heads)
        block_caches.append(c)
    return x, (patches, block_caches)


def encode_video_backward(d_feats: np.ndarray, cache, store: ParamStore, cfg: ModelConfig) -> None:
    patches, block_caches = cache
    d_x = d_feats
    for c in reversed(block_caches):
        d_x = _block_bwd(d_x, c, store, cfg.n_heads)
    store.add_grad("video.pos", d_x.sum(axis=0))
    d_emb = np.broadcast_to(d_x[:, :, None, :] / cfg.n_patches, patches.shape[:3] + (cfg.d,))
    _, dw, db = _linear_bwd(d_emb, patches, store.params["video.patch_embed.w"], need_dx=False)
    store.add_grad("video.patch_embed.w", dw)
    store.add_grad("video.patch_embed.b", db)


def encode_text_batch(ids: np.ndarray, store: ParamStore, cfg: ModelConfig):
    """(B, l) int token ids -> (B, l, d) features. Ids must be in-vocab."""
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[1] != cfg.text_len:
        raise DimensionError(f"token batch shape {ids.shape}, expected (B, {cfg.text_len})")
    if ids.min() < 0 or ids.max() >= cfg.token_vocab_size:
        raise InputError(
            f"token id out of range [0, {cfg.token_vocab_size}): {int(ids.min())}..{int(ids.max())}"
        )
    p = store.params
    x = p["text.tok_embed"][ids] + p["text.pos"]
    block_caches = []
    for i in range(cfg.n_text_layers):
        x, c = _block_fwd(x, store, f"text.block{i}", cfg.n_heads)
        block_caches.append(c)
    return x, (ids, block_caches)


def encode_text_backward(d_feats: np.ndarray, cache, store: ParamStore, cfg: ModelConfig) -> None:
    ids, block_caches = cache
    d_x = d_feats
    for c in reversed(block_caches):
        d_x = _block_bwd(d_x, c, store, cfg.n_heads)
    store.add_grad("text.pos", d_x.sum(axis=0))
    d_embed = np.zeros_like(store.params["text.tok_embed"])
    np.add.at(d_embed, ids.reshape(-1), d_x.reshape(-1, cfg.d))
    store.add_grad("text.tok_embed", d_embed)


def fuse_batch(v_feats: np.ndarray, q_feats: np.ndarray, store: ParamStore, cfg: ModelConfig):
    """Text rows query video rows; residual add, then mean-pool to (B, d)."""
    if v_feats.shape[-1] != q_feats.shape[-1]:
        raise DimensionError(f"feature widths differ: video {v_feats.shape} vs text {q_feats.shape}")
    attn_out, c_mha = _mha_fwd(q_feats, v_feats, store, "fuse.attn", cfg.n_heads)
    rows = q_feats + attn_out
    fused = rows.mean(axis=1)
    return fused, (c_mha, q_feats.shape[1], attn_out)


def fuse_backward(d_fused: np.ndarray, cache, store: ParamStore):
    c_mha, n_rows, _ = cache
    d_rows = np.broadcast_to(d_fused[:, None, :] / n_rows, (d_fused.shape[0], n_rows, d_fused.shape[1]))
    d_xq, d_xkv = _mha_bwd(d_rows, c_mha, store)
    return d_xkv, d_rows + d_xq  # (d_v_feats, d_q_feats)


def classify_batch(fused: np.ndarray, store: ParamStore, cfg: ModelConfig):
    """Linear -> tanh -> linear -> softmax over the answer set."""
    p = store.params
    u = fused @ p["cls.w1"] + p["cls.b1"]
    t = np.tanh(u)
    logits = t @ p["cls.w2"] + p["cls.b2"]
    probs = softmax(logits, axis=-1)
    return probs, (fused, t, probs)


def classify_backward(d_probs: np.ndarray, cache, store: ParamStore):
    fused, t, probs = cache
    p = store.params
    d_logits = softmax_backward(d_probs, probs, axis=-1)
    d_t, dw2, db2 = _linear_bwd(d_logits, t, p["cls.w2"])
    store.add_grad("cls.w2", dw2)
    store.add_grad("cls.b2", db2)
    d_u = d_t * (1.0 - t * t)
    d_fused, dw1, db1 = _linear_bwd(d_u, fused, p["cls.w1"])
    store.add_grad("cls.w1", dw1)
    store.add_grad("cls.b1", db1)
    return d_fused


def forward_batch(frames: np.ndarray, ids: np.ndarray, store: ParamStore, cfg: ModelConfig):
    """Full model: (B, K) answer distributions plus the backward cache."""
    v_feats, c_v = encode_video_batch(frames, store, cfg)
    q_feats, c_t = encode_text_batch(ids, store, cfg)
    fused, c_f = fuse_batch(v_feats, q_feats, store, cfg)
    probs, c_c = classify_batch(fused, store, cfg)
    return probs, (c_v, c_t, c_f, c_c)


def backward_batch(d_probs: np.ndarray, cache, store: ParamStore, cfg: ModelConfig) -> None:
    """Accumulate parameter gradients for d(loss)/d(probs)."""
    c_v, c_t, c_f, c_c = cache
    d_fused = classify_backward(d_probs, c_c, store)
    d_v_feats, d_q_feats = fuse_backward(d_fused, c_f, store)
    encode_video_backward(d_v_feats, c_v, store, cfg)
    encode_text_backward(d_q_feats, c_t, store, cfg)


# Single-sample views of the same pipeline.


def encode_video(frames: np.ndarray, store: ParamStore, cfg: ModelConfig) -> np.ndarray:
    return encode_video_batch(np.asarray(frames)[None], store, cfg)[0][0]


def encode_text(ids: np.ndarray, store: ParamStore, cfg: ModelConfig) -> np.ndarray:
    return encode_text_batch(np.asarray(ids)[None], store, cfg)[0][0]


def fuse(v_feats: np.ndarray, q_feats: np.ndarray, store: ParamStore, cfg: ModelConfig) -> np.ndarray:
    return fuse_batch(np.asarray(v_feats)[None], np.asarray(q_feats)[None], store, cfg)[0][0]


def classify(fused: np.ndarray, store: ParamStore, cfg: ModelConfig) -> np.ndarray:
    return classify_batch(np.asarray(fused)[None], store, cfg)[0][0]


def forward(frames: np.ndarray, ids: np.ndarray, store: ParamStore, cfg: ModelConfig) -> np.ndarray:
    return forward_batch(np.asarray(frames)[None], np.asarray(ids)[None], store, cfg)[0][0]

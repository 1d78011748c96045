"""Toy encoder-only patch transformer for univariate forecasting.

A window is split into non-overlapping patches of P steps: right-aligned
context tokens (the first one edge-pre-padded when C is not a multiple of
P) followed by horizon placeholder tokens whose embeddings are replaced by
a learnable mask token. Pre-norm attention blocks with rotary positions
encode the sequence, and a linear head maps horizon tokens back to patch
values. Pretraining reconstructs the masked horizon.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import (
    Tensor,
    add,
    concat,
    gelu,
    layer_norm,
    masked_softmax,
    matmul,
    mul,
    narrow,
    replace_token_span,
    reshape,
    sub,
    transpose,
    tsum,
)


@dataclass(frozen=True)
class BackboneConfig:
    n_layers: int
    d_model: int
    n_heads: int
    patch: int
    ffn_mult: int = 4
    eps: float = 1e-5
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.patch < 1:
            raise ValueError("patch size must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise ValueError("head width must be even for rotary pairs")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {"n_layers": self.n_layers, "d_model": self.d_model,
                "n_heads": self.n_heads, "patch": self.patch,
                "ffn_mult": self.ffn_mult, "eps": self.eps,
                "rope_base": self.rope_base}


@dataclass
class PatchSequence:
    """Tokenized window: [.., N, P] values plus pad bookkeeping."""

    tokens: np.ndarray
    n_context_tokens: int
    n_horizon_tokens: int
    context_pre_pad: int
    horizon_post_pad: int
    horizon_len: int

    @property
    def n_tokens(self) -> int:
        return self.n_context_tokens + self.n_horizon_tokens


def patchify(context: np.ndarray, horizon_len: int, patch: int,
             pad_value: float | None = None) -> PatchSequence:
    """Right-align the context into ceil(C/P) tokens; horizon tokens are
    placeholders (their embeddings get mask-substituted).

    ``pad_value`` defaults to edge replication, which keeps local means
    intact for downstream average pooling.
    """
    if patch < 1:
        raise ValueError("patch size must be >= 1")
    context = np.asarray(context, dtype=np.float64)
    c = context.shape[-1]
    if c < 1 or horizon_len < 1:
        raise ValueError("context and horizon must be nonempty")
    pre = (-c) % patch
    if pre:
        fill = context[..., :1] if pad_value is None else np.full_like(context[..., :1], pad_value)
        context = np.concatenate([np.repeat(fill, pre, axis=-1), context], axis=-1)
    n_ctx = context.shape[-1] // patch
    ctx_tokens = context.reshape(*context.shape[:-1], n_ctx, patch)
    n_hor = -(-horizon_len // patch)
    hor_tokens = np.zeros((*context.shape[:-1], n_hor, patch))
    tokens = np.concatenate([ctx_tokens, hor_tokens], axis=-2)
    return PatchSequence(tokens, n_ctx, n_hor, pre,
                         n_hor * patch - horizon_len, horizon_len)


class ModelState:
    """Named parameter registry split into trainable and frozen sets."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.params[name]
        except KeyError:
            raise KeyError(f"model has no parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def set_trainable(self, names) -> None:
        """Freeze everything except ``names``; flags follow the partition."""
        names = set(names)
        unknown = names - set(self.params)
        if unknown:
            raise KeyError(f"unknown parameter names: {sorted(unknown)}")
        self.frozen = set(self.params) - names
        for n, p in self.params.items():
            p.requires_grad = n not in self.frozen

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if n not in self.frozen]

    def trainable_items(self):
        return [(n, p) for n, p in self.params.items() if n not in self.frozen]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def checksums(self, names=None) -> dict[str, str]:
        names = self.params if names is None else names
        return {n: hashlib.sha256(self.params[n].data.tobytes()).hexdigest()
                for n in names}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, value in snap.items():
            self.params[n].data = value.copy()


class RopeCache:
    """Sine/cosine tables per position for one head width."""

    def __init__(self, head_dim: int, base: float = 10000.0):
        if head_dim % 2 != 0:
            raise ValueError("rotary head width must be even")
        self.head_dim = head_dim
        self.base = base
        half = head_dim // 2
        self.inv_freq = base ** (-np.arange(half) * 2.0 / head_dim)
        self._cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def tables(self, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        positions = np.asarray(positions, dtype=np.float64)
        key = positions.tobytes()
        if key not in self._cache:
            ang = positions[:, None] * self.inv_freq[None, :]
            self._cache[key] = (np.cos(ang), np.sin(ang))
        return self._cache[key]


def apply_rope(t: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate [.., N, head_dim] by per-position angles (half-split pairs)."""
    half = t.shape[-1] // 2
    x1 = narrow(t, -1, 0, half)
    x2 = narrow(t, -1, half, half)
    c, s = Tensor(cos), Tensor(sin)
    return concat([sub(mul(x1, c), mul(x2, s)),
                   add(mul(x2, c), mul(x1, s))], axis=-1)


def full_mask(n: int) -> np.ndarray:
    return np.ones((n, n), dtype=bool)


class Backbone:
    PARAM_STD = 0.02

    def __init__(self, cfg: BackboneConfig, state: ModelState | None = None):
        self.cfg = cfg
        self.state = state if state is not None else ModelState()
        self.rope = RopeCache(cfg.head_dim, cfg.rope_base)

    # -- parameters ---------------------------------------------------------

    def init_state(self, rng: Rng) -> ModelState:
        cfg = self.cfg
        st = self.state
        d, p = cfg.d_model, cfg.patch
        std = self.PARAM_STD
        st.add("in_proj.w", rng.normal((p, d), std))
        st.add("in_proj.b", np.zeros(d))
        st.add("mask_token", rng.normal((d,), std))
        for l in range(cfg.n_layers):
            pre = f"layers.{l}."
            st.add(pre + "norm1.g", np.ones(d))
            st.add(pre + "norm1.b", np.zeros(d))
            for proj in ("wq", "wk", "wv", "wo"):
                st.add(pre + proj, rng.normal((d, d), std))
            st.add(pre + "norm2.g", np.ones(d))
            st.add(pre + "norm2.b", np.zeros(d))
            st.add(pre + "ffn.w1", rng.normal((d, cfg.ffn_mult * d), std))
            st.add(pre + "ffn.b1", np.zeros(cfg.ffn_mult * d))
            st.add(pre + "ffn.w2", rng.normal((cfg.ffn_mult * d, d), std))
            st.add(pre + "ffn.b2", np.zeros(d))
        st.add("out_proj.w", rng.normal((d, p), std))
        st.add("out_proj.b", np.zeros(p))
        return st

    @staticmethod
    def backbone_param_names(cfg: BackboneConfig) -> list[str]:
        return list(backbone_param_shapes(cfg))

    # -- forward pieces -----------------------------------------------------

    def in_project(self, tokens) -> Tensor:
        t = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
        if t.shape[-1] != self.cfg.patch:
            raise ValueError(f"in_project: token width {t.shape[-1]} != patch {self.cfg.patch}")
        return add(matmul(t, self.state["in_proj.w"]), self.state["in_proj.b"])

    def apply_mask_token(self, h0: Tensor, hor_start: int, hor_stop: int) -> Tensor:
        return replace_token_span(h0, hor_start, hor_stop, self.state["mask_token"])

    def _split_heads(self, t: Tensor) -> Tensor:
        b = t.shape[:-2]
        n = t.shape[-2]
        t = reshape(t, (*b, n, self.cfg.n_heads, self.cfg.head_dim))
        axes = tuple(range(len(b))) + (len(b) + 1, len(b), len(b) + 2)
        return transpose(t, axes)

    def _merge_heads(self, t: Tensor) -> Tensor:
        b = t.shape[:-3]
        n = t.shape[-2]
        axes = tuple(range(len(b))) + (len(b) + 1, len(b), len(b) + 2)
        t = transpose(t, axes)
        return reshape(t, (*b, n, self.cfg.d_model))

    def default_qkv(self, x: Tensor, layer: int):
        pre = f"layers.{layer}."
        return (matmul(x, self.state[pre + "wq"]),
                matmul(x, self.state[pre + "wk"]),
                matmul(x, self.state[pre + "wv"]))

    def attn_sublayer(self, h: Tensor, layer: int, mask: np.ndarray,
                      positions: np.ndarray, qkv_fn=None, capture=None) -> Tensor:
        """Pre-norm rotary multi-head attention with residual add."""
        cfg = self.cfg
        pre = f"layers.{layer}."
        x = layer_norm(h, self.state[pre + "norm1.g"], self.state[pre + "norm1.b"], cfg.eps)
        if len(positions) != h.shape[-2]:
            raise ValueError(f"positions length {len(positions)} != {h.shape[-2]} tokens")
        q, k, v = (qkv_fn or self.default_qkv)(x, layer)
        q, k, v = self._split_heads(q), self._split_heads(k), self._split_heads(v)
        cos, sin = self.rope.tables(positions)
        q = apply_rope(q, cos, sin)
        k = apply_rope(k, cos, sin)
        nd = len(k.shape)
        scores = mul(matmul(q, transpose(k, tuple(range(nd - 2)) + (nd - 1, nd - 2))),
                     1.0 / np.sqrt(cfg.head_dim))
        probs = masked_softmax(scores, mask)
        if capture is not None:
            capture.append((layer, probs.data.copy()))
        ctx = self._merge_heads(matmul(probs, v))
        return add(h, matmul(ctx, self.state[pre + "wo"]))

    def ffn_sublayer(self, h: Tensor, layer: int) -> Tensor:
        cfg = self.cfg
        pre = f"layers.{layer}."
        x = layer_norm(h, self.state[pre + "norm2.g"], self.state[pre + "norm2.b"], cfg.eps)
        x = gelu(add(matmul(x, self.state[pre + "ffn.w1"]), self.state[pre + "ffn.b1"]))
        return add(h, add(matmul(x, self.state[pre + "ffn.w2"]), self.state[pre + "ffn.b2"]))

    def attn_block(self, h: Tensor, layer: int, mask: np.ndarray,
                   positions: np.ndarray, qkv_fn=None, capture=None) -> Tensor:
        h = self.attn_sublayer(h, layer, mask, positions, qkv_fn, capture)
        return self.ffn_sublayer(h, layer)

    def encode(self, h: Tensor, mask: np.ndarray, positions: np.ndarray,
               capture=None, stop_layer: int | None = None) -> Tensor:
        last = self.cfg.n_layers if stop_layer is None else stop_layer
        for l in range(last):
            h = self.attn_block(h, l, mask, positions, capture=capture)
        return h

    def out_project(self, h_final: Tensor, hor_start: int, n_hor: int,
                    horizon_len: int) -> Tensor:
        """Map horizon tokens d -> P, drop the trailing pad steps."""
        if n_hor < 1:
            raise ValueError("out_project: horizon span is empty")
        rows = narrow(h_final, -2, hor_start, n_hor)
        y = add(matmul(rows, self.state["out_proj.w"]), self.state["out_proj.b"])
        flat = reshape(y, (*y.shape[:-2], n_hor * self.cfg.patch))
        return narrow(flat, -1, 0, horizon_len)

    # -- whole-window paths --------------------------------------------------

    def forward_window(self, context: np.ndarray, horizon_len: int,
                       capture=None) -> Tensor:
        """Zero-shot / pretraining forward: context [.., C] -> forecast [.., H]."""
        seq = patchify(context, horizon_len, self.cfg.patch)
        h = self.in_project(seq.tokens)
        h = self.apply_mask_token(h, seq.n_context_tokens, seq.n_tokens)
        positions = np.arange(seq.n_tokens, dtype=np.float64)
        h = self.encode(h, full_mask(seq.n_tokens), positions, capture=capture)
        return self.out_project(h, seq.n_context_tokens, seq.n_horizon_tokens,
                                horizon_len)

    def encode_context(self, context: np.ndarray, stop_layer: int | None = None) -> Tensor:
        """Context-only embeddings (no horizon tokens), for diagnostics."""
        patch = self.cfg.patch
        context = np.asarray(context, dtype=np.float64)
        pre = (-context.shape[-1]) % patch
        if pre:
            fill = np.repeat(context[..., :1], pre, axis=-1)
            context = np.concatenate([fill, context], axis=-1)
        n_ctx = context.shape[-1] // patch
        tokens = context.reshape(*context.shape[:-1], n_ctx, patch)
        h = self.in_project(tokens)
        positions = np.arange(n_ctx, dtype=np.float64)
        return self.encode(h, full_mask(n_ctx), positions, stop_layer=stop_layer)


def backbone_param_shapes(cfg: BackboneConfig) -> dict[str, tuple[int, ...]]:
    d, p, f = cfg.d_model, cfg.patch, cfg.ffn_mult
    shapes = {"in_proj.w": (p, d), "in_proj.b": (d,), "mask_token": (d,)}
    for l in range(cfg.n_layers):
        pre = f"layers.{l}."
        shapes.update({pre + "norm1.g": (d,), pre + "norm1.b": (d,),
                       pre + "wq": (d, d), pre + "wk": (d, d),
                       pre + "wv": (d, d), pre + "wo": (d, d),
                       pre + "norm2.g": (d,), pre + "norm2.b": (d,),
                       pre + "ffn.w1": (d, f * d), pre + "ffn.b1": (f * d,),
                       pre + "ffn.w2": (f * d, d), pre + "ffn.b2": (d,)})
    shapes.update({"out_proj.w": (d, p), "out_proj.b": (p,)})
    return shapes


def backbone_from_arrays(cfg: BackboneConfig, arrays: dict[str, np.ndarray]) -> Backbone:
    """Rebuild a backbone from named arrays, validating against the config."""
    shapes = backbone_param_shapes(cfg)
    missing = [n for n in shapes if n not in arrays]
    if missing:
        raise ValueError(f"parameters missing for this backbone config: {missing[:4]}"
                         f"{'...' if len(missing) > 4 else ''}")
    bb = Backbone(cfg)
    for name, shape in shapes.items():
        value = np.asarray(arrays[name])
        if value.shape != shape:
            raise ValueError(f"parameter {name!r} has shape {value.shape}, "
                             f"config expects {shape}")
        bb.state.add(name, value.copy())
    return bb


def reconstruction_loss(pred: Tensor, target: np.ndarray,
                        valid: np.ndarray | None = None) -> Tensor:
    """MSE over non-padded steps; ``valid`` masks the last axis."""
    target_t = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target_t.shape:
        raise ValueError(f"loss: shape mismatch {pred.shape} vs {target_t.shape}")
    diff = sub(pred, target_t)
    sq = mul(diff, diff)
    if valid is None:
        return tsum(mul(sq, 1.0 / sq.size))
    valid = np.asarray(valid, dtype=bool)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("loss: every step is padding")
    weight = valid.astype(np.float64)
    count = sq.size // valid.size * n_valid
    return tsum(mul(mul(sq, Tensor(weight)), 1.0 / count))

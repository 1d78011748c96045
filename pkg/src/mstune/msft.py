"""Multi-scale finetuning on top of a frozen backbone.

The wrapper downsamples each sample into K+1 scales, tokenizes every scale
at its own resolution with the frozen input projection plus a per-scale
linear adapter, and encodes the concatenated sequence with in-scale masked
attention (per-scale low-rank deltas on Q/K/V) followed by dual-direction
cross-scale aggregators. Each scale predicts its own horizon; losses and
upsampled forecasts are combined with softmax-learned weights.

All new parameters start as exact no-ops (identity adapters, zero low-rank
deltas, zero aggregators), so the initial model reproduces the frozen
backbone on every scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import Backbone, patchify, reconstruction_loss
from .multiscale import (
    AlignmentMap,
    MultiScaleSet,
    ScaleIndexMap,
    ScaleSpec,
    build_alignment,
    build_multiscale_set,
    build_scale_index_map,
    token_avgpool,
    token_repeat,
    upsample_prediction,
)
from .rng import Rng
from .tensor import Tensor, add, concat, matmul, mul, narrow, softmax, transpose, tsum

ADAPTER_MODES = ("scale", "shared", "none")
LORA_MODES = ("scale", "shared", "none")
MIXING_MODES = ("weighted", "average", "none")


@dataclass(frozen=True)
class MsftConfig:
    k_scales: int
    factor: int = 2
    adapters: str = "scale"
    lora: str = "scale"
    lora_rank: int | None = None
    lora_alpha: float = 32.0
    in_scale_mask: bool = True
    c2f: bool = True
    f2c: bool = True
    mixing: str = "weighted"
    aligned_positions: bool = False
    train_mask_token: bool = False

    def __post_init__(self):
        if self.k_scales < 0:
            raise ValueError("k_scales must be >= 0")
        if self.adapters not in ADAPTER_MODES:
            raise ValueError(f"adapters must be one of {ADAPTER_MODES}")
        if self.lora not in LORA_MODES:
            raise ValueError(f"lora must be one of {LORA_MODES}")
        if self.mixing not in MIXING_MODES:
            raise ValueError(f"mixing must be one of {MIXING_MODES}")

    @property
    def scale_spec(self) -> ScaleSpec:
        return ScaleSpec(self.k_scales, self.factor)


def msft_config_to_flags(cfg: MsftConfig) -> dict[str, str]:
    return {
        "k": str(cfg.k_scales), "s": str(cfg.factor),
        "adapters": cfg.adapters, "lora": cfg.lora,
        "lora_rank": "" if cfg.lora_rank is None else str(cfg.lora_rank),
        "lora_alpha": repr(cfg.lora_alpha),
        "in_scale_mask": str(cfg.in_scale_mask).lower(),
        "c2f": str(cfg.c2f).lower(), "f2c": str(cfg.f2c).lower(),
        "mixing": cfg.mixing,
        "aligned_positions": str(cfg.aligned_positions).lower(),
        "train_mask_token": str(cfg.train_mask_token).lower(),
    }


def msft_config_from_flags(flags: dict[str, str]) -> MsftConfig:
    def boolean(key):
        return flags[key] == "true"

    return MsftConfig(
        k_scales=int(flags["k"]), factor=int(flags["s"]),
        adapters=flags["adapters"], lora=flags["lora"],
        lora_rank=None if flags["lora_rank"] == "" else int(flags["lora_rank"]),
        lora_alpha=float(flags["lora_alpha"]),
        in_scale_mask=boolean("in_scale_mask"),
        c2f=boolean("c2f"), f2c=boolean("f2c"), mixing=flags["mixing"],
        aligned_positions=boolean("aligned_positions"),
        train_mask_token=boolean("train_mask_token"),
    )


def resolve_lora_rank(cfg: MsftConfig, d_model: int) -> int:
    """Baseline rank 16, dropped to 4 for toy widths; always <= d_model."""
    if cfg.lora_rank is not None:
        return min(cfg.lora_rank, d_model)
    if d_model <= 64:
        return min(4, d_model)
    return min(16, d_model)


def build_in_scale_mask(index_map: ScaleIndexMap) -> np.ndarray:
    """Block-diagonal allow matrix: attend only within the same scale."""
    ids = index_map.scale_ids()
    return ids[:, None] == ids[None, :]


def scale_positions(index_map: ScaleIndexMap, factor: int,
                    aligned: bool = False) -> np.ndarray:
    """Rotary positions restart at 0 inside each scale.

    The aligned variant projects every scale onto the original-resolution
    index grid (scale-i positions multiplied by factor**i) so co-temporal
    coarse/fine tokens share a rotation; scale 0 is unchanged.
    """
    out = np.empty(index_map.n_total, dtype=np.float64)
    for i, sp in enumerate(index_map.spans):
        local = np.arange(sp.n_tokens, dtype=np.float64)
        out[sp.start:sp.stop] = local * float(factor**i) if aligned else local
    return out


@dataclass
class ForwardPlan:
    """Static per-(C, H) structure shared by every batch."""

    context_len: int
    horizon_len: int
    context_lens: list[int]
    horizon_lens: list[int]
    index_map: ScaleIndexMap
    align: AlignmentMap
    mask: np.ndarray
    positions: np.ndarray
    horizon_valid: list[np.ndarray]


@dataclass
class ForecastBundle:
    """Per-scale forecasts, mixing weights, and the mixed original-scale one."""

    per_scale: list[np.ndarray]
    weights: np.ndarray
    mixed: np.ndarray


class MsftModel:
    """Finetuning wrapper; shares its parameter registry with the backbone."""

    def __init__(self, backbone: Backbone, cfg: MsftConfig):
        self.backbone = backbone
        self.cfg = cfg
        self.state = backbone.state
        self.rank = resolve_lora_rank(cfg, backbone.cfg.d_model)
        self._plans: dict[tuple[int, int], ForwardPlan] = {}

    # -- parameters -----------------------------------------------------------

    def _adapter_tags(self):
        if self.cfg.adapters == "none":
            return []
        if self.cfg.adapters == "shared":
            return ["shared"]
        return [str(i) for i in range(self.cfg.k_scales + 1)]

    def _lora_tags(self):
        if self.cfg.lora == "none":
            return []
        if self.cfg.lora == "shared":
            return ["shared"]
        return [str(i) for i in range(self.cfg.k_scales + 1)]

    def init_msft_params(self, rng: Rng) -> None:
        """Register adapters, low-rank deltas, aggregators, and mixing logits.

        Everything initializes to an exact no-op; low-rank A factors are
        small random, B factors zero.
        """
        d = self.backbone.cfg.d_model
        st = self.state
        for tag in self._adapter_tags():
            st.add(f"adapter.{tag}.w", np.eye(d))
            st.add(f"adapter.{tag}.b", np.zeros(d))
        r = self.rank
        for tag in self._lora_tags():
            for l in range(self.backbone.cfg.n_layers):
                for proj in ("q", "k", "v"):
                    st.add(f"lora.{tag}.{l}.{proj}.a", rng.normal((r, d), 0.02))
                    st.add(f"lora.{tag}.{l}.{proj}.b", np.zeros((d, r)))
        if self.cfg.c2f:
            for l in range(self.backbone.cfg.n_layers):
                for i in range(1, self.cfg.k_scales + 1):
                    st.add(f"agg.{l}.c2f.{i}.w", np.zeros((d, d)))
                    st.add(f"agg.{l}.c2f.{i}.b", np.zeros(d))
        if self.cfg.f2c:
            for l in range(self.backbone.cfg.n_layers):
                for i in range(self.cfg.k_scales):
                    st.add(f"agg.{l}.f2c.{i}.w", np.zeros((d, d)))
                    st.add(f"agg.{l}.f2c.{i}.b", np.zeros(d))
        if self.cfg.mixing == "weighted":
            st.add("mix.theta", np.zeros(self.cfg.k_scales + 1))

    def trainable_names(self) -> list[str]:
        """The finetune partition: adapters, low-rank deltas, aggregators,
        mixing logits, the norm affines, and the output head."""
        names = [n for n in self.state.names()
                 if n.startswith(("adapter.", "lora.", "agg.", "mix."))]
        for l in range(self.backbone.cfg.n_layers):
            names += [f"layers.{l}.norm1.g", f"layers.{l}.norm1.b",
                      f"layers.{l}.norm2.g", f"layers.{l}.norm2.b"]
        names += ["out_proj.w", "out_proj.b"]
        if self.cfg.train_mask_token:
            names.append("mask_token")
        return names

    # -- plan -----------------------------------------------------------------

    def plan(self, context_len: int, horizon_len: int) -> ForwardPlan:
        key = (context_len, horizon_len)
        if key in self._plans:
            return self._plans[key]
        probe = build_multiscale_set(np.zeros(context_len), None, horizon_len,
                                     self.cfg.scale_spec)
        patch = self.backbone.cfg.patch
        counts = []
        for c_i, h_i in zip(probe.context_lens, probe.horizon_lens):
            counts.append((-(-c_i // patch), -(-h_i // patch)))
        index_map = build_scale_index_map(counts)
        align = build_alignment(probe.context_lens, probe.horizon_lens,
                                patch, self.cfg.factor)
        if self.cfg.in_scale_mask:
            mask = build_in_scale_mask(index_map)
        else:
            mask = np.ones((index_map.n_total, index_map.n_total), dtype=bool)
        positions = scale_positions(index_map, self.cfg.factor,
                                    self.cfg.aligned_positions)
        plan = ForwardPlan(context_len, horizon_len, probe.context_lens,
                           probe.horizon_lens, index_map, align, mask,
                           positions, probe.horizon_valid)
        self._plans[key] = plan
        return plan

    # -- forward pieces -------------------------------------------------------

    def _adapter(self, h: Tensor, scale: int) -> Tensor:
        if self.cfg.adapters == "none":
            return h
        tag = "shared" if self.cfg.adapters == "shared" else str(scale)
        return add(matmul(h, self.state[f"adapter.{tag}.w"]),
                   self.state[f"adapter.{tag}.b"])

    def embed(self, ms: MultiScaleSet, plan: ForwardPlan) -> Tensor:
        """Frozen projection per scale, mask substitution, then scale adapter."""
        bb = self.backbone
        parts = []
        for i, span in enumerate(plan.index_map.spans):
            seq = patchify(ms.contexts[i], plan.horizon_lens[i], bb.cfg.patch)
            if (seq.n_context_tokens, seq.n_horizon_tokens) != (span.n_ctx, span.n_hor):
                raise ValueError(f"scale {i}: token counts disagree with plan")
            h = bb.in_project(seq.tokens)
            h = bb.apply_mask_token(h, seq.n_context_tokens, seq.n_tokens)
            parts.append(self._adapter(h, i))
        return concat(parts, axis=-2)

    def _lora_qkv(self, x: Tensor, layer: int, plan: ForwardPlan):
        """Per-scale Q/K/V with frozen-plus-low-rank effective weights."""
        bb = self.backbone
        if self.cfg.lora == "none":
            return bb.default_qkv(x, layer)
        scaling = self.cfg.lora_alpha / self.rank
        outs = {"q": [], "k": [], "v": []}
        for i, span in enumerate(plan.index_map.spans):
            x_i = narrow(x, -2, span.start, span.n_tokens)
            tag = "shared" if self.cfg.lora == "shared" else str(i)
            for proj, w_name in (("q", "wq"), ("k", "wk"), ("v", "wv")):
                base = matmul(x_i, self.state[f"layers.{layer}.{w_name}"])
                a = self.state[f"lora.{tag}.{layer}.{proj}.a"]
                b = self.state[f"lora.{tag}.{layer}.{proj}.b"]
                delta = matmul(matmul(x_i, transpose(a, (1, 0))), transpose(b, (1, 0)))
                outs[proj].append(add(base, mul(delta, scaling)))
        return (concat(outs["q"], axis=-2), concat(outs["k"], axis=-2),
                concat(outs["v"], axis=-2))

    def attention(self, h: Tensor, layer: int, plan: ForwardPlan,
                  capture=None) -> Tensor:
        """In-scale masked attention with the frozen output projection."""
        return self.backbone.attn_sublayer(
            h, layer, plan.mask, plan.positions,
            qkv_fn=lambda x, l: self._lora_qkv(x, l, plan), capture=capture)

    def _phi(self, h: Tensor, layer: int, direction: str, scale: int) -> Tensor:
        w = self.state[f"agg.{layer}.{direction}.{scale}.w"]
        b = self.state[f"agg.{layer}.{direction}.{scale}.b"]
        return add(matmul(h, w), b)

    def cross_scale_aggregate(self, h: Tensor, layer: int, plan: ForwardPlan) -> Tensor:
        """Dual-branch fusion; each branch starts from the attention output
        and runs iteratively on its own progressively-updated state, then the
        branches are averaged."""
        if not (self.cfg.c2f or self.cfg.f2c):
            return h
        k = self.cfg.k_scales
        spans = plan.index_map.spans
        slices = [narrow(h, -2, sp.start, sp.n_tokens) for sp in spans]
        c2f = list(slices)
        if self.cfg.c2f:
            for i in range(k, 0, -1):
                proj = self._phi(c2f[i], layer, "c2f", i)
                c2f[i - 1] = add(c2f[i - 1], token_repeat(proj, plan.align.pairs[i - 1]))
        f2c = list(slices)
        if self.cfg.f2c:
            for i in range(k):
                proj = self._phi(f2c[i], layer, "f2c", i)
                f2c[i + 1] = add(f2c[i + 1], token_avgpool(proj, plan.align.pairs[i]))
        merged = [mul(add(a, b), 0.5) for a, b in zip(c2f, f2c)]
        return concat(merged, axis=-2)

    # -- whole pipeline -------------------------------------------------------

    def forward_from_set(self, ms: MultiScaleSet, plan: ForwardPlan,
                         capture=None) -> list[Tensor]:
        h = self.embed(ms, plan)
        for l in range(self.backbone.cfg.n_layers):
            h = self.attention(h, l, plan, capture=capture)
            h = self.cross_scale_aggregate(h, l, plan)
            h = self.backbone.ffn_sublayer(h, l)
        preds = []
        for i, span in enumerate(plan.index_map.spans):
            preds.append(self.backbone.out_project(
                h, span.hor_start, span.n_hor, plan.horizon_lens[i]))
        return preds

    def forward(self, context: np.ndarray, horizon_len: int,
                capture=None) -> list[Tensor]:
        context = np.asarray(context, dtype=np.float64)
        plan = self.plan(context.shape[-1], horizon_len)
        ms = build_multiscale_set(context, None, horizon_len, self.cfg.scale_spec)
        return self.forward_from_set(ms, plan, capture=capture)

    def mixing_weights(self) -> Tensor:
        """Softmax over the learned logits; ablations fall back to uniform
        averaging or a scale-0 one-hot."""
        n = self.cfg.k_scales + 1
        if self.cfg.mixing == "weighted":
            return softmax(self.state["mix.theta"])
        if self.cfg.mixing == "average":
            return Tensor(np.full(n, 1.0 / n))
        one_hot = np.zeros(n)
        one_hot[0] = 1.0
        return Tensor(one_hot)

    def loss(self, preds: list[Tensor], targets: list[np.ndarray],
             valid: list[np.ndarray] | None = None) -> Tensor:
        """Mixing-weighted sum of per-scale MSEs over non-padded steps."""
        if len(preds) != len(targets):
            raise ValueError("loss: preds and targets must cover the same scales")
        w = self.mixing_weights()
        total = None
        for i, (pred, target) in enumerate(zip(preds, targets)):
            if pred.shape[-1] != np.asarray(target).shape[-1]:
                raise ValueError(f"loss: scale {i} length mismatch "
                                 f"{pred.shape[-1]} vs {np.asarray(target).shape[-1]}")
            mse_i = reconstruction_loss(pred, target,
                                        None if valid is None else valid[i])
            term = tsum(mul(narrow(w, 0, i, 1), mse_i))
            total = term if total is None else add(total, term)
        return total

    def predict(self, context: np.ndarray, horizon_len: int) -> ForecastBundle:
        preds = [p.data for p in self.forward(context, horizon_len)]
        w = self.mixing_weights().data
        mixed = np.zeros_like(preds[0])
        for i, p in enumerate(preds):
            mixed = mixed + w[i] * upsample_prediction(p, self.cfg.factor, i, horizon_len)
        return ForecastBundle(preds, w, mixed)

    def per_scale_targets(self, horizon: np.ndarray, plan: ForwardPlan):
        """Downsampled horizons (post-pad edge replication) plus valid masks."""
        ms = build_multiscale_set(np.zeros(plan.context_len), horizon,
                                  plan.horizon_len, self.cfg.scale_spec)
        return ms.horizons, ms.horizon_valid

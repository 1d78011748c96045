"""Multi-scale views of a (context, horizon) sample and token alignment.

Scales are produced by chained non-overlapping average pooling: scale i is
scale i-1 pooled by the factor, so lengths follow the ceil recurrence
C_i = ceil(C_{i-1}/s). Contexts are pre-padded (edge value) to a pooling
multiple, horizons post-padded, keeping contexts right-aligned and horizons
left-aligned in time. Token alignment between adjacent scales is computed
from absolute time spans, including pad offsets, never from naive index
arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, matmul


class AlignmentError(ValueError):
    """Token alignment does not match the tensor it is applied to."""


@dataclass(frozen=True)
class ScaleSpec:
    """K new scales below the original, adjacent scales s apart."""

    k_scales: int
    factor: int = 2

    def __post_init__(self):
        if self.k_scales < 0:
            raise ValueError("k_scales must be >= 0")
        if self.factor < 2:
            raise ValueError("downsampling factor must be >= 2")


def avg_downsample(x: np.ndarray, s: int, side: str = "pre") -> np.ndarray:
    """Edge-pad the last axis to a multiple of s on ``side``, then window-mean."""
    if s < 2:
        raise ValueError("downsampling factor must be >= 2")
    if side not in ("pre", "post"):
        raise ValueError(f"side must be 'pre' or 'post', got {side!r}")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 1:
        raise ValueError("cannot downsample an empty series")
    pad = (-n) % s
    if pad:
        width = [(0, 0)] * (x.ndim - 1) + [(pad, 0) if side == "pre" else (0, pad)]
        x = np.pad(x, width, mode="edge")
    return x.reshape(*x.shape[:-1], -1, s).mean(axis=-1)


@dataclass
class MultiScaleSet:
    """The K+1 downsampled (context, horizon) views plus pad bookkeeping."""

    spec: ScaleSpec
    contexts: list[np.ndarray]
    horizons: list[np.ndarray] | None
    context_lens: list[int]
    horizon_lens: list[int]
    # horizon_valid[i][j] is False where the pooling window behind step j
    # touched post-padding; such steps are excluded from losses.
    horizon_valid: list[np.ndarray]

    @property
    def n_scales(self) -> int:
        return self.spec.k_scales + 1


def build_multiscale_set(context: np.ndarray, horizon: np.ndarray | None,
                         horizon_len: int, spec: ScaleSpec) -> MultiScaleSet:
    """Chain-downsample a sample into scales 0..K.

    ``horizon`` may be None at inference; only the horizon lengths are then
    produced. Scale 0 is the untouched input.
    """
    context = np.asarray(context, dtype=np.float64)
    c = context.shape[-1]
    s = spec.factor
    for i in range(1, spec.k_scales + 1):
        if c < s**i:
            raise ValueError(
                f"context length {c} is shorter than one step at scale {i} "
                f"(needs >= {s**i})")
    contexts = [context]
    horizons = [np.asarray(horizon, dtype=np.float64)] if horizon is not None else None
    context_lens = [c]
    horizon_lens = [int(horizon_len)]
    if horizon_len < 1:
        raise ValueError("horizon length must be >= 1")
    valid = [np.ones(horizon_len, dtype=bool)]
    for i in range(1, spec.k_scales + 1):
        contexts.append(avg_downsample(contexts[-1], s, side="pre"))
        context_lens.append(contexts[-1].shape[-1])
        prev_h = horizon_lens[-1]
        pad = (-prev_h) % s
        horizon_lens.append((prev_h + pad) // s)
        padded_valid = np.concatenate([valid[-1], np.zeros(pad, dtype=bool)])
        valid.append(padded_valid.reshape(-1, s).all(axis=-1))
        if horizons is not None:
            horizons.append(avg_downsample(horizons[-1], s, side="post"))
    return MultiScaleSet(spec, contexts, horizons, context_lens, horizon_lens, valid)


@dataclass(frozen=True)
class ScaleSpan:
    """Token ranges of one scale inside the concatenated sequence."""

    ctx_start: int
    ctx_stop: int
    hor_start: int
    hor_stop: int

    @property
    def start(self) -> int:
        return self.ctx_start

    @property
    def stop(self) -> int:
        return self.hor_stop

    @property
    def n_ctx(self) -> int:
        return self.ctx_stop - self.ctx_start

    @property
    def n_hor(self) -> int:
        return self.hor_stop - self.hor_start

    @property
    def n_tokens(self) -> int:
        return self.stop - self.start


@dataclass
class ScaleIndexMap:
    spans: list[ScaleSpan]
    n_total: int

    def scale_ids(self) -> np.ndarray:
        """Scale index of every token position."""
        out = np.empty(self.n_total, dtype=np.int64)
        for i, sp in enumerate(self.spans):
            out[sp.start:sp.stop] = i
        return out


def build_scale_index_map(counts: list[tuple[int, int]]) -> ScaleIndexMap:
    """Cumulative (context, horizon) token ranges in scale order."""
    spans = []
    pos = 0
    for n_ctx, n_hor in counts:
        if n_ctx < 1 or n_hor < 1:
            raise ValueError("every scale needs at least one context and one horizon token")
        spans.append(ScaleSpan(pos, pos + n_ctx, pos + n_ctx, pos + n_ctx + n_hor))
        pos += n_ctx + n_hor
    return ScaleIndexMap(spans, pos)


@dataclass
class AlignmentEntry:
    """Fine-to-coarse token assignment for one segment of one scale pair."""

    fine_to_coarse: np.ndarray
    groups: list[list[int]]

    @property
    def n_fine(self) -> int:
        return len(self.fine_to_coarse)

    @property
    def n_coarse(self) -> int:
        return len(self.groups)


@dataclass
class PairAlignment:
    """Context and horizon alignment between scales i (fine) and i+1 (coarse)."""

    context: AlignmentEntry
    horizon: AlignmentEntry
    _repeat_mat: np.ndarray = field(default=None, repr=False)
    _pool_mat: np.ndarray = field(default=None, repr=False)

    @property
    def n_fine(self) -> int:
        return self.context.n_fine + self.horizon.n_fine

    @property
    def n_coarse(self) -> int:
        return self.context.n_coarse + self.horizon.n_coarse

    def repeat_matrix(self) -> np.ndarray:
        """[n_fine, n_coarse] copy matrix; context/horizon blocks are disjoint."""
        if self._repeat_mat is None:
            m = np.zeros((self.n_fine, self.n_coarse))
            off_f = off_c = 0
            for entry in (self.context, self.horizon):
                m[off_f + np.arange(entry.n_fine), off_c + entry.fine_to_coarse] = 1.0
                off_f += entry.n_fine
                off_c += entry.n_coarse
            self._repeat_mat = m
        return self._repeat_mat

    def pool_matrix(self) -> np.ndarray:
        """[n_coarse, n_fine] group-mean matrix."""
        if self._pool_mat is None:
            m = np.zeros((self.n_coarse, self.n_fine))
            off_f = off_c = 0
            for entry in (self.context, self.horizon):
                for u, grp in enumerate(entry.groups):
                    m[off_c + u, off_f + np.asarray(grp, dtype=int)] = 1.0 / len(grp)
                off_f += entry.n_fine
                off_c += entry.n_coarse
            self._pool_mat = m
        return self._pool_mat


@dataclass
class AlignmentMap:
    """One PairAlignment per adjacent scale pair (i, i+1), i = 0..K-1."""

    pairs: list[PairAlignment]


def _assign_spans(fine_starts, fine_stops, coarse_starts, coarse_stops, s) -> AlignmentEntry:
    """Majority time-span overlap assignment; ties go to the earlier coarse token."""
    n_fine, n_coarse = len(fine_starts), len(coarse_starts)
    f2c = np.empty(n_fine, dtype=np.int64)
    for v in range(n_fine):
        overlap = (np.minimum(fine_stops[v], coarse_stops)
                   - np.maximum(fine_starts[v], coarse_starts))
        overlap = np.maximum(overlap, 0)
        if overlap.max() <= 0:
            raise AlignmentError(f"fine token {v} overlaps no coarse token")
        f2c[v] = int(np.argmax(overlap))  # argmax returns the earliest tie
    groups = [list(np.where(f2c == u)[0]) for u in range(n_coarse)]
    for u, grp in enumerate(groups):
        if not grp:
            raise AlignmentError(f"coarse token {u} covers no fine tokens")
        if len(grp) > s:
            raise AlignmentError(f"coarse token {u} fan-out {len(grp)} exceeds factor {s}")
    return AlignmentEntry(f2c, groups)


def _context_token_spans(length: int, patch: int) -> tuple[np.ndarray, np.ndarray]:
    # right-aligned: the first token extends into pre-pad (negative steps)
    n_tokens = -(-length // patch)
    lead = (-length) % patch
    starts = np.arange(n_tokens) * patch - lead
    return starts, starts + patch


def _horizon_token_spans(length: int, patch: int) -> tuple[np.ndarray, np.ndarray]:
    # left-aligned: the last token extends into post-pad
    n_tokens = -(-length // patch)
    starts = np.arange(n_tokens) * patch
    return starts, starts + patch


def build_alignment(context_lens: list[int], horizon_lens: list[int],
                    patch: int, s: int) -> AlignmentMap:
    """Alignment for every adjacent pair, from absolute time spans."""
    pairs = []
    for i in range(len(context_lens) - 1):
        # context: coarse spans converted to fine-step units; pooling pre-pad
        # shifts the coarse grid left by r fine steps
        r = (-context_lens[i]) % s
        fs, fe = _context_token_spans(context_lens[i], patch)
        cs, ce = _context_token_spans(context_lens[i + 1], patch)
        ctx = _assign_spans(fs, fe, cs * s - r, ce * s - r, s)
        # horizon: both grids anchored at step 0
        fs, fe = _horizon_token_spans(horizon_lens[i], patch)
        cs, ce = _horizon_token_spans(horizon_lens[i + 1], patch)
        hor = _assign_spans(fs, fe, cs * s, ce * s, s)
        pairs.append(PairAlignment(ctx, hor))
    return AlignmentMap(pairs)


def token_repeat(h_coarse: Tensor, pair: PairAlignment) -> Tensor:
    """Copy each coarse row onto the fine rows it covers, per segment."""
    if h_coarse.shape[-2] != pair.n_coarse:
        raise AlignmentError(
            f"token_repeat: got {h_coarse.shape[-2]} rows, alignment has {pair.n_coarse}")
    return matmul(Tensor(pair.repeat_matrix()), h_coarse)


def token_avgpool(h_fine: Tensor, pair: PairAlignment) -> Tensor:
    """Each coarse row becomes the mean of its covered fine rows."""
    if h_fine.shape[-2] != pair.n_fine:
        raise AlignmentError(
            f"token_avgpool: got {h_fine.shape[-2]} rows, alignment has {pair.n_fine}")
    return matmul(Tensor(pair.pool_matrix()), h_fine)


def upsample_prediction(yhat: np.ndarray, s: int, scale: int, horizon_len: int) -> np.ndarray:
    """Repeat each scale-i step s**i times, truncated to the original horizon."""
    yhat = np.asarray(yhat, dtype=np.float64)
    expect = horizon_len
    for _ in range(scale):
        expect = -(-expect // s)
    if yhat.shape[-1] != expect:
        raise ValueError(
            f"upsample_prediction: scale-{scale} series has {yhat.shape[-1]} steps, "
            f"expected {expect} for horizon {horizon_len}")
    return np.repeat(yhat, s**scale, axis=-1)[..., :horizon_len]

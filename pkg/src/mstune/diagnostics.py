"""Scale-confounding diagnostics and attention-pattern exports.

For each window and scale we record a triplet: the scale index, a scalar
autocorrelation summary of the (downsampled) input, and the L2 norm of the
mean token embedding from a designated encoder layer. Pearson and partial
correlation with Fisher-Z significance then quantify how much of the
input/embedding dependence the scale explains. Attention probabilities can
be exported per layer/head to compare masking strategies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backbone import Backbone
from .csvio import format_value, write_csv
from .data import acf_feature
from .msft import MsftModel
from .multiscale import ScaleIndexMap, avg_downsample
from .tensor import no_grad


class DegenerateCorrelation(ValueError):
    """A correlation input has zero variance or is perfectly collinear."""


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 4:
        raise ValueError("pearson needs two equal-length samples with n >= 4")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise DegenerateCorrelation("pearson: an input has zero variance")
    return float(xc @ yc) / math.sqrt(sx * sy)


def fisher_z_pvalue(r: float, n: int, n_conditioned: int = 0) -> float:
    """Two-sided p for H0: rho=0 via the Fisher transform and normal tail."""
    df = n - 3 - n_conditioned
    if df <= 0:
        raise ValueError(f"need n > {3 + n_conditioned} samples, got {n}")
    if abs(r) >= 1.0:
        return 0.0
    stat = math.atanh(r) * math.sqrt(df)
    return math.erfc(abs(stat) / math.sqrt(2.0))


def partial_correlation(x, y, z) -> tuple[float, float]:
    """Correlation of x and y with z linearly removed, plus Fisher-Z p.

    r_xy.z = (r_xy - r_xz * r_yz) / sqrt((1 - r_xz^2)(1 - r_yz^2)).
    """
    r_xy = pearson(x, y)
    r_xz = pearson(x, z)
    r_yz = pearson(y, z)
    if abs(r_xz) == 1.0 or abs(r_yz) == 1.0:
        raise DegenerateCorrelation("partial_correlation: conditioning variable "
                                    "is perfectly collinear with an input")
    r = (r_xy - r_xz * r_yz) / math.sqrt((1 - r_xz**2) * (1 - r_yz**2))
    return r, fisher_z_pvalue(r, len(np.asarray(x)), n_conditioned=1)


@dataclass
class ScaleTriplet:
    scale: int
    acf_summary: float
    embed_norm: float


def collect_triplets(backbone: Backbone, contexts: np.ndarray, k_scales: int,
                     factor: int = 2, layer: int | None = None,
                     max_lag: int = 24) -> list[ScaleTriplet]:
    """One triplet per (window, scale) from the frozen backbone.

    The ACF summary is the mean absolute autocorrelation over lags
    1..max_lag (capped below the scale's context length); the embedding
    statistic is the L2 norm of the mean token embedding after ``layer``
    blocks (default: all of them).
    """
    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    layer = backbone.cfg.n_layers if layer is None else layer
    if not 1 <= layer <= backbone.cfg.n_layers:
        raise IndexError(f"layer {layer} out of range 1..{backbone.cfg.n_layers}")
    triplets = []
    scaled = [contexts]
    for _ in range(k_scales):
        scaled.append(avg_downsample(scaled[-1], factor, side="pre"))
    for i, ctx_i in enumerate(scaled):
        with no_grad():
            h = backbone.encode_context(ctx_i, stop_layer=layer)
        norms = np.linalg.norm(h.data.mean(axis=-2), axis=-1)
        lag = min(max_lag, ctx_i.shape[-1] - 1)
        for w in range(contexts.shape[0]):
            acf = acf_feature(ctx_i[w], lag)
            triplets.append(ScaleTriplet(i, float(np.abs(acf).mean()),
                                         float(norms[w])))
    return triplets


def triplet_correlations(triplets: list[ScaleTriplet]) -> dict:
    """Raw vs scale-conditioned correlation between ACF summary and norm."""
    s = np.array([t.scale for t in triplets], dtype=np.float64)
    x = np.array([t.acf_summary for t in triplets])
    m = np.array([t.embed_norm for t in triplets])
    raw = pearson(x, m)
    partial, p = partial_correlation(x, m, s)
    return {"raw": raw, "raw_p": fisher_z_pvalue(raw, len(x)),
            "partial": partial, "partial_p": p, "n": len(x)}


EXPORT_MODES = {
    "naive": {"in_scale_mask": False, "aligned_positions": False},
    "aligned": {"in_scale_mask": False, "aligned_positions": True},
    "in_scale": {"in_scale_mask": True, "aligned_positions": False},
}


@dataclass
class HeatmapExport:
    mode: str
    layer: int
    head: int
    probs: np.ndarray
    spans: list[tuple[int, int, int, int]]

    def to_csv(self, path, extra_comments=()) -> None:
        comments = [f"mode={self.mode} layer={self.layer} head={self.head}"]
        for i, (cs, ce, hs, he) in enumerate(self.spans):
            comments.append(f"scale={i} ctx=[{cs},{ce}) hor=[{hs},{he})")
        comments.extend(extra_comments)
        n = self.probs.shape[0]
        write_csv(path, [f"t{j}" for j in range(n)],
                  [[format_value(v) for v in row] for row in self.probs],
                  comments=comments)


def heatmap_filename(run: str, mode: str, layer: int, head: int) -> str:
    return f"{run}_{mode}_L{layer}H{head}.csv"


def export_attention(model: MsftModel, context: np.ndarray, mode: str,
                     layer: int, head: int,
                     horizon_len: int | None = None) -> HeatmapExport:
    """Capture attention probabilities for one window at (layer, head)."""
    if mode not in EXPORT_MODES:
        raise ValueError(f"mode must be one of {sorted(EXPORT_MODES)}")
    for flag, value in EXPORT_MODES[mode].items():
        if getattr(model.cfg, flag) != value:
            raise ValueError(f"model flags do not match mode {mode!r}: "
                             f"{flag} should be {value}")
    cfg = model.backbone.cfg
    if not 0 <= layer < cfg.n_layers:
        raise IndexError(f"layer {layer} out of range 0..{cfg.n_layers - 1}")
    if not 0 <= head < cfg.n_heads:
        raise IndexError(f"head {head} out of range 0..{cfg.n_heads - 1}")
    context = np.atleast_2d(np.asarray(context, dtype=np.float64))[:1]
    horizon_len = context.shape[-1] if horizon_len is None else horizon_len
    capture = []
    with no_grad():
        model.forward(context, horizon_len, capture=capture)
    probs = dict(capture)[layer][0, head]
    plan = model.plan(context.shape[-1], horizon_len)
    spans = [(sp.ctx_start, sp.ctx_stop, sp.hor_start, sp.hor_stop)
             for sp in plan.index_map.spans]
    return HeatmapExport(mode, layer, head, probs, spans)


def co_index_mass_statistic(probs: np.ndarray, index_map: ScaleIndexMap) -> dict:
    """Mean cross-scale attention mass on equal local indices vs elsewhere.

    No threshold is asserted anywhere; this is a descriptive statistic for
    comparing masking strategies.
    """
    spans = index_map.spans
    diag, off = [], []
    for i, si in enumerate(spans):
        for j, sj in enumerate(spans):
            if i == j:
                continue
            block = probs[si.start:si.stop, sj.start:sj.stop]
            n_i, n_j = block.shape
            for a in range(n_i):
                for b in range(n_j):
                    (diag if a == b else off).append(block[a, b])
    return {"co_index_mean": float(np.mean(diag)) if diag else math.nan,
            "off_index_mean": float(np.mean(off)) if off else math.nan}

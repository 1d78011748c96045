"""Scale generation, index maps, alignment, and the repeat/pool algebra."""

import numpy as np
import pytest

from mstune.multiscale import (
    AlignmentEntry,
    AlignmentError,
    PairAlignment,
    ScaleSpec,
    avg_downsample,
    build_alignment,
    build_multiscale_set,
    build_scale_index_map,
    token_avgpool,
    token_repeat,
    upsample_prediction,
)
from mstune.rng import Rng
from mstune.tensor import Tensor


def test_avg_downsample_constant():
    assert np.array_equal(avg_downsample(np.array([5.0, 5, 5, 5]), 2), [5.0, 5.0])


def test_avg_downsample_window_mean():
    assert np.array_equal(avg_downsample(np.array([1.0, 2, 3, 4]), 2), [1.5, 3.5])


def test_avg_downsample_prepad_edge():
    # [1,2,3] pre-pads to [1,1,2,3] -> [1, 2.5]
    assert np.array_equal(avg_downsample(np.array([1.0, 2, 3]), 2, side="pre"), [1.0, 2.5])


def test_avg_downsample_postpad_edge():
    # [1,2,3] post-pads to [1,2,3,3] -> [1.5, 3]
    assert np.array_equal(avg_downsample(np.array([1.0, 2, 3]), 2, side="post"), [1.5, 3.0])


def test_avg_downsample_bad_factor():
    with pytest.raises(ValueError):
        avg_downsample(np.ones(4), 1)


def test_build_multiscale_k0_is_original():
    ctx = np.arange(10.0)
    hor = np.arange(5.0)
    ms = build_multiscale_set(ctx, hor, 5, ScaleSpec(0))
    assert ms.n_scales == 1
    assert np.array_equal(ms.contexts[0], ctx)
    assert np.array_equal(ms.horizons[0], hor)


def test_build_multiscale_lengths_96():
    ms = build_multiscale_set(np.ones(96), np.ones(96), 96, ScaleSpec(2, 2))
    assert ms.context_lens == [96, 48, 24]
    assert ms.horizon_lens == [96, 48, 24]


def test_build_multiscale_odd_lengths():
    ms = build_multiscale_set(np.ones(97), None, 96, ScaleSpec(2, 2))
    assert ms.context_lens == [97, 49, 25]


def test_build_multiscale_too_short_names_scale():
    with pytest.raises(ValueError, match="scale 2"):
        build_multiscale_set(np.ones(3), None, 4, ScaleSpec(2, 2))


def test_chained_equals_direct_formula():
    # ceil chaining agrees with ceil(C / s**i) for every tested length
    for s in (2, 3, 4):
        for c in range(1, 513):
            chained = c
            for i in range(1, 5):
                chained = -(-chained // s)
                assert chained == -(-c // s**i), (c, s, i)


def test_scale_index_map_single():
    m = build_scale_index_map([(6, 6)])
    sp = m.spans[0]
    assert (sp.ctx_start, sp.ctx_stop, sp.hor_start, sp.hor_stop) == (0, 6, 6, 12)
    assert m.n_total == 12


def test_scale_index_map_two_scales():
    m = build_scale_index_map([(6, 6), (3, 3)])
    sp = m.spans[1]
    assert (sp.ctx_start, sp.ctx_stop) == (12, 15)
    assert (sp.hor_start, sp.hor_stop) == (15, 18)


def test_scale_index_map_total_22():
    # C=H=96, P=16, s=2, K=2 -> per-scale token counts 12, 6, 4
    m = build_scale_index_map([(6, 6), (3, 3), (2, 2)])
    assert m.n_total == 22
    ids = m.scale_ids()
    assert len(ids) == 22
    assert (np.sort(np.unique(ids)) == [0, 1, 2]).all()
    # spans partition [0, N_total)
    covered = np.concatenate([np.arange(sp.start, sp.stop) for sp in m.spans])
    assert np.array_equal(covered, np.arange(22))


def _uniform_pair(n_ctx_f=4, n_hor_f=2, s=2):
    ctx = AlignmentEntry(np.repeat(np.arange(n_ctx_f // s), s),
                         [list(range(u * s, (u + 1) * s)) for u in range(n_ctx_f // s)])
    hor = AlignmentEntry(np.repeat(np.arange(n_hor_f // s), s),
                         [list(range(u * s, (u + 1) * s)) for u in range(n_hor_f // s)])
    return PairAlignment(ctx, hor)


def test_token_repeat_uniform():
    pair = PairAlignment(AlignmentEntry(np.array([0, 0, 1, 1]), [[0, 1], [2, 3]]),
                         AlignmentEntry(np.array([0]), [[0]]))
    a, b, h = [1.0, 2.0], [3.0, 4.0], [9.0, 9.0]
    out = token_repeat(Tensor(np.array([a, b, h])), pair)
    assert np.array_equal(out.data, [a, a, b, b, h])


def test_token_repeat_ragged_follows_alignment():
    pair = PairAlignment(AlignmentEntry(np.array([0, 0, 1]), [[0, 1], [2]]),
                         AlignmentEntry(np.array([0]), [[0]]))
    a, b, h = [1.0], [2.0], [5.0]
    out = token_repeat(Tensor(np.array([a, b, h])), pair)
    assert np.array_equal(out.data, [a, a, b, h])


def test_token_repeat_segment_isolation():
    # a fine horizon row never receives a coarse context row
    pair = _uniform_pair()
    coarse = Tensor(np.array([[1.0], [2.0], [7.0]]))  # 2 ctx rows, 1 hor row
    out = token_repeat(coarse, pair).data
    assert np.array_equal(out[:4, 0], [1, 1, 2, 2])  # context block only
    assert np.array_equal(out[4:, 0], [7, 7])        # horizon block only


def test_token_avgpool_uniform():
    pair = _uniform_pair()
    fine = Tensor(np.array([[1.0], [3.0], [5.0], [7.0], [10.0], [20.0]]))
    out = token_avgpool(fine, pair).data
    assert np.array_equal(out[:, 0], [2.0, 6.0, 15.0])


def test_token_avgpool_remainder_group():
    pair = PairAlignment(AlignmentEntry(np.array([0, 0, 1]), [[0, 1], [2]]),
                         AlignmentEntry(np.array([0]), [[0]]))
    fine = Tensor(np.array([[1.0], [2.0], [9.0], [4.0]]))
    out = token_avgpool(fine, pair).data
    assert np.array_equal(out[:, 0], [1.5, 9.0, 4.0])


def test_repeat_avgpool_adjoint_identity():
    # <Repeat(x), y> = s * <x, AvgPool(y)> under uniform fan-out
    pair = PairAlignment(AlignmentEntry(np.array([0, 0, 1, 1]), [[0, 1], [2, 3]]),
                         AlignmentEntry(np.array([0, 0]), [[0, 1]]))
    x = np.array([[1.0], [2.0], [3.0]])
    y = np.array([[1.0], [1.0], [1.0], [1.0], [1.0], [1.0]])
    lhs = float(token_repeat(Tensor(x), pair).data[:, 0] @ y[:, 0])
    rhs = 2.0 * float(x[:, 0] @ token_avgpool(Tensor(y), pair).data[:, 0])
    assert lhs == rhs
    # the spec's worked case restricted to one segment: x=[1,2], y=[1,1,1,1]
    seg = PairAlignment(AlignmentEntry(np.array([0, 0, 1, 1]), [[0, 1], [2, 3]]),
                        AlignmentEntry(np.array([0]), [[0]]))
    xs = np.array([[1.0], [2.0], [0.0]])
    ys = np.array([[1.0], [1.0], [1.0], [1.0], [0.0]])
    lhs = float(token_repeat(Tensor(xs), seg).data[:, 0] @ ys[:, 0])
    rhs = 2.0 * float(xs[:, 0] @ token_avgpool(Tensor(ys), seg).data[:, 0])
    assert lhs == rhs == 6.0


def test_avgpool_of_repeat_is_identity_uniform():
    pair = _uniform_pair()
    rng = Rng(21)
    x = rng.normal((3, 5))
    back = token_avgpool(token_repeat(Tensor(x), pair), pair).data
    assert np.array_equal(back, x)


def test_repeat_shape_mismatch_raises():
    pair = _uniform_pair()
    with pytest.raises(AlignmentError):
        token_repeat(Tensor(np.zeros((4, 2))), pair)
    with pytest.raises(AlignmentError):
        token_avgpool(Tensor(np.zeros((5, 2))), pair)


def test_build_alignment_uniform_96():
    align = build_alignment([96, 48, 24], [96, 48, 24], 16, 2)
    assert len(align.pairs) == 2
    p0 = align.pairs[0]
    assert np.array_equal(p0.context.fine_to_coarse, [0, 0, 1, 1, 2, 2])
    assert np.array_equal(p0.horizon.fine_to_coarse, [0, 0, 1, 1, 2, 2])


def test_build_alignment_padded_case():
    # C=17 at the fine scale: 2 fine tokens, 1 coarse token (P=16, s=2)
    align = build_alignment([17, 9], [17, 9], 16, 2)
    assert np.array_equal(align.pairs[0].context.fine_to_coarse, [0, 0])
    assert np.array_equal(align.pairs[0].horizon.fine_to_coarse, [0, 0])


def test_alignment_properties_bruteforce():
    # every fine token assigned, groups nonempty, fan-out <= s
    for s in (2, 3, 4):
        for c in (1, 2, 5, 16, 17, 31, 33, 65, 96, 97, 128, 250, 511):
            lens = [c]
            for _ in range(2):
                lens.append(-(-lens[-1] // s))
            align = build_alignment(lens, lens, 16, s)
            for pair in align.pairs:
                for entry in (pair.context, pair.horizon):
                    assert all(len(g) >= 1 for g in entry.groups)
                    assert all(len(g) <= s for g in entry.groups)
                    assert sorted(np.concatenate(
                        [np.asarray(g) for g in entry.groups]).tolist()) \
                        == list(range(entry.n_fine))


def test_upsample_identity_at_scale0():
    y = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(upsample_prediction(y, 2, 0, 3), y)


def test_upsample_repeat():
    assert np.array_equal(upsample_prediction(np.array([2.0, 4.0]), 2, 1, 4), [2, 2, 4, 4])


def test_upsample_truncates_postpad():
    assert np.array_equal(upsample_prediction(np.array([2.0, 4.0]), 2, 1, 3), [2, 2, 4])


def test_upsample_length_mismatch():
    with pytest.raises(ValueError):
        upsample_prediction(np.array([2.0, 4.0, 6.0]), 2, 1, 4)


def test_upsample_of_downsample_preserves_block_means():
    rng = Rng(22)
    y = rng.normal((32,))
    down = avg_downsample(y, 2, side="post")
    up = upsample_prediction(down, 2, 1, 32)
    assert np.allclose(up.reshape(-1, 2).mean(axis=1), y.reshape(-1, 2).mean(axis=1))


def test_constant_series_constant_at_every_scale():
    rng = Rng(23)
    for value in rng.normal((100,)):
        ms = build_multiscale_set(np.full(37, value), None, 29, ScaleSpec(3, 2))
        for ctx in ms.contexts:
            assert np.allclose(ctx, value, atol=1e-12)


def test_horizon_valid_masks():
    ms = build_multiscale_set(np.ones(96), None, 7, ScaleSpec(2, 2))
    # H: 7 -> 4 -> 2; step 3 of scale 1 covers original step 7 (pad)
    assert ms.horizon_lens == [7, 4, 2]
    assert ms.horizon_valid[0].all()
    assert np.array_equal(ms.horizon_valid[1], [True, True, True, False])
    assert np.array_equal(ms.horizon_valid[2], [True, False])

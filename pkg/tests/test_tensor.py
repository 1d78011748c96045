"""Tensor op semantics and gradient fidelity against finite differences."""

import numpy as np
import pytest

from mstune.gradcheck import finite_diff_check
from mstune.rng import Rng
from mstune.tensor import (
    MaskError,
    ShapeError,
    Tensor,
    add,
    concat,
    gelu,
    layer_norm,
    masked_softmax,
    matmul,
    mean,
    mul,
    narrow,
    replace_token_span,
    reshape,
    softmax,
    sub,
    transpose,
    tsum,
)


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = matmul(a, b)
    assert np.array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_hand_expansion():
    # [[1,2]] @ [[3],[4]] = [[1*3 + 2*4]] = [[11]]
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.shape == (1, 1)
    assert out.data[0, 0] == 11.0


def test_matmul_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError) as exc:
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    assert "(2, 3)" in str(exc.value)


def test_matmul_gradcheck():
    rng = Rng(7)
    a = Tensor(rng.normal((3, 4)), requires_grad=True)
    b = Tensor(rng.normal((4, 2)), requires_grad=True)

    def f():
        return mean(matmul(a, b))

    report = finite_diff_check(f, {"a": a, "b": b}, h=1e-6, tol=1e-6)
    assert report.passed, report.summary()


def test_matmul_batched_gradcheck():
    rng = Rng(8)
    a = Tensor(rng.normal((2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal((4, 5)), requires_grad=True)

    def f():
        return mean(mul(matmul(a, b), matmul(a, b)))

    report = finite_diff_check(f, {"a": a, "b": b}, h=1e-6, tol=1e-6)
    assert report.passed, report.summary()


def test_masked_softmax_uniform():
    scores = Tensor(np.zeros((3, 3)))
    mask = np.ones((3, 3), dtype=bool)
    p = masked_softmax(scores, mask)
    assert np.allclose(p.data, 1.0 / 3.0)


def test_masked_softmax_single_allowed():
    p = masked_softmax(Tensor([[0.0, 0.0]]), np.array([[True, False]]))
    assert np.array_equal(p.data, [[1.0, 0.0]])


def test_masked_softmax_matches_bruteforce_renormalization():
    rng = Rng(11)
    scores = rng.normal((4, 4))
    mask = np.zeros((4, 4), dtype=bool)
    mask[:2, :2] = True
    mask[2:, 2:] = True
    p = masked_softmax(Tensor(scores), mask).data
    for i in range(4):
        allowed = np.where(mask[i])[0]
        e = np.exp(scores[i, allowed] - scores[i, allowed].max())
        expect = e / e.sum()
        assert np.allclose(p[i, allowed], expect, atol=1e-12)
        assert (p[i, ~mask[i]] == 0.0).all()


def test_masked_softmax_rows_sum_to_one_and_zeros_exact():
    rng = Rng(12)
    scores = Tensor(rng.normal((2, 6, 6)), requires_grad=True)
    mask = np.zeros((6, 6), dtype=bool)
    mask[:3, :3] = True
    mask[3:, 3:] = True
    p = masked_softmax(scores, mask)
    assert np.allclose(p.data.sum(axis=-1), 1.0, atol=1e-12)
    assert (p.data[..., ~mask] == 0.0).all()
    # gradient at disallowed entries is exactly zero too
    loss = mean(mul(p, Tensor(rng.normal((2, 6, 6)))))
    loss.backward()
    assert (scores.grad[..., ~mask] == 0.0).all()


def test_masked_softmax_fully_masked_row_raises():
    mask = np.array([[True, True], [False, False]])
    with pytest.raises(MaskError):
        masked_softmax(Tensor(np.zeros((2, 2))), mask)


def test_masked_softmax_large_logits_stable():
    p = masked_softmax(Tensor([[1e6, 1e6 - 1.0]]), np.array([[True, True]]))
    assert np.isfinite(p.data).all()
    assert np.isclose(p.data.sum(), 1.0)


def test_softmax_gradcheck():
    rng = Rng(13)
    x = Tensor(rng.normal((5,)), requires_grad=True)
    w = Tensor(rng.normal((5,)))

    def f():
        return tsum(mul(softmax(x), w))

    report = finite_diff_check(f, {"x": x}, h=1e-6, tol=1e-6)
    assert report.passed, report.summary()


def test_layer_norm_constant_input_is_zero():
    x = Tensor(np.full((4, 8), 3.7))
    out = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-5)
    assert np.allclose(out.data, 0.0)


def test_layer_norm_closed_form():
    out = layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-9)


def test_layer_norm_gradcheck():
    rng = Rng(14)
    x = Tensor(rng.normal((3, 6)), requires_grad=True)
    gamma = Tensor(rng.normal((6,), std=0.1) + 1.0, requires_grad=True)
    beta = Tensor(rng.normal((6,), std=0.1), requires_grad=True)
    w = Tensor(rng.normal((3, 6)))

    def f():
        return mean(mul(layer_norm(x, gamma, beta, eps=1e-5), w))

    report = finite_diff_check(f, {"x": x, "gamma": gamma, "beta": beta}, h=1e-6, tol=1e-5)
    assert report.passed, report.summary()


def test_gelu_zero():
    assert gelu(Tensor(0.0)).data == 0.0


def test_gelu_gradcheck():
    rng = Rng(15)
    x = Tensor(rng.normal((7,)), requires_grad=True)

    def f():
        return mean(gelu(x))

    report = finite_diff_check(f, {"x": x}, h=1e-6, tol=1e-6)
    assert report.passed, report.summary()


def test_concat_axis0():
    out = concat([Tensor([1.0, 2.0]), Tensor([3.0])], axis=0)
    assert np.array_equal(out.data, [1.0, 2.0, 3.0])


def test_concat_narrow_round_trip():
    rng = Rng(16)
    a = rng.normal((3, 4))
    b = rng.normal((5, 4))
    joined = concat([Tensor(a), Tensor(b)], axis=0)
    assert np.array_equal(narrow(joined, 0, 0, 3).data, a)
    assert np.array_equal(narrow(joined, 0, 3, 5).data, b)


def test_narrow_out_of_range():
    with pytest.raises(IndexError):
        narrow(Tensor(np.zeros((4,))), 0, 2, 3)


def test_mean_gradcheck():
    rng = Rng(17)
    x = Tensor(rng.normal((9,)), requires_grad=True)

    def f():
        return mean(mul(x, x))

    report = finite_diff_check(f, {"x": x}, h=1e-6, tol=1e-6)
    assert report.passed, report.summary()


def test_backward_sum_grad_is_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    tsum(x).backward()
    assert np.array_equal(x.grad, [1.0, 1.0, 1.0])


def test_backward_quadratic_identity():
    x = Tensor([1.5, -2.0, 0.5], requires_grad=True)
    loss = mul(tsum(mul(x, x)), 0.5)
    loss.backward()
    assert np.allclose(x.grad, x.data)


def test_backward_non_scalar_raises():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        add(x, x).backward()


def test_backward_fanout_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = add(mul(x, 3.0), mul(x, 4.0))
    tsum(y).backward()
    assert np.allclose(x.grad, [7.0])


def test_untracked_tensors_receive_no_grad():
    x = Tensor([1.0], requires_grad=True)
    c = Tensor([2.0])
    tsum(mul(x, c)).backward()
    assert c.grad is None


def test_replace_token_span_semantics_and_grad():
    rng = Rng(18)
    h = Tensor(rng.normal((2, 5, 3)), requires_grad=True)
    row = Tensor(rng.normal((3,)), requires_grad=True)
    out = replace_token_span(h, 2, 4, row)
    assert np.array_equal(out.data[:, :2], h.data[:, :2])
    assert np.array_equal(out.data[:, 4:], h.data[:, 4:])
    assert (out.data[:, 2:4] == row.data).all()

    def f():
        return mean(mul(replace_token_span(h, 2, 4, row),
                        Tensor(np.arange(30, dtype=float).reshape(2, 5, 3))))

    report = finite_diff_check(f, {"h": h, "row": row}, h=1e-6, tol=1e-6)
    assert report.passed, report.summary()


def test_replace_token_span_empty_raises():
    with pytest.raises(ValueError):
        replace_token_span(Tensor(np.zeros((1, 4, 2))), 2, 2, Tensor(np.zeros(2)))


def test_transpose_reshape_gradcheck():
    rng = Rng(19)
    x = Tensor(rng.normal((2, 3, 4)), requires_grad=True)
    w = Tensor(rng.normal((4, 3, 2)))

    def f():
        return mean(mul(transpose(x, (2, 1, 0)), w))

    report = finite_diff_check(f, {"x": x}, h=1e-6, tol=1e-6)
    assert report.passed, report.summary()
    y = reshape(x, (6, 4))
    assert y.data.shape == (6, 4)


def test_elementwise_broadcast_grads():
    rng = Rng(20)
    x = Tensor(rng.normal((3, 4)), requires_grad=True)
    b = Tensor(rng.normal((4,)), requires_grad=True)

    def f():
        return mean(mul(sub(add(x, b), 0.5), add(x, b)))

    report = finite_diff_check(f, {"x": x, "b": b}, h=1e-6, tol=1e-6)
    assert report.passed, report.summary()

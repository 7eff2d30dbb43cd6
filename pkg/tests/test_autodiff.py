"""Numeric core: forward contracts and finite-difference gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cactus_kit import autodiff as ad
from cactus_kit.autodiff import GradientTape, ShapeError, TapeError, Tensor, ZeroNormError

from conftest import central_difference, rel_err


def grad_of(build, params):
    """Run build() under a tape over params and return the gradient map."""
    with GradientTape(params) as tape:
        loss = build()
        return tape.backward(loss)


def check_entrywise(build, params, tol=1e-5, eps=1e-5):
    grads = grad_of(build, params)
    for name, p in params.items():
        fd = central_difference(lambda: build_value(build), p.data, eps)
        analytic = grads[name]
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-8)
        assert np.max(np.abs(fd - analytic) / denom) <= tol, f"gradient mismatch for {name}"


def build_value(build) -> float:
    return build().item()


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(a, b).data, b.data)


def test_matmul_hand_value():
    out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones(3)), Tensor(np.ones(3)))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = ad.parameter(rng.uniform(-1, 1, (3, 3)), "a")
    b = ad.parameter(rng.uniform(-1, 1, (3, 3)), "b")
    check_entrywise(lambda: ad.matmul(a, b).sum(), {"a": a, "b": b}, tol=1e-6)


def test_batched_matmul_gradient():
    rng = np.random.default_rng(1)
    a = ad.parameter(rng.uniform(-1, 1, (2, 3, 4)), "a")
    b = ad.parameter(rng.uniform(-1, 1, (2, 4, 2)), "b")
    check_entrywise(lambda: ad.matmul(a, b).sum(), {"a": a, "b": b}, tol=1e-6)


# ---------------------------------------------------------------------------
# softmax


def test_softmax_uniform():
    out = ad.softmax_rows(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_closed_form():
    out = ad.softmax_rows(Tensor([np.log(2.0), 0.0]))
    assert np.allclose(out.data, [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_masked_row():
    out = ad.softmax_rows(Tensor([[5.0, 1.0, 3.0]]), mask=np.array([[True, False, True]]))
    e5, e3 = np.exp(5.0), np.exp(3.0)
    assert np.allclose(out.data, [[e5 / (e5 + e3), 0.0, e3 / (e5 + e3)]], atol=1e-15)
    assert out.data[0, 1] == 0.0


def test_softmax_fully_masked_row_errors():
    with pytest.raises(ShapeError):
        ad.softmax_rows(Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


@settings(max_examples=40, deadline=None)
@given(
    st.integers(2, 5), st.integers(2, 6),
    st.integers(0, 2 ** 30),
)
def test_softmax_rows_sum_to_one_and_mask_zeroes(m, n, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-30, 30, (m, n)))
    mask = rng.random((m, n)) < 0.6
    mask[np.arange(m), rng.integers(0, n, m)] = True  # keep every row alive
    out = ad.softmax_rows(x, mask=mask)
    assert np.all(np.abs(out.data.sum(axis=-1) - 1.0) <= 1e-12)
    assert np.all(out.data[~mask] == 0.0)


def test_softmax_gradient():
    rng = np.random.default_rng(2)
    x = ad.parameter(rng.uniform(-1, 1, (3, 4)), "x")
    w = rng.uniform(-1, 1, (3, 4))
    check_entrywise(lambda: (ad.softmax_rows(x) * Tensor(w)).sum(), {"x": x})


# ---------------------------------------------------------------------------
# mean_pool / cosine


def test_mean_pool_values():
    assert ad.mean_pool(Tensor([[1.0, 3.0], [3.0, 5.0]])).data.tolist() == [2.0, 4.0]
    assert ad.mean_pool(Tensor([[7.0, 7.0]])).data.tolist() == [7.0, 7.0]


def test_mean_pool_empty_errors():
    with pytest.raises(ShapeError):
        ad.mean_pool(Tensor(np.zeros((0, 3))))
    with pytest.raises(ShapeError):
        ad.mean_pool(Tensor(np.zeros(3)))


def test_mean_pool_gradient():
    rng = np.random.default_rng(3)
    x = ad.parameter(rng.uniform(-1, 1, (4, 3)), "x")
    w = rng.uniform(-1, 1, 3)
    check_entrywise(lambda: (ad.mean_pool(x) * Tensor(w)).sum(), {"x": x}, tol=1e-6)


def test_cosine_values():
    assert ad.cosine(Tensor([3.0, 4.0]), Tensor([3.0, 4.0])).item() == pytest.approx(1.0, abs=1e-12)
    assert ad.cosine(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == pytest.approx(0.0, abs=1e-15)
    assert ad.cosine(Tensor([1.0, 1.0]), Tensor([1.0, 0.0])).item() == pytest.approx(1 / np.sqrt(2), abs=1e-12)


def test_cosine_self_similarity_many_vectors():
    rng = np.random.default_rng(4)
    for _ in range(25):
        u = Tensor(rng.uniform(-1, 1, 5))
        assert abs(ad.cosine(u, u).item() - 1.0) <= 1e-12


def test_cosine_zero_norm_errors_name_the_side():
    with pytest.raises(ZeroNormError) as err:
        ad.cosine(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))
    assert err.value.index == 0
    with pytest.raises(ZeroNormError) as err:
        ad.cosine(Tensor([1.0, 0.0]), Tensor([0.0, 0.0]))
    assert err.value.index == 1


def test_cosine_gradient():
    rng = np.random.default_rng(5)
    u = ad.parameter(rng.uniform(0.2, 1, 4), "u")
    v = ad.parameter(rng.uniform(0.2, 1, 4), "v")
    check_entrywise(lambda: ad.cosine(u, v), {"u": u, "v": v})


# ---------------------------------------------------------------------------
# backward semantics


def test_backward_sum_gives_ones():
    p = ad.parameter(np.array([1.0, 2.0, 3.0]), "p")
    grads = grad_of(lambda: p.sum(), {"p": p})
    assert np.array_equal(grads["p"], np.ones(3))


def test_backward_squared_norm():
    p = ad.parameter(np.array([1.0, -2.0]), "p")
    grads = grad_of(lambda: (p * p).sum(), {"p": p})
    assert np.allclose(grads["p"], [2.0, -4.0], atol=1e-15)


def test_unreachable_parameter_gets_exact_zero():
    p = ad.parameter(np.array([1.0, 2.0]), "p")
    q = ad.parameter(np.array([5.0]), "q")
    grads = grad_of(lambda: p.sum(), {"p": p, "q": q})
    assert np.array_equal(grads["q"], np.zeros(1))


def test_backward_non_scalar_root_errors():
    p = ad.parameter(np.ones(3), "p")
    with GradientTape({"p": p}) as tape:
        out = p * 2.0
    with pytest.raises(TapeError):
        tape.backward(out)


def test_backward_twice_errors():
    p = ad.parameter(np.ones(3), "p")
    with GradientTape({"p": p}) as tape:
        loss = p.sum()
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_fanout_accumulates_and_zero_grads_resets():
    p = ad.parameter(np.array([2.0]), "p")
    grads = grad_of(lambda: (p + p).sum(), {"p": p})
    assert grads["p"][0] == 2.0
    assert p.grad[0] == 2.0
    grad_of(lambda: p.sum(), {"p": p})
    assert p.grad[0] == 3.0  # accumulates across tapes until zeroed
    ad.zero_grads({"p": p})
    assert p.grad is None


def test_no_tape_means_no_recording():
    p = ad.parameter(np.ones(3), "p")
    out = (p * 2.0).sum()
    assert out.item() == 6.0
    assert not out.requires_grad


# ---------------------------------------------------------------------------
# finite differences for every primitive, >= 20 seeds


def _primitive_cases(rng):
    a = ad.parameter(rng.uniform(-1, 1, (3, 4)), "a")
    b = ad.parameter(rng.uniform(-1, 1, (3, 4)), "b")
    c = ad.parameter(rng.uniform(0.3, 1.0, (3, 4)), "c")  # positive domain
    row = ad.parameter(rng.uniform(-1, 1, (1, 4)), "row")
    w = Tensor(rng.uniform(-1, 1, (3, 4)))
    idx = rng.integers(0, 3, 5)
    return {
        "add_broadcast": (lambda: ((a + row) * w).sum(), {"a": a, "row": row}),
        "sub": (lambda: ((a - b) * w).sum(), {"a": a, "b": b}),
        "mul": (lambda: ((a * b) * w).sum(), {"a": a, "b": b}),
        "div": (lambda: ((a / c) * w).sum(), {"a": a, "c": c}),
        "neg": (lambda: (-a * w).sum(), {"a": a}),
        "relu": (lambda: (ad.relu(a) * w).sum(), {"a": a}),
        "sigmoid": (lambda: (ad.sigmoid(a) * w).sum(), {"a": a}),
        "softplus": (lambda: (ad.softplus(a) * w).sum(), {"a": a}),
        "log": (lambda: (ad.log(c) * w).sum(), {"c": c}),
        "sqrt": (lambda: (ad.sqrt(c) * w).sum(), {"c": c}),
        "clip_interior": (lambda: (ad.clip(a * 0.5, -0.9, 0.9) * w).sum(), {"a": a}),
        "transpose": (lambda: (a.transpose((1, 0)) * Tensor(w.data.T)).sum(), {"a": a}),
        "reshape": (lambda: (a.reshape((4, 3)) * Tensor(w.data.reshape(4, 3))).sum(), {"a": a}),
        "concat": (lambda: (ad.concat([a, b]) * Tensor(np.vstack([w.data, w.data]))).sum(),
                   {"a": a, "b": b}),
        "slice": (lambda: (ad.slice_axis(a, 1, 1, 3) * Tensor(w.data[:, 1:3])).sum(), {"a": a}),
        "gather": (lambda: (ad.gather_rows(a, idx) * Tensor(w.data[idx])).sum(), {"a": a}),
        "sum_axis": (lambda: (a.sum(axis=1) * Tensor(w.data[:, 0])).sum(), {"a": a}),
        "mean_axis_keepdims": (lambda: (a.mean(axis=-1, keepdims=True) * row).sum(),
                               {"a": a, "row": row}),
    }


@pytest.mark.parametrize("seed", range(20))
def test_primitive_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for name, (build, params) in _primitive_cases(rng).items():
        ad.zero_grads(params)
        try:
            check_entrywise(build, params, tol=1e-5)
        except AssertionError as err:
            raise AssertionError(f"{name}: {err}") from None


def test_forward_determinism_bit_identical():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (4, 4))

    def run():
        t = Tensor(x.copy())
        return ad.softmax_rows(ad.matmul(t, t) + t).data.tobytes()

    assert run() == run()

import numpy as np
import pytest

from latentdyn.diffcore import (
    SeededRng,
    ShapeError,
    Tape,
    Tensor,
    concat,
    reparam_sample,
)

from conftest import check_grads


def test_matmul_identity():
    out = Tensor(np.eye(2)) @ Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_projector():
    out = Tensor([[1.0, 0.0], [0.0, 0.0]]) @ Tensor([[5.0], [7.0]])
    np.testing.assert_array_equal(out.data, [[5.0], [0.0]])


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    check_grads(lambda x, y: (x @ y).sum(), [a, b], rtol=1e-6)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
        Tensor(np.zeros((3, 4))) @ Tensor(np.zeros((3, 2)))


def test_elu_values():
    out = Tensor([0.0, -1.0, 2.0]).elu()
    np.testing.assert_allclose(out.data, [0.0, np.exp(-1.0) - 1.0, 2.0],
                               rtol=0, atol=1e-12)


def test_elu_gradient_at_negative_half():
    x = Tensor(np.array([-0.5]), requires_grad=True)
    with Tape() as tape:
        y = x.elu().sum()
    tape.backward(y)
    np.testing.assert_allclose(x.grad, [np.exp(-0.5)], rtol=1e-12)
    check_grads(lambda t: t.elu().sum(), [np.array([-0.5, 0.3, -2.0])], rtol=1e-6)


def test_tanh_sigmoid_values():
    assert Tensor([0.0]).tanh().item() == 0.0
    assert Tensor([0.0]).sigmoid().item() == 0.5


def test_sigmoid_saturates_without_overflow():
    with np.errstate(over="raise"):
        hi = Tensor([1e4]).sigmoid().item()
        lo = Tensor([-1e4]).sigmoid().item()
    assert hi == pytest.approx(1.0, abs=1e-12)
    assert lo == pytest.approx(0.0, abs=1e-12)


def test_tanh_sigmoid_gradients():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(7)
    check_grads(lambda t: t.tanh().sum(), [x], rtol=1e-6)
    check_grads(lambda t: t.sigmoid().sum(), [x], rtol=1e-6)


def test_reparam_degenerate_sigma_returns_mu():
    rng = SeededRng(0, "reparam")
    mu = Tensor([1.0, -2.0, 3.0])
    out = reparam_sample(mu, Tensor([-30.0, -30.0, -30.0]), rng)
    np.testing.assert_allclose(out.data, mu.data, rtol=0, atol=1e-9)


def test_reparam_fixed_seed_is_deterministic():
    mu, ls = Tensor(np.zeros(5)), Tensor(np.zeros(5))
    a = reparam_sample(mu, ls, SeededRng(7, "z")).data
    b = reparam_sample(mu, ls, SeededRng(7, "z")).data
    np.testing.assert_array_equal(a, b)


def test_reparam_monte_carlo_mean():
    n = 100_000
    mu_val, sigma = 0.7, 2.0
    mu = Tensor(np.full(n, mu_val))
    ls = Tensor(np.full(n, np.log(sigma)))
    out = reparam_sample(mu, ls, SeededRng(3, "mc"))
    assert abs(out.data.mean() - mu_val) < 3.0 * sigma / np.sqrt(n)


def test_reparam_gradients_flow_to_mu_and_log_sigma():
    mu = Tensor(np.array([0.5, -0.5]), requires_grad=True)
    ls = Tensor(np.array([0.1, -0.3]), requires_grad=True)
    with Tape() as tape:
        out = reparam_sample(mu, ls, SeededRng(11, "g")).sum()
    tape.backward(out)
    np.testing.assert_allclose(mu.grad, [1.0, 1.0])
    assert np.all(np.isfinite(ls.grad))


def test_pad_appends_zeros():
    out = Tensor([1.0, 2.0]).pad_axis(0, 0, 2)
    np.testing.assert_array_equal(out.data, [1.0, 2.0, 0.0, 0.0])


def test_permute_inverse_roundtrip():
    x = np.arange(24.0).reshape(2, 3, 4)
    out = Tensor(x).permute(2, 0, 1).permute(1, 2, 0)
    np.testing.assert_array_equal(out.data, x)


def test_mean_of_ones():
    out = Tensor(np.ones((3, 4))).mean(axis=1)
    np.testing.assert_array_equal(out.data, np.ones(3))


def test_shape_ops_gradients():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 4))
    check_grads(lambda t: t.permute(1, 0).sum(), [x], rtol=1e-4)
    check_grads(lambda t: t.pad_axis(1, 1, 2).tanh().sum(), [x], rtol=1e-4)
    check_grads(lambda t: t.slice_axis(0, 1, 3).exp().mean(), [x], rtol=1e-4)
    check_grads(lambda t: t.reshape(2, 6).mean(axis=0).sum(), [x], rtol=1e-4)
    check_grads(lambda t: t.mean().tanh(), [x], rtol=1e-4)


def test_elementwise_gradients():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 5)) * 0.5
    y = rng.standard_normal((2, 5)) * 0.5
    b = rng.standard_normal(5)
    check_grads(lambda t, u: (t * u).sum(), [x, y], rtol=1e-4)
    check_grads(lambda t, u: (t - u).exp().mean(), [x, y], rtol=1e-4)
    check_grads(lambda t, u: (t + u).sum(), [x, b], rtol=1e-4)  # bias broadcast
    check_grads(lambda t: (t * 3.0 + 1.5).sigmoid().sum(), [x], rtol=1e-4)
    check_grads(lambda t: (-t).clamp(-0.4, 0.4).sum(), [x], rtol=1e-4)
    check_grads(lambda t: t.mul_const(np.arange(10.0).reshape(2, 5)).sum(),
                [x], rtol=1e-4)


def test_logsumexp_value_and_gradient():
    x = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    out = Tensor(x).logsumexp(axis=1)
    np.testing.assert_allclose(out.data,
                               np.log(np.exp(x).sum(axis=1)), rtol=1e-12)
    rng = np.random.default_rng(4)
    check_grads(lambda t: t.logsumexp(axis=1).sum(),
                [rng.standard_normal((3, 4))], rtol=1e-4)
    # stable at large magnitudes
    big = Tensor(np.array([[1000.0, 1000.0]])).logsumexp(axis=1)
    np.testing.assert_allclose(big.data, [1000.0 + np.log(2.0)], rtol=1e-12)


def test_take_cols_gather_and_scatter_gradient():
    x = np.arange(12.0).reshape(3, 4)
    out = Tensor(x).take_cols([2, 0, 2])
    np.testing.assert_array_equal(out.data, x[:, [2, 0, 2]])
    # repeated index accumulates gradient
    rng = np.random.default_rng(5)
    check_grads(lambda t: t.take_cols([1, 1, 3]).tanh().sum(),
                [rng.standard_normal((2, 4))], rtol=1e-4)


def test_expand_axis_repeats_and_sums_gradient():
    x = np.array([[1.0], [2.0]])
    out = Tensor(x).expand_axis(1, 3)
    np.testing.assert_array_equal(out.data, [[1, 1, 1], [2, 2, 2]])
    check_grads(lambda t: t.expand_axis(1, 3).exp().sum(), [x], rtol=1e-4)


def test_concat_values_and_gradients():
    a = np.ones((2, 2))
    b = np.full((2, 3), 2.0)
    out = concat([Tensor(a), Tensor(b)], axis=1)
    assert out.dims == (2, 5)
    check_grads(lambda t, u: concat([t, u], axis=1).tanh().sum(),
                [a, b], rtol=1e-4)


def test_chain_rule_composition_matches_analytic():
    # f(x) = sum(tanh(x)^2): df/dx = 2 tanh(x) (1 - tanh(x)^2)
    x = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
    with Tape() as tape:
        t = x.tanh()
        loss = (t * t).sum()
    tape.backward(loss)
    th = np.tanh(x.data)
    np.testing.assert_allclose(x.grad, 2.0 * th * (1.0 - th * th),
                               rtol=0, atol=1e-8)


def test_tape_replay_is_bitwise_deterministic():
    def run():
        rng = SeededRng(42, "determinism")
        x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        with Tape() as tape:
            mu = (x @ w).tanh()
            ls = (x @ w) * 0.1
            z = reparam_sample(mu, ls, SeededRng(42, "noise"))
            loss = (z * z).mean()
        tape.backward(loss)
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert np.array_equal(l1, l2)
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)


def test_rng_streams_are_independent():
    a = SeededRng(0, "alpha").standard_normal(4)
    b = SeededRng(0, "beta").standard_normal(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, SeededRng(0, "alpha").standard_normal(4))


def test_tape_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_tape_single_use():
    x = Tensor(np.ones(1), requires_grad=True)
    with Tape() as tape:
        y = x.sum()
    tape.backward(y)
    with pytest.raises(RuntimeError):
        tape.backward(y)


def test_inference_mode_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x.tanh()  # no active tape
    assert y.requires_grad is False
    assert y.grad is None


def test_gradient_accumulates_across_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()  # d/dx x^2 = 2x via product rule
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [4.0])

import numpy as np
import pytest

from conftest import assert_grads_close, finite_diff_grads, random_mlp_loss
from guidedistill import autodiff as ad
from guidedistill.autodiff import NonFiniteValue, ParamStore, Tensor
from guidedistill.optim import Adam, linear_anneal


def test_identity_passthrough():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(ad.astensor(x).data, x)


def test_zero_linear_layer():
    params = ParamStore()
    w = params.add("w", np.zeros((3, 4)))
    x = np.random.default_rng(0).normal(size=(5, 3))
    y = ad.matmul(ad.astensor(x), w)
    assert np.all(y.data == 0.0)


def test_tape_matches_straight_line_reevaluation():
    # same weights, same input: taped forward vs a plain-numpy recompute
    rng = np.random.default_rng(42)
    params = ParamStore()
    w1 = params.add("w1", rng.normal(0, 0.5, (4, 8)))
    b1 = params.add("b1", rng.normal(0, 0.5, 8))
    w2 = params.add("w2", rng.normal(0, 0.5, (8, 3)))
    b2 = params.add("b2", rng.normal(0, 0.5, 3))
    x = rng.normal(size=(6, 4))
    taped = ad.add(ad.matmul(ad.tanh(ad.add(ad.matmul(ad.astensor(x), w1), b1)), w2), b2)
    plain = np.tanh(x @ w1.data + b1.data) @ w2.data + b2.data
    assert np.array_equal(taped.data, plain)


def test_backward_quadratic():
    # loss = 0.5 ||p||^2  ->  grad = p
    params = ParamStore()
    p = params.add("p", [1.0, -2.0, 3.0])
    loss = ad.mul(ad.astensor(0.5), ad.reduce_sum(ad.mul(p, p)))
    ad.backward(loss)
    assert np.allclose(p.grad, p.data, atol=1e-15)


def test_backward_linear():
    # loss = sum(c * p)  ->  grad = c
    params = ParamStore()
    p = params.add("p", [1.0, 2.0])
    c = np.array([3.0, -4.0])
    loss = ad.reduce_sum(ad.mul(ad.astensor(c), p))
    ad.backward(loss)
    assert np.array_equal(p.grad, c)


def test_grad_accumulates_across_uses():
    params = ParamStore()
    p = params.add("p", [2.0])
    loss = ad.add(ad.mul(p, p), ad.mul(ad.astensor(3.0), p))  # p^2 + 3p
    ad.backward(loss)
    assert np.allclose(p.grad, 2.0 * p.data + 3.0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("nonlin", [ad.tanh, ad.silu])
def test_gradcheck_random_networks(seed, nonlin):
    params, loss_fn = random_mlp_loss(seed, nonlin=nonlin)
    params.zero_grad()
    ad.backward(loss_fn())
    numeric = finite_diff_grads(loss_fn, params)
    assert_grads_close({n: t.grad for n, t in params.items()}, numeric)


def test_gradcheck_embedding_and_concat():
    rng = np.random.default_rng(7)
    params = ParamStore()
    table = params.add("table", rng.normal(0, 0.5, (4, 3)))
    w = params.add("w", rng.normal(0, 0.5, (2, 5)))
    idx = np.array([0, 2, 3, 2])
    x = rng.normal(size=(4, 2))

    def loss_fn():
        e = ad.embedding(table, idx)
        h = ad.concat([e, ad.matmul(ad.astensor(x), w)], axis=1)
        return ad.mean(ad.mul(h, h))

    params.zero_grad()
    ad.backward(loss_fn())
    assert_grads_close({n: t.grad for n, t in params.items()},
                       finite_diff_grads(loss_fn, params))


def test_gradcheck_broadcast_row_scale():
    rng = np.random.default_rng(11)
    params = ParamStore()
    p = params.add("p", rng.normal(size=(6, 3)))
    scale = rng.normal(size=(6, 1))

    def loss_fn():
        return ad.mean(ad.mul(ad.astensor(scale), ad.mul(p, p)))

    params.zero_grad()
    ad.backward(loss_fn())
    assert_grads_close({"p": params["p"].grad}, finite_diff_grads(loss_fn, params))


def test_seed_grad_shape_checked():
    p = Tensor(np.zeros((2, 2)))
    y = ad.mul(p, p)
    with pytest.raises(ValueError):
        ad.backward(y, seed_grad=np.ones(3))


def test_matmul_requires_2d():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


def test_param_store_contracts():
    params = ParamStore()
    p = params.add("a", np.zeros((2, 3)))
    with pytest.raises(ValueError):
        params.add("a", np.zeros(1))
    with pytest.raises(ValueError):
        params.load({"a": np.zeros((3, 2))})
    with pytest.raises(KeyError):
        params.load({"a": np.zeros((2, 3)), "ghost": np.zeros(1)})
    ad.backward(ad.mean(ad.mul(p, p)))
    assert p.grad.shape == p.data.shape


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    params = ParamStore()
    p = params.add("p", [1.0, 2.0])
    opt = Adam(params, lr=0.1)
    before = p.data.copy()
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, before)
    assert np.all(opt._m["p"] == 0.0) and np.all(opt._v["p"] == 0.0)
    # seed a moment, then a zero-grad step must shrink it by beta1
    p.grad = np.array([1.0, 1.0])
    opt.step()
    m_after_grad = opt._m["p"].copy()
    p.grad = np.zeros(2)
    opt.step()
    assert np.allclose(opt._m["p"], 0.9 * m_after_grad)


def test_adam_moves_against_constant_gradient():
    params = ParamStore()
    p = params.add("p", [0.0])
    opt = Adam(params, lr=0.01)
    for _ in range(50):
        p.grad = np.array([2.5])
        opt.step()
    assert p.data[0] < -0.3


def test_adam_first_step_magnitude_is_lr():
    # bias-corrected first step: update = lr * g / (|g| + eps) ~= lr * sign(g)
    params = ParamStore()
    p = params.add("p", [0.0, 0.0])
    opt = Adam(params, lr=1e-3)
    p.grad = np.array([0.37, -42.0])
    opt.step()
    assert np.allclose(np.abs(p.data), 1e-3, rtol=1e-6)
    assert p.data[0] < 0 < p.data[1]


def test_adam_rejects_nonfinite_gradient_atomically():
    params = ParamStore()
    p = params.add("p", [1.0])
    q = params.add("q", [2.0])
    opt = Adam(params, lr=0.1)
    p.grad = np.array([np.nan])
    q.grad = np.array([1.0])
    with pytest.raises(NonFiniteValue):
        opt.step()
    assert p.data[0] == 1.0 and q.data[0] == 2.0  # nothing applied


def test_training_determinism_bit_identical():
    def run():
        params, loss_fn = random_mlp_loss(123)
        opt = Adam(params, lr=1e-3)
        for _ in range(20):
            params.zero_grad()
            ad.backward(loss_fn())
            opt.step()
        return params.arrays()

    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_linear_anneal_endpoints():
    assert linear_anneal(1e-4, 0.0, 0, 100) == 1e-4
    assert linear_anneal(1e-4, 0.0, 100, 100) == 0.0
    assert linear_anneal(1e-4, 0.0, 50, 100) == pytest.approx(5e-5)

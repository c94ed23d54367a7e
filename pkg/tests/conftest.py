import numpy as np
import pytest

from guidedistill import autodiff as ad


def finite_diff_grads(loss_fn, params, h=1e-5):
    """Central-difference gradients of loss_fn() w.r.t. every ParamStore entry."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p.data[idx]
            p.data = p.data.copy()
            p.data[idx] = orig + h
            up = float(loss_fn().data)
            p.data = p.data.copy()
            p.data[idx] = orig - h
            down = float(loss_fn().data)
            p.data = p.data.copy()
            p.data[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def assert_grads_close(analytic, numeric, rel=1e-4, abs_floor=1e-8):
    for name, num in numeric.items():
        ana = analytic[name]
        denom = np.maximum(np.maximum(np.abs(num), np.abs(ana)), abs_floor)
        worst = np.max(np.abs(ana - num) / denom)
        assert worst < rel, f"{name}: rel err {worst:.3e}"


def random_mlp_loss(seed, n_in=3, n_hidden=5, n_out=2, batch=4, nonlin=ad.tanh):
    """A random 2-layer net + quadratic loss for gradient checks."""
    rng = np.random.default_rng(seed)
    params = ad.ParamStore()
    w1 = params.add("w1", rng.normal(0.0, 0.6, (n_in, n_hidden)))
    b1 = params.add("b1", rng.normal(0.0, 0.3, n_hidden))
    w2 = params.add("w2", rng.normal(0.0, 0.6, (n_hidden, n_out)))
    b2 = params.add("b2", rng.normal(0.0, 0.3, n_out))
    x = rng.normal(0.0, 1.0, (batch, n_in))
    target = rng.normal(0.0, 1.0, (batch, n_out))

    def loss_fn():
        h = nonlin(ad.add(ad.matmul(ad.astensor(x), w1), b1))
        y = ad.add(ad.matmul(h, w2), b2)
        d = ad.sub(y, ad.astensor(target))
        return ad.mean(ad.mul(d, d))

    return params, loss_fn


@pytest.fixture(scope="session")
def schedule():
    from guidedistill import make_schedule

    return make_schedule("cosine-vp")

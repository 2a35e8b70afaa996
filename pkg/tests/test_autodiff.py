import numpy as np
import pytest

from causalgen.nncore import autodiff as ad
from causalgen.nncore.autodiff import (
    NonFiniteLossError,
    Tensor,
    finite_diff_gradient,
    gradient,
    value_and_grad,
)
from causalgen.nncore.params import ParamStore


def store(**arrays):
    return ParamStore({k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})


def test_quadratic_gradient_is_exact():
    params = store(p=[1.0, -2.0, 3.5])
    grads = gradient(lambda pt: ad.tsum(ad.mul(pt["p"], pt["p"])), params)
    assert np.array_equal(grads["p"], 2.0 * params["p"])


def test_constant_loss_has_zero_gradient():
    params = store(p=[1.0, 2.0])
    grads = gradient(lambda pt: Tensor(3.0), params)
    assert np.all(grads["p"] == 0.0)


def test_non_finite_loss_raises():
    params = store(p=[1.0])
    with pytest.raises(NonFiniteLossError):
        gradient(lambda pt: ad.log(ad.mul(pt["p"], 0.0)), params)


def test_value_and_grad_returns_aux():
    params = store(p=[2.0])
    def loss(pt):
        return ad.tsum(ad.mul(pt["p"], pt["p"])), {"tag": 7}
    value, aux, grads = value_and_grad(loss, params)
    assert value == pytest.approx(4.0)
    assert aux == {"tag": 7}
    assert grads["p"][0] == pytest.approx(4.0)


def random_case(rng, shape_a, shape_b=None):
    a = rng.standard_normal(shape_a)
    b = rng.standard_normal(shape_b) if shape_b else None
    return a, b


OPS = {
    "add_broadcast": lambda pt: ad.tsum(ad.mul(ad.add(pt["a"], pt["b"]), 0.7)),
    "sub": lambda pt: ad.tsum(ad.sub(pt["a"], pt["b"])),
    "mul": lambda pt: ad.tsum(ad.mul(pt["a"], pt["b"])),
    "exp": lambda pt: ad.tsum(ad.exp(ad.mul(pt["a"], 0.3))),
    "log": lambda pt: ad.tsum(ad.log(ad.add(ad.mul(pt["a"], pt["a"]), 1.0))),
    "tanh": lambda pt: ad.tsum(ad.tanh(pt["a"])),
    "sigmoid": lambda pt: ad.tsum(ad.sigmoid(pt["a"])),
    "abs": lambda pt: ad.tsum(ad.absolute(pt["a"])),
    "sum_axis": lambda pt: ad.tsum(ad.mul(ad.tsum(pt["a"], axis=0), 2.0)),
    "mean": lambda pt: ad.mean(pt["a"]),
    "getitem": lambda pt: ad.tsum(pt["a"][1:, :2]),
    "reshape": lambda pt: ad.tsum(ad.mul(ad.reshape(pt["a"], (6, 2)), 1.5)),
    "transpose": lambda pt: ad.tsum(ad.mul(ad.transpose(pt["a"], (1, 0)), 3.0)),
    "clip": lambda pt: ad.tsum(ad.clip(pt["a"], -0.5, 0.5)),
    "concat": lambda pt: ad.tsum(ad.concat([pt["a"], pt["a"]], axis=1)),
    "stack": lambda pt: ad.tsum(ad.stack([pt["a"], pt["a"]], axis=0)),
    "scale_shift": lambda pt: ad.tsum(
        ad.scale_shift(pt["a"], ad.mul(pt["a"], 0.2), ad.mul(pt["a"], -0.1))
    ),
    "scale_shift_inverse": lambda pt: ad.tsum(
        ad.scale_shift_inverse(pt["a"], ad.mul(pt["a"], 0.2), ad.mul(pt["a"], -0.1))
    ),
    "std_normal_logpdf": lambda pt: ad.tsum(ad.standard_normal_log_density(pt["a"])),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name, rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal(4)
    params = store(a=a, b=b)
    loss = OPS[name]
    grads = gradient(loss, params)
    approx = finite_diff_gradient(loss, params, 1e-6)
    for key in params.names():
        assert np.allclose(grads[key], approx[key], rtol=1e-5, atol=1e-7), key


def test_matmul_gradients_2d_and_batched(rng):
    params = store(a=rng.standard_normal((3, 4)), w=rng.standard_normal((4, 2)))
    loss = lambda pt: ad.tsum(ad.matmul(pt["a"], pt["w"]))
    grads = gradient(loss, params)
    approx = finite_diff_gradient(loss, params, 1e-6)
    for key in params.names():
        assert np.allclose(grads[key], approx[key], rtol=1e-6, atol=1e-8)

    params = store(a=rng.standard_normal((5, 3, 4)), w=rng.standard_normal((5, 4, 2)))
    loss = lambda pt: ad.tsum(ad.matmul(pt["a"], pt["w"]))
    grads = gradient(loss, params)
    approx = finite_diff_gradient(loss, params, 1e-6)
    for key in params.names():
        assert np.allclose(grads[key], approx[key], rtol=1e-6, atol=1e-8)


def test_matmul_bias_gradients(rng):
    params = store(
        a=rng.standard_normal((6, 3)), w=rng.standard_normal((3, 5)),
        b=rng.standard_normal(5),
    )
    loss = lambda pt: ad.tsum(ad.tanh(ad.matmul_bias(pt["a"], pt["w"], pt["b"])))
    grads = gradient(loss, params)
    approx = finite_diff_gradient(loss, params, 1e-6)
    for key in params.names():
        assert np.allclose(grads[key], approx[key], rtol=1e-5, atol=1e-8)


def test_gaussian_log_density_values_and_gradients(rng):
    # standard normal at its mode, one dimension
    x = Tensor(np.zeros((1, 1)))
    value = ad.gaussian_log_density(x, Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 1))))
    assert value.data[0] == pytest.approx(-0.5 * np.log(2 * np.pi))
    # one unit away adds -0.5
    value = ad.gaussian_log_density(
        Tensor(np.ones((1, 1))), Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 1)))
    )
    assert value.data[0] == pytest.approx(-0.5 * np.log(2 * np.pi) - 0.5)
    # additivity across dimensions
    xs = rng.standard_normal((4, 2))
    mu = rng.standard_normal((4, 2))
    lv = rng.standard_normal((4, 2))
    joint = ad.gaussian_log_density(Tensor(xs), Tensor(mu), Tensor(lv)).data
    split = sum(
        ad.gaussian_log_density(
            Tensor(xs[:, j : j + 1]), Tensor(mu[:, j : j + 1]), Tensor(lv[:, j : j + 1])
        ).data
        for j in range(2)
    )
    assert np.allclose(joint, split)

    params = store(x=xs, mu=mu, lv=lv)
    loss = lambda pt: ad.tsum(ad.gaussian_log_density(pt["x"], pt["mu"], pt["lv"]))
    grads = gradient(loss, params)
    approx = finite_diff_gradient(loss, params, 1e-6)
    for key in params.names():
        assert np.allclose(grads[key], approx[key], rtol=1e-5, atol=1e-8)


def test_repeated_use_of_same_tensor_accumulates(rng):
    params = store(a=rng.standard_normal((3,)))
    loss = lambda pt: ad.tsum(ad.add(ad.mul(pt["a"], 2.0), pt["a"]))
    grads = gradient(loss, params)
    assert np.allclose(grads["a"], 3.0)


def test_gradient_does_not_alias_shared_buffers(rng):
    # both parents of an add receive the same upstream array; the second
    # accumulation must not corrupt the first
    params = store(a=rng.standard_normal((4,)), b=rng.standard_normal((4,)))
    def loss(pt):
        s = ad.add(pt["a"], pt["b"])
        return ad.tsum(ad.add(s, ad.mul(pt["a"], 1.0)))
    grads = gradient(loss, params)
    assert np.allclose(grads["a"], 2.0)
    assert np.allclose(grads["b"], 1.0)


def test_backward_requires_scalar_root(rng):
    t = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.mul(t, 2.0).backward()

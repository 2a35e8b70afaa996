import numpy as np
import pytest

from causalgen.nncore import autodiff as ad
from causalgen.nncore import backend, layers
from causalgen.nncore.autodiff import Tensor, finite_diff_gradient, gradient
from causalgen.nncore.optim import AdamConfig, OptimizerState, adam_step
from causalgen.nncore.params import GradStore, ParamStore


def as_store(**arrays):
    return ParamStore({k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})


def rel_err(a, b):
    return (np.abs(a - b) / np.maximum(np.abs(b), 1e-8)).max()


# -- dense ---------------------------------------------------------------

def test_dense_zero_parameters_give_zero(kernel_backend):
    x = Tensor(np.ones((3, 4)))
    out = layers.dense(x, Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)), "tanh")
    assert np.all(out.data == 0.0)


def test_dense_identity_passthrough(kernel_backend):
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = layers.dense(x, Tensor(np.eye(3)), Tensor(np.zeros(3)), "identity")
    assert np.array_equal(out.data, x.data)


def test_dense_hand_example(kernel_backend):
    out = layers.dense(
        Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([0.5]), "identity"
    )
    assert out.data[0, 0] == pytest.approx(3.5)


def test_dense_shape_mismatch_raises(kernel_backend):
    with pytest.raises(ValueError, match="width"):
        layers.dense(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.zeros(2)))


def test_dense_zero_width_input(kernel_backend):
    # bias-only affine map: the degenerate case used by unconditioned flows
    out = layers.dense(
        Tensor(np.zeros((5, 0))), Tensor(np.zeros((0, 3))), Tensor([1.0, 2.0, 3.0]),
        "identity",
    )
    assert np.array_equal(out.data, np.tile([1.0, 2.0, 3.0], (5, 1)))


def test_dense_stack_gradient(kernel_backend, rng):
    params = as_store(
        w1=layers.uniform_fan_in(rng, 3, 8), b1=np.zeros(8),
        w2=layers.uniform_fan_in(rng, 8, 2), b2=np.zeros(2),
    )
    x = rng.standard_normal((5, 3))

    def loss(pt):
        hidden = layers.dense(Tensor(x), pt["w1"], pt["b1"], "tanh")
        out = layers.dense(hidden, pt["w2"], pt["b2"], "identity")
        return ad.tsum(ad.mul(out, out))

    grads = gradient(loss, params)
    approx = finite_diff_gradient(loss, params, 1e-5)
    for key in params.names():
        assert rel_err(grads[key], approx[key]) <= 1e-4


# -- GRU -----------------------------------------------------------------

def gru_params(rng, in_width, width, scale=1.0):
    def mat(rows, cols):
        return scale * layers.uniform_fan_in(rng, rows, cols)

    return as_store(
        w_z=mat(in_width, width), u_z=mat(width, width), b_z=np.zeros(width),
        w_r=mat(in_width, width), u_r=mat(width, width), b_r=np.zeros(width),
        w_h=mat(in_width, width), u_h=mat(width, width), b_h=np.zeros(width),
    )


def run_gru_step(pt, x, h):
    return layers.gru_step(
        x, h,
        pt["w_z"], pt["u_z"], pt["b_z"],
        pt["w_r"], pt["u_r"], pt["b_r"],
        pt["w_h"], pt["u_h"], pt["b_h"],
    )


def test_gru_zero_parameters_halve_state(kernel_backend, rng):
    params = {k: Tensor(np.zeros_like(v)) for k, v in gru_params(rng, 3, 4).items()}
    h = rng.standard_normal((2, 4))
    out = run_gru_step(params, Tensor(rng.standard_normal((2, 3))), Tensor(h))
    assert np.allclose(out.data, 0.5 * h)


def test_gru_zero_state_zero_parameters_fixed_point(kernel_backend, rng):
    params = {k: Tensor(np.zeros_like(v)) for k, v in gru_params(rng, 3, 4).items()}
    out = run_gru_step(
        params, Tensor(rng.standard_normal((2, 3))), Tensor(np.zeros((2, 4)))
    )
    assert np.all(out.data == 0.0)


def test_gru_saturated_update_gate_forgets_state(kernel_backend, rng):
    # z ~ 1 and a zero candidate wipe the previous state
    params = {k: Tensor(np.zeros((1, 1)) if v.ndim == 2 else np.zeros(1))
              for k, v in gru_params(rng, 1, 1).items()}
    params["b_z"] = Tensor(np.full(1, 40.0))
    for h0 in (-3.0, 0.5, 9.0):
        out = run_gru_step(params, Tensor([[0.7]]), Tensor([[h0]]))
        assert abs(out.data[0, 0]) < 1e-15


def test_gru_unroll_gradient(kernel_backend, rng):
    params = gru_params(rng, 3, 5)
    xs = rng.standard_normal((5, 4, 3))  # five steps, batch of four

    def loss(pt):
        h = Tensor(np.zeros((4, 5)))
        for t in range(5):
            h = run_gru_step(pt, Tensor(xs[t]), h)
        return ad.tsum(ad.mul(h, h))

    grads = gradient(loss, params)
    approx = finite_diff_gradient(loss, params, 1e-5)
    for key in params.names():
        assert rel_err(grads[key], approx[key]) <= 1e-4, key


def test_gru_core_matches_gru_step(kernel_backend, rng):
    pt = gru_params(rng, 3, 4)
    tensors = {k: Tensor(v) for k, v in pt.items()}
    x, h = Tensor(rng.standard_normal((6, 3))), Tensor(rng.standard_normal((6, 4)))
    via_step = run_gru_step(tensors, x, h)
    ax = np.concatenate(
        [x.data @ pt["w_z"] , x.data @ pt["w_r"], x.data @ pt["w_h"]], axis=-1
    )
    via_core = layers.gru_core(
        Tensor(ax), h, tensors["u_z"], tensors["u_r"], tensors["u_h"]
    )
    assert np.allclose(via_step.data, via_core.data, atol=1e-14)


# -- couplings -----------------------------------------------------------

def coupling_params(rng, in_width, hidden, out_half, zero_out=True):
    w2 = np.zeros((hidden, 2 * out_half)) if zero_out else layers.uniform_fan_in(
        rng, hidden, 2 * out_half
    )
    return (
        Tensor(layers.uniform_fan_in(rng, in_width, hidden)),
        Tensor(np.zeros(hidden)),
        Tensor(w2),
        Tensor(np.zeros(2 * out_half)),
    )


def test_identity_coupling(kernel_backend, rng):
    w1, b1, w2, b2 = coupling_params(rng, 1, 6, 1)
    u = Tensor(rng.standard_normal((7, 2)))
    v, log_det = layers.coupling_forward(u, None, w1, b1, w2, b2)
    assert np.array_equal(v.data, u.data)
    assert np.all(log_det.data == 0.0)


def test_translation_coupling(kernel_backend, rng):
    w1, b1, w2, b2 = coupling_params(rng, 1, 6, 1)
    b2 = Tensor(np.array([0.0, 2.5]))  # scale head 0, shift head 2.5
    u = Tensor(rng.standard_normal((7, 2)))
    v, log_det = layers.coupling_forward(u, None, w1, b1, w2, b2)
    assert np.allclose(v.data[:, 0], u.data[:, 0])
    assert np.allclose(v.data[:, 1], u.data[:, 1] + 2.5)
    assert np.all(log_det.data == 0.0)


def test_constant_log2_scale_coupling(kernel_backend, rng):
    w1, b1, w2, b2 = coupling_params(rng, 1, 6, 1)
    b2 = Tensor(np.array([np.log(2.0), 0.7]))
    u = Tensor(rng.standard_normal((7, 2)))
    v, log_det = layers.coupling_forward(u, None, w1, b1, w2, b2)
    assert np.allclose(v.data[:, 1], 2.0 * u.data[:, 1] + 0.7)
    assert np.allclose(log_det.data, np.log(2.0))


def test_coupling_inverse_round_trip(kernel_backend, rng):
    for dim, flip in ((2, False), (2, True), (1, False), (3, True)):
        in_width = layers._coupling_split(dim, flip)[0].stop - layers._coupling_split(dim, flip)[0].start
        out_half = dim - in_width
        w1, b1, w2, b2 = coupling_params(rng, max(in_width, 0) + 3, 6, out_half, zero_out=False)
        cond = Tensor(rng.standard_normal((9, 3)))
        u = Tensor(rng.standard_normal((9, dim)))
        v, ld_f = layers.coupling_forward(u, cond, w1, b1, w2, b2, flip=flip)
        back, ld_i = layers.coupling_inverse(v, cond, w1, b1, w2, b2, flip=flip)
        assert np.abs(back.data - u.data).max() <= 1e-10
        assert np.abs(ld_f.data + ld_i.data).max() <= 1e-12


def test_coupling_log_det_matches_numeric_jacobian(kernel_backend, rng):
    w1, b1, w2, b2 = coupling_params(rng, 1, 8, 1, zero_out=False)
    h = 1e-6
    for _ in range(5):
        u0 = rng.standard_normal(2)
        v0, log_det = layers.coupling_forward(Tensor(u0[None]), None, w1, b1, w2, b2)
        jac = np.zeros((2, 2))
        for j in range(2):
            up, down = u0.copy(), u0.copy()
            up[j] += h
            down[j] -= h
            vp, _ = layers.coupling_forward(Tensor(up[None]), None, w1, b1, w2, b2)
            vm, _ = layers.coupling_forward(Tensor(down[None]), None, w1, b1, w2, b2)
            jac[:, j] = (vp.data[0] - vm.data[0]) / (2 * h)
        _, numeric = np.linalg.slogdet(jac)
        assert abs(numeric - log_det.data[0]) <= 1e-6


def test_coupling_stack_gradient(kernel_backend, rng):
    params = as_store(
        w1=layers.uniform_fan_in(rng, 1, 5), b1=np.zeros(5),
        w2=layers.uniform_fan_in(rng, 5, 2), b2=np.zeros(2),
        v1=layers.uniform_fan_in(rng, 1, 5), c1=np.zeros(5),
        v2=layers.uniform_fan_in(rng, 5, 2), c2=np.zeros(2),
    )
    u = rng.standard_normal((6, 2))

    def loss(pt):
        z, ld1 = layers.coupling_forward(Tensor(u), None, pt["w1"], pt["b1"], pt["w2"], pt["b2"])
        z, ld2 = layers.coupling_forward(z, None, pt["v1"], pt["c1"], pt["v2"], pt["c2"], flip=True)
        return ad.add(ad.tsum(ad.mul(z, z)), ad.tsum(ad.add(ld1, ld2)))

    grads = gradient(loss, params)
    approx = finite_diff_gradient(loss, params, 1e-5)
    for key in params.names():
        assert rel_err(grads[key], approx[key]) <= 1e-4, key


# -- Adam ----------------------------------------------------------------

def test_adam_zero_gradient_keeps_parameters():
    params = as_store(p=[1.0, -2.0])
    state = OptimizerState.initialize(params)
    grads = GradStore.zeros_for(params)
    params, state = adam_step(state, params, grads)
    assert np.array_equal(params["p"], [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_magnitude_is_learning_rate():
    config = AdamConfig(learning_rate=1e-3)
    for g in (4.2, -0.3, 1e-6):
        params = as_store(p=[0.0])
        state = OptimizerState.initialize(params, config)
        grads = GradStore({"p": np.array([g])})
        params, _ = adam_step(state, params, grads)
        # bias-corrected first step: lr * g / (|g| + eps)
        expected = config.learning_rate * g / (abs(g) + config.eps)
        assert params["p"][0] == pytest.approx(-expected, rel=1e-9)


def test_adam_is_deterministic():
    def run():
        params = as_store(p=np.array([1.0, 2.0]))
        state = OptimizerState.initialize(params)
        for step in range(5):
            grads = GradStore({"p": np.array([0.1 * (step + 1), -0.2])})
            params, state = adam_step(state, params, grads)
        return params["p"].copy()

    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite_gradients():
    params = as_store(p=[1.0])
    state = OptimizerState.initialize(params)
    grads = GradStore({"p": np.array([np.inf])})
    with pytest.raises(ValueError, match="non-finite"):
        adam_step(state, params, grads)
    assert params["p"][0] == 1.0 and state.step == 0


def test_adam_congruence_check():
    params = as_store(p=[1.0])
    state = OptimizerState.initialize(params)
    with pytest.raises(ValueError, match="names"):
        adam_step(state, params, GradStore({"q": np.array([1.0])}))


# -- stores ----------------------------------------------------------------

def test_param_store_rejects_duplicates_and_shape_changes():
    params = as_store(p=[1.0])
    with pytest.raises(KeyError):
        params.add("p", [2.0])
    with pytest.raises(ValueError, match="shape"):
        params["p"] = np.zeros(3)
    with pytest.raises(KeyError):
        params["new"] = np.zeros(1)


def test_param_store_vector_round_trip(rng):
    params = as_store(a=rng.standard_normal((2, 3)), b=rng.standard_normal(4))
    vec = params.to_vector()
    clone = params.copy()
    clone.from_vector(np.zeros_like(vec))
    assert np.all(clone.to_vector() == 0.0)
    clone.from_vector(vec)
    for key in params.names():
        assert np.array_equal(clone[key], params[key])


def test_param_store_rejects_non_finite():
    with pytest.raises(ValueError, match="finite"):
        as_store(p=[np.nan])


# -- backend parity --------------------------------------------------------

@pytest.mark.skipif(
    "compiled" not in backend.available_backends(), reason="compiled kernels absent"
)
def test_backends_agree_bitwise_close(rng):
    from causalgen.nncore import _kernels as compiled
    from causalgen.nncore import kernels_numpy as reference

    for m, k, n in ((4, 3, 5), (64, 17, 9), (3, 0, 4)):
        x = rng.standard_normal((m, k))
        w = rng.standard_normal((k, n))
        b = rng.standard_normal(n)
        for act in (0, 1):
            ya = reference.dense_forward(x, w, b, act)
            yb = compiled.dense_forward(x, w, b, act)
            assert np.allclose(ya, yb, atol=1e-13)
            dy = rng.standard_normal((m, n))
            for ga, gb in zip(
                reference.dense_backward(x, w, ya, dy, act),
                compiled.dense_backward(x, w, yb, dy, act),
            ):
                assert np.allclose(ga, gb, atol=1e-12)

    for m, width in ((5, 3), (64, 16)):
        ax = 3.0 * rng.standard_normal((m, 3 * width))
        h = rng.standard_normal((m, width))
        us = [rng.standard_normal((width, width)) for _ in range(3)]
        fa = reference.gru_step_forward(ax, h, *us)
        fb = compiled.gru_step_forward(ax, h, *us)
        for a, b_ in zip(fa, fb):
            assert np.allclose(a, b_, atol=1e-13)
        g = rng.standard_normal((m, width))
        for a, b_ in zip(
            reference.gru_step_backward(h, *us, fa[1], fa[2], fa[3], g),
            compiled.gru_step_backward(h, *us, fb[1], fb[2], fb[3], g),
        ):
            assert np.allclose(a, b_, atol=1e-12)


def test_active_backend_reports_name():
    assert backend.active_backend() in ("numpy", "compiled")
    with backend.use_backend("numpy"):
        assert backend.active_backend() == "numpy"

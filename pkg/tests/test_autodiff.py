import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from twostepda import autodiff as ad
from twostepda.errors import ConfigError, DimensionError, NumericError, UsageError
from twostepda.gradcheck import check_inputs, check_params


def test_identity_kernel_conv_is_identity(rng):
    x = rng.normal(size=(3, 6, 5)).astype(np.float32)
    w = np.zeros((3, 3, 3, 3), dtype=np.float32)
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = ad.conv2d(x, w, np.zeros(3, dtype=np.float32))
    np.testing.assert_array_equal(out.data, x)


def test_softmax_of_zero_logits_is_uniform():
    out = ad.softmax(np.zeros((4, 3, 3)), axis=0)
    np.testing.assert_allclose(out.data, 0.25, atol=1e-7)


def test_relu_definition():
    np.testing.assert_array_equal(ad.relu([-1.0, 0.0, 2.0]).data, [0, 0, 2])


def test_conv_matches_direct_loop(rng):
    x = rng.normal(size=(2, 2, 5, 6)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    for stride in (1, 2):
        out = ad.conv2d(x, w, b, stride=stride).data
        pad = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1))).astype(np.float64)
        ho, wo = out.shape[2:]
        ref = np.zeros(out.shape)
        for n in range(2):
            for o in range(3):
                for i in range(ho):
                    for j in range(wo):
                        patch = pad[n, :, i * stride:i * stride + 3, j * stride:j * stride + 3]
                        ref[n, o, i, j] = (patch * w[o]).sum() + b[o]
        np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-5)


def test_linear_case_gradient(rng):
    x = rng.normal(size=(4, 3)).astype(np.float32)
    ps = ad.ParameterSet({"w": rng.normal(size=(4, 3))})
    ad.backward(ad.sum(ad.mul(ps["w"], x)))
    np.testing.assert_array_equal(ps["w"].grad, x)


def test_dead_relu_gets_zero_gradient():
    ps = ad.ParameterSet({"w": -np.ones((2, 3))})
    ad.backward(ad.mean(ad.relu(ps["w"])))
    np.testing.assert_array_equal(ps["w"].grad, 0)


def test_unused_parameter_gets_zero_gradient():
    ps = ad.ParameterSet({"a": np.ones(3), "b": np.ones(3)})
    ad.backward(ad.sum(ps["a"]))
    np.testing.assert_array_equal(ps["b"].grad, 0)


def test_backward_on_untaped_tensor_is_usage_error():
    with pytest.raises(UsageError):
        ad.backward(ad.Tensor(3.0))


def test_non_finite_input_rejected():
    with pytest.raises(NumericError):
        ad.Tensor([1.0, np.nan])
    with pytest.raises(NumericError):
        ad.relu(np.array([np.inf]))


def test_shape_mismatch_is_dimension_error():
    with pytest.raises(DimensionError):
        ad.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(DimensionError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        ad.conv2d(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)))


def test_random_two_layer_network_matches_finite_differences(f64):
    rng = np.random.default_rng(5)
    ps = ad.ParameterSet({
        "w1": rng.normal(size=(4, 8)) * 0.5, "b1": rng.normal(size=8) * 0.1,
        "w2": rng.normal(size=(8, 3)) * 0.5, "b2": rng.normal(size=3) * 0.1,
    })
    assert ps.count() <= 200
    x = rng.normal(size=(6, 4))

    def loss():
        h = ad.relu(ad.dense(x, ps["w1"], ps["b1"]))
        return ad.mean(ad.log(ad.softmax(ad.dense(h, ps["w2"], ps["b2"]), axis=1), 1e-7))

    res = check_params(loss, ps)
    assert res.max_error < 1e-3


OPS = {
    "add": (lambda a, b: ad.add(a, b), [(2, 3), (3,)]),
    "multiply": (lambda a, b: ad.mul(a, b), [(2, 3), (2, 3)]),
    "matmul": (lambda a, b: ad.matmul(a, b), [(2, 3), (3, 4)]),
    "conv2d-s1": (lambda x, w, b: ad.conv2d(x, w, b), [(2, 4, 5), (3, 2, 3, 3), (3,)]),
    "conv2d-s2": (lambda x, w, b: ad.conv2d(x, w, b, stride=2), [(1, 2, 5, 4), (2, 2, 3, 3), (2,)]),
    "relu": (ad.relu, [(3, 4)]),
    "leaky-relu": (ad.leaky_relu, [(3, 4)]),
    "softmax": (lambda x: ad.softmax(x, axis=0), [(4, 2, 3)]),
    "sigmoid": (ad.sigmoid, [(3, 4)]),
    "upsample": (ad.upsample2x, [(2, 3, 2)]),
    "sum": (lambda x: ad.sum(x, axis=1), [(3, 4)]),
    "mean": (lambda x: ad.mean(x), [(3, 4)]),
    "log": (lambda x: ad.log(ad.mul(x, x), 1e-7), [(3, 3)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), [(2, 2), (2, 3)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_passes_gradient_check(name, f64):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    arrays = [rng.normal(size=s) for s in shapes]
    res = check_inputs(fn, *arrays)
    assert res.max_error < 1e-3, (name, res.max_error)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, st.tuples(st.integers(2, 6), st.integers(1, 4), st.integers(1, 4)),
                  elements=st.floats(-30, 30, width=32)))
def test_softmax_rows_are_distributions(x):
    p = ad.softmax(x, axis=0).data
    assert (p >= 0).all() and (p <= 1).all()
    np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-6)


def test_sgd_examples():
    ps = ad.ParameterSet({"p": np.array([1.0])})
    ps["p"].grad = np.zeros(1, dtype=np.float32)
    ad.sgd_step(ps, 0.1)
    assert ps["p"].data[0] == 1.0

    ps = ad.ParameterSet({"p": np.array([0.0])})
    ps["p"].grad = np.array([2.0], dtype=np.float32)
    ad.sgd_step(ps, 0.1)
    assert ps["p"].data[0] == pytest.approx(-0.2)
    np.testing.assert_array_equal(ps["p"].grad, 0)  # cleared

    ps = ad.ParameterSet({"p": np.array([1.0])})
    ad.sgd_step(ps, 0.1, weight_decay=0.5)
    assert ps["p"].data[0] == pytest.approx(0.95)


def test_sgd_momentum_accumulates():
    ps = ad.ParameterSet({"p": np.array([0.0])})
    for _ in range(2):
        ps["p"].grad = np.array([1.0], dtype=np.float32)
        ad.sgd_step(ps, 0.1, momentum=0.9)
    # steps of 0.1 then 0.1 * (0.9 + 1)
    assert ps["p"].data[0] == pytest.approx(-0.29)


def test_optimizer_config_errors():
    ps = ad.ParameterSet({"p": np.array([0.0])})
    with pytest.raises(ConfigError):
        ad.sgd_step(ps, 0.0)
    with pytest.raises(ConfigError):
        ad.adam_step(ps, 1e-3, eps=0.0)


def test_adam_zero_gradient_leaves_parameters():
    ps = ad.ParameterSet({"p": np.array([0.3, -1.0])})
    for _ in range(3):
        ad.adam_step(ps, 1e-2)
    np.testing.assert_array_equal(ps["p"].data, np.float32([0.3, -1.0]))


@pytest.mark.parametrize("g", [0.5, -3.0, 1e-3])
def test_adam_first_step_closed_form(g):
    lr, eps = 1e-2, 1e-8
    ps = ad.ParameterSet({"p": np.array([0.0])})
    with ad.precision(np.float64):
        ps = ad.ParameterSet({"p": np.array([0.0])})
        ps["p"].grad = np.array([g])
        ad.adam_step(ps, lr, eps=eps)
    assert abs(ps["p"].data[0]) == pytest.approx(lr * abs(g) / (abs(g) + eps), rel=1e-12)


def test_adam_second_step_not_larger():
    ps = ad.ParameterSet({"p": np.array([0.0])})
    steps = []
    for _ in range(2):
        before = ps["p"].data.copy()
        ps["p"].grad = np.array([0.7], dtype=np.float32)
        ad.adam_step(ps, 1e-3, 0.9, 0.999)
        steps.append(abs(float(ps["p"].data[0] - before[0])))
    assert steps[1] <= steps[0] + 1e-7


def test_training_is_deterministic():
    def run():
        rng = np.random.default_rng(42)
        ps = ad.ParameterSet({"w": ad.kaiming_uniform(rng, (2, 3, 3, 3), 27),
                              "b": np.zeros(2, np.float32)})
        x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
        for _ in range(5):
            loss = ad.mean(ad.sigmoid(ad.conv2d(x, ps["w"], ps["b"])))
            ad.backward(loss)
            ad.sgd_step(ps, 0.1, 0.9, 1e-4)
        return ps.arrays()

    a, b = run(), run()
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_no_grad_builds_no_graph():
    ps = ad.ParameterSet({"w": np.ones(3)})
    with ad.no_grad():
        out = ad.sum(ad.mul(ps["w"], 2.0))
    assert not out.requires_grad
    with pytest.raises(UsageError):
        ad.backward(out)

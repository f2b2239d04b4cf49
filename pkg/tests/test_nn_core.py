import numpy as np
import pytest

from ctxadapt.nn_core import (
    GraphError,
    MlpSpec,
    NonFiniteError,
    ParamStore,
    ShapeError,
    Tensor,
    adam_step,
    backward,
    concat,
    finite_difference_check,
    init_mlp,
    linear,
    load_params,
    log,
    minimum,
    mlp_forward,
    no_grad,
    reduce_mean,
    reduce_sum,
    save_params,
    soft_update,
    square,
    tanh,
)


def _store(**values):
    params = ParamStore()
    for name, value in values.items():
        params.add(name, value)
    return params


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_mlp_gradients_match_finite_differences(activation):
    rng = np.random.default_rng(7)
    spec = MlpSpec(3, (4,), 2, activation=activation, final_activation="tanh")
    params = ParamStore()
    init_mlp(spec, params, "mlp", rng)
    x = rng.normal(size=(5, 3))
    weights = rng.normal(size=(5, 2))

    def loss():
        out = mlp_forward(spec, params, x, "mlp")
        return reduce_sum(out * weights) + 0.5 * reduce_mean(square(out))

    assert finite_difference_check(loss, params) < 1e-4


def test_shape_ops_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    params = _store(a=rng.normal(size=(3, 4)), b=rng.normal(size=(4,)), c=rng.normal(size=(3, 2)))

    def loss():
        a, b, c = params.leaf("a"), params.leaf("b"), params.leaf("c")
        joined = concat([tanh(a + b), c], axis=1)
        picked = joined[[0, 0, 2]]
        return reduce_sum(square(picked)) - reduce_mean(minimum(a, 0.1 * b))

    assert finite_difference_check(loss, params) < 1e-4


def test_broadcast_bias_gradient_is_summed_over_batch():
    params = _store(w=np.eye(2), b=np.zeros(2))
    x = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    backward(reduce_sum(linear(x, params.leaf("w"), params.leaf("b"))))
    np.testing.assert_allclose(params.entries["b"].grad, [3.0, 3.0])
    np.testing.assert_allclose(params.entries["w"].grad, [[9.0, 12.0], [9.0, 12.0]])


def test_repeated_indices_accumulate_gradient():
    params = _store(x=np.array([1.0, 2.0, 3.0]))
    backward(reduce_sum(params.leaf("x")[[0, 0, 1]]))
    np.testing.assert_array_equal(params.entries["x"].grad, [2.0, 1.0, 0.0])


def test_minimum_routes_ties_to_first_argument():
    params = _store(a=np.array([1.0, 2.0]), b=np.array([1.0, 0.0]))
    backward(reduce_sum(minimum(params.leaf("a"), params.leaf("b"))))
    np.testing.assert_array_equal(params.entries["a"].grad, [1.0, 0.0])
    np.testing.assert_array_equal(params.entries["b"].grad, [0.0, 1.0])


def test_ndarray_on_the_left_yields_tensor():
    params = _store(x=np.array([1.0, 2.0]))
    out = np.array([3.0, 4.0]) * params.leaf("x")
    assert isinstance(out, Tensor)
    backward(reduce_sum(out))
    np.testing.assert_array_equal(params.entries["x"].grad, [3.0, 4.0])


def test_no_grad_records_nothing():
    params = _store(x=np.ones(3))
    with no_grad():
        loss = reduce_sum(square(params.leaf("x")))
    assert not loss.requires_grad
    with pytest.raises(GraphError):
        backward(loss)


def test_backward_needs_a_scalar():
    params = _store(x=np.ones(3))
    with pytest.raises(GraphError):
        backward(square(params.leaf("x")))


def test_frozen_store_collects_no_gradient():
    params = _store(x=np.ones(2))
    other = _store(y=np.ones(2))
    with params.frozen():
        loss = reduce_sum(params.leaf("x") * other.leaf("y"))
    backward(loss)
    np.testing.assert_array_equal(params.entries["x"].grad, [0.0, 0.0])
    np.testing.assert_array_equal(other.entries["y"].grad, [1.0, 1.0])


def test_non_finite_values_raise():
    with pytest.raises(NonFiniteError):
        log(Tensor(np.zeros(2)))


def test_shape_error_names_the_layer():
    spec = MlpSpec(3, (4,), 1)
    params = ParamStore()
    init_mlp(spec, params, "net", np.random.default_rng(0))
    with pytest.raises(ShapeError) as err:
        mlp_forward(spec, params, np.zeros((2, 5)), "net")
    assert err.value.layer == "net.l0"


def test_adam_minimises_a_quadratic():
    params = _store(x=np.array([0.0, -2.0]))
    target = np.array([3.0, 1.0])
    version = params.version
    for _ in range(3000):
        backward(reduce_sum(square(params.leaf("x") - target)))
        adam_step(params, 0.01)
    np.testing.assert_allclose(params["x"], target, atol=5e-2)
    np.testing.assert_array_equal(params.entries["x"].grad, [0.0, 0.0])
    assert params.version == version + 3000


def test_first_adam_step_moves_by_the_learning_rate():
    params = _store(x=np.array([0.5, -2.0]))
    params.entries["x"].grad[...] = 1.0
    adam_step(params, 1e-3)
    np.testing.assert_allclose(params["x"], [0.5 - 1e-3, -2.0 - 1e-3], rtol=0, atol=1e-10)


def test_adam_ignores_a_zero_gradient():
    params = _store(x=np.array([0.5, -2.0]), y=np.ones((2, 2)))
    for _ in range(5):
        adam_step(params, 0.1)
    np.testing.assert_array_equal(params["x"], [0.5, -2.0])
    np.testing.assert_array_equal(params["y"], np.ones((2, 2)))


def test_adam_runs_are_bitwise_reproducible():
    def train():
        rng = np.random.default_rng(9)
        spec = MlpSpec(3, (5,), 2, activation="tanh")
        params = ParamStore()
        init_mlp(spec, params, "net", rng)
        x, y = rng.normal(size=(16, 3)), rng.normal(size=(16, 2))
        for _ in range(25):
            backward(reduce_mean(square(mlp_forward(spec, params, x, "net") - y)))
            adam_step(params, 1e-2)
        return params

    first, second = train(), train()
    for name in first.names():
        np.testing.assert_array_equal(first[name], second[name])


def test_soft_update_moves_target_by_tau():
    target = _store(w=np.zeros(3))
    online = _store(w=np.ones(3))
    soft_update(target, online, 0.005)
    np.testing.assert_allclose(target["w"], 0.005)


def test_copy_is_independent():
    params = _store(w=np.ones(2))
    clone = params.copy()
    params.set_value("w", np.zeros(2))
    np.testing.assert_array_equal(clone["w"], [1.0, 1.0])
    clone.copy_from(params)
    np.testing.assert_array_equal(clone["w"], [0.0, 0.0])


def test_set_value_checks_shape():
    params = _store(w=np.ones(2))
    with pytest.raises(ShapeError):
        params.set_value("w", np.ones(3))


def test_checkpoint_restores_values(tmp_path):
    rng = np.random.default_rng(11)
    params = _store(**{"actor.l0.w": rng.normal(size=(4, 3)), "actor.l0.b": rng.normal(size=4)})
    path = tmp_path / "actor.ckpt"
    save_params(params, str(path))
    restored = load_params(str(path))
    assert restored.names() == params.names()
    for name in params.names():
        np.testing.assert_array_equal(restored[name], params[name])
    assert path.read_bytes()[:8] == b"CTXAPARM"


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_params(str(path))

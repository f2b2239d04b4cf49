import numpy as np
import pytest

from ctxadapt.nn_core import (
    MlpSpec,
    ParamStore,
    ShapeError,
    Tensor,
    backward,
    finite_difference_check,
    init_mlp,
    reduce_sum,
    square,
)
from ctxadapt.policy_zoo import (
    KINDS,
    AdapterOptions,
    EnvDims,
    HypernetOptions,
    ParameterBudgetError,
    Policy,
    PolicyArch,
    actor_forward,
    count_parameters,
    critic_forward,
    equalize_parameters,
    flap_head_forward,
    init_actor,
    init_critic,
    param_shapes,
    resolve_location,
)

ODE_DIMS = EnvDims(state_dim=1, action_dim=2, context_dim=1)
SMALL_HNET = HypernetOptions(chunk_size=20, trunk_hidden_dims=(4,), embedding_dim=2)


def _arch(kind, hidden=(8,), **adapter):
    options = AdapterOptions(bottleneck_dims=(3,), hypernet=SMALL_HNET, **adapter)
    return PolicyArch(kind=kind, hidden_dims=hidden, adapter=options, cgate_hidden_dims=(4,), flap_hidden_dims=(4,))


@pytest.mark.parametrize("kind", KINDS)
def test_count_matches_initialised_stores(kind):
    arch = _arch(kind)
    rng = np.random.default_rng(0)
    actor = init_actor(arch, ODE_DIMS, rng)
    critic = init_critic(arch, ODE_DIMS, rng, heads=("q1",))
    assert count_parameters(arch, ODE_DIMS) == actor.num_parameters() + critic.num_parameters()
    assert {n: actor[n].shape for n in actor.names()} == dict(param_shapes(arch, ODE_DIMS, "actor"))


@pytest.mark.parametrize("kind", KINDS)
def test_output_shapes(kind):
    arch = _arch(kind)
    rng = np.random.default_rng(1)
    actor = init_actor(arch, ODE_DIMS, rng)
    critic = init_critic(arch, ODE_DIMS, rng)
    s, c, a = rng.normal(size=(5, 1)), rng.normal(size=(5, 1)), rng.uniform(-1, 1, size=(5, 2))
    dist = actor_forward(arch, ODE_DIMS, actor, s, c)
    assert dist.mean.shape == (5, 2)
    assert dist.log_std.shape == (5, 2)
    assert np.all((dist.log_std.data >= arch.log_std_min) & (dist.log_std.data <= arch.log_std_max))
    assert critic_forward(arch, ODE_DIMS, critic, s, a, c, "q1").shape == (5,)
    assert critic_forward(arch, ODE_DIMS, critic, s[0], a[0], c[0], "q2").shape == ()


@pytest.mark.parametrize("kind", ["concat", "cgate", "flap", "adapter"])
def test_critic_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(2)
    arch = PolicyArch(
        kind=kind,
        hidden_dims=(5,),
        adapter=AdapterOptions(
            bottleneck_dims=(2,),
            adapter_activation="tanh",
            hypernet=HypernetOptions(chunk_size=6, trunk_hidden_dims=(3,), embedding_dim=2, final_scale=1.0),
        ),
        cgate_hidden_dims=(3,),
        flap_hidden_dims=(3,),
    )
    critic = init_critic(arch, ODE_DIMS, rng, heads=("q1",))
    s, c, a = rng.normal(size=(3, 1)), rng.normal(size=(3, 1)), rng.uniform(-1, 1, size=(3, 2))

    def loss():
        return reduce_sum(square(critic_forward(arch, ODE_DIMS, critic, s, a, c, "q1")))

    assert finite_difference_check(loss, critic) < 1e-4


def test_unaware_ignores_the_context():
    arch = _arch("unaware")
    actor = init_actor(arch, ODE_DIMS, np.random.default_rng(0))
    s = np.array([[0.3], [0.3]])
    out = actor_forward(arch, ODE_DIMS, actor, s, np.array([[-5.0], [5.0]])).mean.data
    np.testing.assert_array_equal(out[0], out[1])


@pytest.mark.parametrize("kind", ["concat", "cgate", "flap", "adapter"])
def test_aware_kinds_use_the_context(kind):
    hnet = HypernetOptions(chunk_size=20, trunk_hidden_dims=(4,), embedding_dim=2, final_scale=1.0)
    arch = PolicyArch(kind=kind, hidden_dims=(8,), adapter=AdapterOptions(bottleneck_dims=(3,), hypernet=hnet))
    actor = init_actor(arch, ODE_DIMS, np.random.default_rng(3))
    s = np.array([[0.3], [0.3]])
    out = actor_forward(arch, ODE_DIMS, actor, s, np.array([[-5.0], [5.0]])).mean.data
    assert not np.allclose(out[0], out[1])


def test_zero_generated_weights_leave_the_backbone_unchanged():
    arch = _arch("adapter", actor_pre_activation=True)
    base = _arch("unaware")
    rng = np.random.default_rng(4)
    actor = init_actor(arch, ODE_DIMS, rng)
    backbone = init_actor(base, ODE_DIMS, rng)
    for name in backbone.names():
        backbone.set_value(name, actor[name])
    for name in actor.names():
        if name.startswith("actor.hnet") and ".trunk.l1." in name:
            actor.set_value(name, np.zeros_like(actor[name]))

    s, c = rng.normal(size=(6, 1)), rng.normal(size=(6, 1))
    adapted = actor_forward(arch, ODE_DIMS, actor, s, c)
    plain = actor_forward(base, ODE_DIMS, backbone, s, c)
    np.testing.assert_allclose(adapted.mean.data, plain.mean.data, atol=1e-14)
    np.testing.assert_allclose(adapted.log_std.data, plain.log_std.data, atol=1e-14)


def test_adapter_locations():
    assert resolve_location("start", 3) == 0
    assert resolve_location("base_f", 3) == 1
    assert resolve_location("base", 3) == 2
    assert resolve_location("end", 3) == 3
    assert resolve_location(1, 3) == 1
    with pytest.raises(ValueError):
        resolve_location(4, 3)

    arch = _arch("adapter", hidden=(8, 8), actor_locations=("start", "base"))
    names = {name.split(".")[1] for name, _ in param_shapes(arch, ODE_DIMS, "actor")}
    assert {"hnet0", "hnet2"} <= names


def test_input_adapter_forward_runs():
    arch = _arch("adapter", hidden=(8,), actor_locations=("start", "end"))
    actor = init_actor(arch, EnvDims(4, 1, 2), np.random.default_rng(0))
    dist = actor_forward(arch, EnvDims(4, 1, 2), actor, np.zeros((3, 4)), np.ones((3, 2)))
    assert dist.mean.shape == (3, 1)


def test_wide_bottleneck_falls_back_to_a_single_layer(capsys):
    arch = PolicyArch(
        kind="adapter", hidden_dims=(7,), adapter=AdapterOptions(bottleneck_dims=(32,), hypernet=SMALL_HNET)
    )
    actor = init_actor(arch, ODE_DIMS, np.random.default_rng(0))
    assert "bottleneck" in capsys.readouterr().err
    # 7 x 7 + 7 generated values in chunks of 20
    assert dict(param_shapes(arch, ODE_DIMS, "actor"))["actor.hnet1.emb"] == (3, 2)
    dist = actor_forward(arch, ODE_DIMS, actor, np.zeros((2, 1)), np.ones((2, 1)))
    assert dist.mean.shape == (2, 2)


def test_unknown_kind_and_location_are_rejected():
    with pytest.raises(ValueError):
        PolicyArch(kind="film")
    with pytest.raises(ValueError):
        PolicyArch(kind="adapter", adapter=AdapterOptions(actor_locations=("middle",)))


def test_context_kinds_need_a_context():
    with pytest.raises(ShapeError):
        init_actor(_arch("cgate"), EnvDims(1, 2, 0), np.random.default_rng(0))


def test_input_shapes_are_checked():
    arch = _arch("concat")
    actor = init_actor(arch, ODE_DIMS, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        actor_forward(arch, ODE_DIMS, actor, np.zeros((2, 3)), np.zeros((2, 1)))


def test_from_dict_builds_nested_options():
    arch = PolicyArch.from_dict(
        {
            "kind": "adapter",
            "hidden_dims": [64, 64],
            "adapter": {"bottleneck_dims": [16], "critic_locations": ["base", "end"], "hypernet": {"chunked": False}},
        }
    )
    assert arch.hidden_dims == (64, 64)
    assert arch.adapter.critic_locations == ("base", "end")
    assert arch.adapter.hypernet.chunked is False
    with pytest.raises(TypeError):
        PolicyArch.from_dict({"kind": "adapter", "widths": [3]})


def test_sampled_log_probability_matches_closed_form():
    arch = _arch("concat")
    actor = init_actor(arch, ODE_DIMS, np.random.default_rng(5))
    s, c = np.array([[0.2], [-0.4]]), np.array([[1.0], [0.5]])
    dist = actor_forward(arch, ODE_DIMS, actor, s, c)
    action, log_prob = dist.sample(np.random.default_rng(9))

    noise = np.random.default_rng(9).standard_normal((2, 2))
    mean, std = dist.mean.data, np.exp(dist.log_std.data)
    u = mean + std * noise
    gauss = -0.5 * ((u - mean) / std) ** 2 - np.log(std) - 0.5 * np.log(2 * np.pi)
    expected = np.sum(gauss - np.log(1 - np.tanh(u) ** 2 + 1e-6), axis=1)
    np.testing.assert_allclose(action.data, np.tanh(u), atol=1e-12)
    np.testing.assert_allclose(log_prob.data, expected, atol=1e-9)
    assert np.all(np.abs(action.data) < 1.0)


def test_sampled_actions_carry_gradients():
    arch = _arch("adapter")
    actor = init_actor(arch, ODE_DIMS, np.random.default_rng(6))
    dist = actor_forward(arch, ODE_DIMS, actor, np.ones((4, 1)), np.ones((4, 1)))
    action, log_prob = dist.sample(np.random.default_rng(0))
    backward(reduce_sum(action) + reduce_sum(log_prob))
    assert np.any(actor.entries["actor.l0.w"].grad != 0.0)


def test_policy_mean_action_is_deterministic():
    arch = _arch("adapter")
    policy = Policy(arch, ODE_DIMS, init_actor(arch, ODE_DIMS, np.random.default_rng(7)))
    s, c = np.zeros((3, 1)), np.array([[1.0], [2.0], [1.0]])
    first = policy.mean_action(s, c)
    np.testing.assert_array_equal(first, policy.mean_action(s, c))
    np.testing.assert_allclose(first[0], first[2], atol=1e-12)
    assert np.all(np.abs(first) < 1.0)
    rng = np.random.default_rng(0)
    assert not np.allclose(policy.sample_action(s, c, rng), policy.sample_action(s, c, rng))


@pytest.mark.parametrize("kind", ["unaware", "concat", "cgate", "flap"])
def test_parameter_parity_with_the_adapter(kind):
    reference = PolicyArch(kind="adapter", hidden_dims=(256,))
    target = PolicyArch(kind=kind, hidden_dims=(256,))
    width = equalize_parameters(reference, target, ODE_DIMS, tolerance=0.05)
    budget = count_parameters(reference, ODE_DIMS)
    assert abs(count_parameters(target.with_width(width), ODE_DIMS) - budget) <= 0.05 * budget


def test_parity_reports_an_impossible_budget():
    reference = PolicyArch(kind="unaware", hidden_dims=(1,))
    target = PolicyArch(kind="cgate", hidden_dims=(1,))
    with pytest.raises(ParameterBudgetError):
        equalize_parameters(reference, target, ODE_DIMS, tolerance=0.05)


def test_tensor_inputs_are_accepted():
    arch = _arch("cgate")
    actor = init_actor(arch, ODE_DIMS, np.random.default_rng(8))
    dist = actor_forward(arch, ODE_DIMS, actor, Tensor(np.zeros((2, 1))), Tensor(np.ones((2, 1))))
    assert dist.mean.shape == (2, 2)


def test_parity_shrinks_concat_to_the_unaware_budget():
    reference = PolicyArch(kind="unaware", hidden_dims=(256,))
    target = PolicyArch(kind="concat", hidden_dims=(256,))
    budget = count_parameters(reference, ODE_DIMS)
    assert count_parameters(target, ODE_DIMS) > budget
    width = equalize_parameters(reference, target, ODE_DIMS, tolerance=0.05)
    # 11w + 5 parameters unaware, 13w + 5 concat
    assert width == 217
    assert abs(count_parameters(target.with_width(width), ODE_DIMS) - budget) <= 0.05 * budget


@pytest.mark.parametrize("kind", ["unaware", "concat", "adapter"])
def test_parity_keeps_the_width_of_an_identical_target(kind):
    arch = PolicyArch(kind=kind, hidden_dims=(256,))
    assert equalize_parameters(arch, arch, ODE_DIMS, tolerance=0.05) == 256


def _flap_store(spec, weights, bias):
    params = ParamStore()
    params.add("head.l0.w", np.full((spec.output_dim, spec.input_dim), weights, dtype=np.float64))
    params.add("head.l0.b", np.asarray(bias, dtype=np.float64))
    return params


def test_flap_head_with_a_silent_generator_is_zero():
    spec = MlpSpec(2, (), 3 * (4 + 1))
    params = _flap_store(spec, 0.0, np.zeros(15))
    out = flap_head_forward(np.ones((5, 4)), np.ones((5, 2)), spec, params)
    np.testing.assert_array_equal(out.data, np.zeros((5, 3)))


def test_flap_head_scalar_case():
    spec = MlpSpec(1, (), 2)
    params = _flap_store(spec, 0.0, [3.0, 1.0])
    out = flap_head_forward(np.array([2.0]), np.array([0.5]), spec, params)
    np.testing.assert_array_equal(out.data, [7.0])


def test_flap_head_matches_an_explicit_matmul():
    rng = np.random.default_rng(21)
    spec = MlpSpec(2, (5,), 3 * (4 + 1))
    params = ParamStore()
    init_mlp(spec, params, "head", rng)
    phi, c = rng.normal(size=(6, 4)), rng.normal(size=(6, 2))
    hidden = np.maximum(c @ params["head.l0.w"].T + params["head.l0.b"], 0.0)
    generated = hidden @ params["head.l1.w"].T + params["head.l1.b"]
    w = generated[:, :12].reshape(6, 3, 4)
    expected = np.einsum("boi,bi->bo", w, phi) + generated[:, 12:]
    np.testing.assert_allclose(flap_head_forward(phi, c, spec, params).data, expected, rtol=0, atol=1e-12)


def test_flap_head_rejects_a_generator_of_the_wrong_size():
    spec = MlpSpec(1, (), 7)
    params = _flap_store(spec, 0.0, np.zeros(7))
    with pytest.raises(ShapeError):
        flap_head_forward(np.ones(4), np.ones(1), spec, params)


def test_concat_without_context_is_the_unaware_network():
    dims = EnvDims(state_dim=1, action_dim=2, context_dim=0)
    unaware, joined = _arch("unaware"), _arch("concat")
    s, a, c = np.linspace(-1.0, 1.0, 4).reshape(4, 1), np.full((4, 2), 0.3), np.zeros((4, 0))
    actors = [init_actor(arch, dims, np.random.default_rng(12)) for arch in (unaware, joined)]
    assert actors[0].names() == actors[1].names()
    first = actor_forward(unaware, dims, actors[0], s, c)
    second = actor_forward(joined, dims, actors[1], s, c)
    np.testing.assert_array_equal(first.mean.data, second.mean.data)
    np.testing.assert_array_equal(first.log_std.data, second.log_std.data)
    critics = [init_critic(arch, dims, np.random.default_rng(13)) for arch in (unaware, joined)]
    np.testing.assert_array_equal(
        critic_forward(unaware, dims, critics[0], s, a, c).data, critic_forward(joined, dims, critics[1], s, a, c).data
    )


def test_zeroed_critic_returns_its_final_bias():
    arch = _arch("unaware")
    critic = init_critic(arch, ODE_DIMS, np.random.default_rng(14), heads=("q1",))
    for name in critic.names():
        critic.set_value(name, np.zeros_like(critic[name]))
    critic.set_value("q1.l1.b", [0.7])
    rng = np.random.default_rng(15)
    s, a, c = rng.normal(size=(5, 1)), rng.uniform(-1.0, 1.0, size=(5, 2)), rng.normal(size=(5, 1))
    q = critic_forward(arch, ODE_DIMS, critic, s, a, c)
    np.testing.assert_array_equal(q.data, np.full(5, 0.7))


@pytest.mark.parametrize("seed", range(3))
def test_concat_critic_matches_a_direct_composition(seed):
    rng = np.random.default_rng(seed)
    arch = _arch("concat", hidden=(8, 6))
    critic = init_critic(arch, ODE_DIMS, rng, heads=("q1",))
    s, a, c = rng.normal(size=(7, 1)), rng.uniform(-1.0, 1.0, size=(7, 2)), rng.normal(size=(7, 1))
    h = np.concatenate([s, a, c], axis=1)
    for i in range(2):
        h = np.maximum(h @ critic[f"q1.l{i}.w"].T + critic[f"q1.l{i}.b"], 0.0)
    expected = (h @ critic["q1.l2.w"].T + critic["q1.l2.b"])[:, 0]
    q = critic_forward(arch, ODE_DIMS, critic, s, a, c)
    np.testing.assert_allclose(q.data, expected, rtol=0, atol=1e-10)

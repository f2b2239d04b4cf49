import math

import numpy as np
import pytest

from ctxadapt.cmdp_envs import (
    CARTPOLE_CONTEXT_NAMES,
    CARTPOLE_DEFAULTS,
    LABEL_EXTRAP,
    LABEL_INTERP,
    LABEL_TRAIN,
    ODE_NARROW_SETS,
    CartPoleEnv,
    CmdpInstance,
    ContextPipeline,
    ContextSchedule,
    DistractorSpec,
    OdeEnv,
    add_context_noise,
    apply_distractors,
    build_context_sets,
    cartpole_step,
    context_set_ids,
    convex_hull,
    in_hull,
    make_env,
    normalize_context,
    ode_reward,
    ode_step,
    split_labels,
)

DEFAULT_CARTPOLE = np.array([CARTPOLE_DEFAULTS[name] for name in CARTPOLE_CONTEXT_NAMES])


@pytest.mark.parametrize(
    "x, reward",
    [
        (0.03, 1.0),
        (-0.0499, 1.0),
        (0.05, 0.5),
        (0.07, 0.5),
        (-0.07, 0.5),
        (0.1, 1 / 3),
        (0.15, 1 / 3),
        (0.2, 0.25),
        (0.4, 0.25),
        (0.5, 0.05),
        (1.5, 0.05),
        (2.0, 0.0),
        (3.0, 0.0),
        (20.0, 0.0),
    ],
)
def test_ode_reward_tiers(x, reward):
    assert float(ode_reward(x)) == pytest.approx(reward)


def test_ode_reward_never_increases_with_distance():
    sweep = np.linspace(0.0, 25.0, 20001)
    rewards = ode_reward(sweep)
    assert np.all(np.diff(rewards) <= 0.0)
    assert set(np.unique(rewards).tolist()) == {0.0, 0.05, 0.25, 1 / 3, 0.5, 1.0}


def test_ode_step_uses_complex_powers():
    # c = (c0, c1), a = 0.5 + 0.5i: xdot = c0 a + c1 a^2 = c0 (0.5 + 0.5i) + c1 (0.5i)
    result = ode_step(1.0, 0, np.array([0.5, 0.5]), np.array([2.0, 3.0]))
    assert float(result.next_state) == pytest.approx(1.0 + 0.2 * 1.0)
    assert not result.done
    last = ode_step(1.0, 199, np.array([0.0, 0.0]), np.array([1.0]))
    assert bool(last.truncated) and not bool(last.terminated)


def test_ode_state_is_clipped_and_actions_clamped():
    result = ode_step(19.9, 0, np.array([5.0, 0.0]), np.array([10.0]))
    assert float(result.next_state) == 20.0
    clamped = ode_step(0.0, 0, np.array([5.0, 0.0]), np.array([1.0]))
    assert float(clamped.next_state) == pytest.approx(0.2)


def _reference_cartpole(state, force, gravity, cart_mass, pole_mass, length):
    x, x_dot, theta, theta_dot = state
    total = cart_mass + pole_mass
    costheta, sintheta = math.cos(theta), math.sin(theta)
    temp = (force + pole_mass * length * theta_dot * theta_dot * sintheta) / total
    thetaacc = (gravity * sintheta - costheta * temp) / (
        length * (4.0 / 3.0 - pole_mass * costheta * costheta / total)
    )
    xacc = temp - pole_mass * length * thetaacc * costheta / total
    x_dot = x_dot + 0.02 * xacc
    x = x + 0.02 * x_dot
    theta_dot = theta_dot + 0.02 * thetaacc
    theta = theta + 0.02 * theta_dot
    return [x, x_dot, theta, theta_dot]


def test_cartpole_matches_reference_integrator():
    rng = np.random.default_rng(0)
    for _ in range(50):
        state = rng.uniform(-0.2, 0.2, size=4)
        action = rng.uniform(-1.0, 1.0)
        context = np.array(
            [rng.uniform(5, 15), rng.uniform(0.5, 2), rng.uniform(0.01, 1), rng.uniform(0.1, 10), rng.uniform(5, 15)]
        )
        expected = _reference_cartpole(state, action * context[4], *context[:4])
        result = cartpole_step(state, action, context)
        np.testing.assert_allclose(result.next_state, expected, atol=1e-10, rtol=0)


def test_cartpole_termination():
    tipped = cartpole_step(np.array([0.0, 0.0, 0.25, 0.0]), 0.0, DEFAULT_CARTPOLE)
    assert bool(tipped.terminated)
    assert float(tipped.reward) == 0.0
    out = cartpole_step(np.array([2.45, 0.0, 0.0, 0.0]), 0.0, DEFAULT_CARTPOLE)
    assert bool(out.terminated)
    upright = cartpole_step(np.zeros(4), 0.0, DEFAULT_CARTPOLE, t=499)
    assert bool(upright.truncated) and not bool(upright.terminated)
    assert float(upright.reward) == 1.0


def test_cartpole_return_is_capped_at_horizon():
    env = CartPoleEnv()
    instance = CmdpInstance(env, DEFAULT_CARTPOLE)
    instance.reset(np.random.default_rng(0), np.zeros(4))
    total, steps = 0.0, 0
    while True:
        # upright equilibrium with no force
        _, reward, terminated, truncated = instance.step(np.zeros(1))
        total += reward
        steps += 1
        if terminated or truncated:
            break
    assert steps == 500
    assert total == 500.0


def test_cartpole_reset_range():
    states = CartPoleEnv().reset(np.tile(DEFAULT_CARTPOLE, (100, 1)), np.random.default_rng(0))
    assert states.shape == (100, 4)
    assert np.all(np.abs(states) <= 0.05)


def test_make_env():
    assert isinstance(make_env("ode"), OdeEnv)
    with pytest.raises(ValueError):
        make_env("pendulum")


def test_distractors_do_not_change_the_dynamics():
    env = CartPoleEnv()
    rng = np.random.default_rng(3)
    raw = np.tile(DEFAULT_CARTPOLE, (4, 1))
    raw[:, 3] = [0.5, 1.0, 4.0, 6.0]
    actions = rng.uniform(-1, 1, size=(100, 4, 1))
    plain = ContextPipeline(np.ones(5))
    noisy = ContextPipeline(np.ones(5), DistractorSpec(k=20, mode="gaussian"))
    seen = noisy.process(raw, "eval", rng)
    assert seen.shape == (4, 25)
    np.testing.assert_array_equal(seen[:, :5], plain.process(raw, "eval", rng))

    # the environment only reads the named context dims
    start = env.reset(raw, np.random.default_rng(1))
    runs = []
    for contexts in (raw, seen):
        states, trace = start.copy(), []
        for t in range(100):
            result = env.step(states, np.full(4, t), actions[t], contexts)
            trace.append((result.next_state, result.reward, result.done))
            states = result.next_state
        runs.append(trace)
    for first, second in zip(*runs):
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)


def test_fixed_distractor_values():
    c = np.array([[0.2, 0.4]])
    spec = DistractorSpec(k=3)
    np.testing.assert_array_equal(apply_distractors(c, spec, "train"), [[0.2, 0.4, 1.0, 1.0, 1.0]])
    np.testing.assert_array_equal(apply_distractors(c, spec, "eval"), [[0.2, 0.4, 0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(apply_distractors(c, DistractorSpec(k=0), "eval"), c)


def test_gaussian_distractors_follow_phase_means():
    c = np.zeros((20000, 1))
    spec = DistractorSpec(k=2, mode="gaussian")
    rng = np.random.default_rng(0)
    train = apply_distractors(c, spec, "train", rng)[:, 1:]
    evaluation = apply_distractors(c, spec, "eval", rng)[:, 1:]
    assert train.mean() == pytest.approx(1.0, abs=0.01)
    assert evaluation.mean() == pytest.approx(0.0, abs=0.01)
    assert train.std() == pytest.approx(0.2, abs=0.01)


def test_distractor_spec_validation():
    with pytest.raises(ValueError):
        DistractorSpec(k=-1)
    with pytest.raises(ValueError):
        DistractorSpec(mode="uniform")


def test_normalisation_and_noise():
    np.testing.assert_allclose(normalize_context([5.0, -2.0], [5.0, 4.0]), [1.0, -0.5])
    with pytest.raises(ValueError):
        normalize_context([1.0], [0.0])
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(add_context_noise(np.ones(3), 0.0, rng), np.ones(3))
    noisy = add_context_noise(np.zeros(50000), 0.5, rng)
    assert noisy.std() == pytest.approx(0.5, abs=0.01)
    with pytest.raises(ValueError):
        add_context_noise(np.ones(3), -0.1, rng)


def test_context_noise_is_unbiased():
    sigma, draws = 0.2, 1_000_000
    noisy = add_context_noise(np.zeros((draws, 1)), sigma, np.random.default_rng(3))
    assert noisy.shape == (draws, 1)
    assert abs(noisy.mean()) < 3.0 * sigma / math.sqrt(draws)


def test_pipeline_normalises_before_noise_and_distractors():
    pipeline = ContextPipeline(np.array([5.0]), DistractorSpec(k=1), train_noise=0.0, eval_noise=0.1)
    rng = np.random.default_rng(0)
    train = pipeline.process(np.array([[5.0]]), "train", rng)
    np.testing.assert_array_equal(train, [[1.0, 1.0]])
    evaluation = pipeline.process(np.full((4000, 1), 5.0), "eval", rng)
    assert evaluation[:, 0].std() == pytest.approx(0.1, abs=0.01)
    np.testing.assert_array_equal(evaluation[:, 1], 0.0)
    assert pipeline.policy_dim == 2


def test_context_set_catalogue():
    ids = context_set_ids()
    for name in ("ode1d", "ode2d", "cartpole-polelength", "cartpole-distractor-fixed"):
        assert name in ids
    with pytest.raises(ValueError):
        build_context_sets("mujoco")


def test_ode1d_splits():
    ctx = build_context_sets("ode1d")
    assert ctx.eval.shape == (201, 1)
    labels = dict(zip(np.round(ctx.eval[:, 0], 6), ctx.labels))
    assert labels[1.0] == LABEL_TRAIN
    assert labels[0.0] == LABEL_INTERP
    assert labels[-5.0] == LABEL_TRAIN
    assert labels[7.5] == LABEL_EXTRAP
    assert ctx.varying_dims == (0,)
    np.testing.assert_array_equal(ctx.default_normaliser(), [5.0])


def test_narrow_training_sets():
    assert sorted(ODE_NARROW_SETS) == list("abcdefgh")
    for key, values in ODE_NARROW_SETS.items():
        ctx = build_context_sets(f"ode1d-narrow-{key}")
        np.testing.assert_array_equal(ctx.train[:, 0], values)
        assert ctx.eval.shape == (201, 1)
    np.testing.assert_array_equal(build_context_sets("ode1d-narrow-h").train, build_context_sets("ode1d").train)


def test_ode2d_grid_and_splits():
    ctx = build_context_sets("ode2d")
    assert ctx.eval.shape == (441, 2)
    assert ctx.grid_shape == (21, 21)
    assert len(ctx.train) == 16
    labels = {tuple(p): label for p, label in zip(ctx.eval, ctx.labels)}
    assert labels[(5.0, 5.0)] == LABEL_TRAIN
    assert labels[(2.0, 3.0)] == LABEL_INTERP
    assert labels[(8.0, 0.0)] == LABEL_EXTRAP


def test_cartpole_pole_length_set():
    ctx = build_context_sets("cartpole-distractor-fixed")
    assert ctx.name == "cartpole-polelength"
    assert ctx.eval.shape == (301, 5)
    assert ctx.varying_dims == (3,)
    np.testing.assert_array_equal(ctx.train[:, 3], [1.0, 4.0, 6.0])
    np.testing.assert_array_equal(ctx.eval[:, 0], 9.8)


def test_hull_membership():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]])
    assert len(convex_hull(square)) == 4
    inside = in_hull(np.array([[0.5, 0.2], [1.0, 0.5], [1.1, 0.5]]), square)
    np.testing.assert_array_equal(inside, [True, True, False])
    segment = np.array([[0.0, 0.0], [2.0, 2.0]])
    np.testing.assert_array_equal(in_hull(np.array([[1.0, 1.0], [1.0, 0.0]]), segment), [True, False])


def test_split_labels_only_use_varying_dims():
    train = np.array([[9.8, 1.0], [9.8, 3.0]])
    points = np.array([[9.8, 1.0], [9.8, 2.0], [9.8, 4.0]])
    labels = split_labels(points, train, (1,))
    assert labels.tolist() == [LABEL_TRAIN, LABEL_INTERP, LABEL_EXTRAP]


def test_schedule_cycles_starts_then_contexts():
    schedule = ContextSchedule(np.array([[1.0], [2.0]]), (1.0, 0.5))
    episodes = [next(schedule) for _ in range(6)]
    assert [float(ctx[0]) for ctx, _ in episodes] == [1.0, 1.0, 2.0, 2.0, 1.0, 1.0]
    assert [start for _, start in episodes] == [1.0, 0.5, 1.0, 0.5, 1.0, 0.5]


def test_ode_env_batches():
    env = OdeEnv()
    contexts = np.array([[1.0], [-1.0]])
    states = env.reset(contexts, np.random.default_rng(0))
    np.testing.assert_array_equal(states, [[1.0], [1.0]])
    result = env.step(states, np.zeros(2), np.array([[1.0, 0.0], [1.0, 0.0]]), contexts)
    np.testing.assert_allclose(result.next_state[:, 0], [1.2, 0.8])

"""
file: cmdp_envs.py
brief: contextual environments (ODE family, CartPole), context normalisation, distractors, noise
       and the context-set catalog
note: all step functions are vectorised over a leading batch axis
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np  # pylint: disable=import-error

ODE_DT = 0.2
ODE_HORIZON = 200
ODE_CLIP = 20.0
# (upper bound on |x'|, reward), first match wins
ODE_REWARD_TIERS = ((0.05, 1.0), (0.1, 1.0 / 2), (0.2, 1.0 / 3), (0.5, 1.0 / 4), (2.0, 1.0 / 20))
ODE_TRAIN_STARTS = (1.0, 0.5, -0.5, -1.0)
ODE_EVAL_START = 1.0

CARTPOLE_CONTEXT_NAMES = ("gravity", "cart_mass", "pole_mass", "pole_length", "force_magnitude")
CARTPOLE_DEFAULTS = {"gravity": 9.8, "cart_mass": 1.0, "pole_mass": 0.1, "pole_length": 0.5, "force_magnitude": 10.0}
CARTPOLE_DT = 0.02
CARTPOLE_HORIZON = 500
CARTPOLE_THETA_LIMIT = 12 * 2 * np.pi / 360
CARTPOLE_X_LIMIT = 2.4
CARTPOLE_INIT_RANGE = 0.05

LABEL_TRAIN = "train"
LABEL_INTERP = "interpolation"
LABEL_EXTRAP = "extrapolation"
SPLITS = (LABEL_TRAIN, LABEL_INTERP, LABEL_EXTRAP)


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray

    @property
    def done(self) -> np.ndarray:
        return self.terminated | self.truncated


# ODE


def ode_reward(x_next) -> np.ndarray:
    """Tiered reward on |x'|."""
    magnitude = np.abs(np.asarray(x_next, dtype=np.float64))
    conditions = [magnitude < bound for bound, _ in ODE_REWARD_TIERS]
    return np.select(conditions, [reward for _, reward in ODE_REWARD_TIERS], default=0.0)


def ode_step(x, t, a, c, dt: float = ODE_DT, horizon: int = ODE_HORIZON) -> StepResult:
    """
    One step of x' = clip(x + Re(sum_j c_j a^(j+1)) dt) with a = a0 + a1 i

    Parameters
    -----------------
    - x: state(s), shape (...)
    - t: step counter(s) before the step
    - a: actions, shape (..., 2), clamped to [-1, 1]
    - c: coefficients, shape (..., n)

    Returns
    -----------------
    - StepResult; truncated is set when t + 1 reaches the horizon, terminated is never set
    """
    a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
    c = np.asarray(c, dtype=np.float64)
    z = a[..., 0] + 1j * a[..., 1]
    x_dot = np.zeros(np.shape(z), dtype=np.complex128)
    power = z
    for j in range(c.shape[-1]):
        x_dot = x_dot + c[..., j] * power
        power = power * z
    x_next = np.clip(np.asarray(x, dtype=np.float64) + np.real(x_dot) * dt, -ODE_CLIP, ODE_CLIP)
    t_next = np.asarray(t) + 1
    return StepResult(x_next, ode_reward(x_next), np.zeros(np.shape(x_next), dtype=bool), t_next >= horizon)


# CartPole


def cartpole_step(state, a, c, t=0, dt: float = CARTPOLE_DT, horizon: int = CARTPOLE_HORIZON) -> StepResult:
    """
    Cart-pole dynamics with semi-implicit Euler; state (..., 4) = (x, x_dot, theta, theta_dot),
    a (...) scaled by the force magnitude, c (..., 5) ordered as CARTPOLE_CONTEXT_NAMES.
    """
    state = np.asarray(state, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    gravity, cart_mass, pole_mass, length, force_mag = (c[..., i] for i in range(5))
    x, x_dot, theta, theta_dot = (state[..., i] for i in range(4))

    force = np.clip(np.reshape(a, np.shape(x)), -1.0, 1.0) * force_mag
    total_mass = pole_mass + cart_mass
    polemass_length = pole_mass * length
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    temp = (force + polemass_length * theta_dot**2 * sin_t) / total_mass
    theta_acc = (gravity * sin_t - cos_t * temp) / (length * (4.0 / 3.0 - pole_mass * cos_t**2 / total_mass))
    x_acc = temp - polemass_length * theta_acc * cos_t / total_mass

    x_dot = x_dot + dt * x_acc
    x = x + dt * x_dot
    theta_dot = theta_dot + dt * theta_acc
    theta = theta + dt * theta_dot

    next_state = np.stack([x, x_dot, theta, theta_dot], axis=-1)
    terminated = (np.abs(x) > CARTPOLE_X_LIMIT) | (np.abs(theta) > CARTPOLE_THETA_LIMIT)
    truncated = (np.asarray(t) + 1 >= horizon) & ~terminated
    return StepResult(next_state, np.where(terminated, 0.0, 1.0), terminated, truncated)


class OdeEnv:
    name = "ode"
    state_dim = 1
    action_dim = 2

    def __init__(self, dt: float = ODE_DT, horizon: int = ODE_HORIZON):
        self.dt = dt
        self.horizon = horizon

    def reset(self, contexts: np.ndarray, rng: np.random.Generator, start_states=None) -> np.ndarray:
        del rng
        n = len(contexts)
        x0 = np.full(n, ODE_EVAL_START) if start_states is None else np.broadcast_to(start_states, (n,))
        return np.asarray(x0, dtype=np.float64).reshape(n, 1).copy()

    def step(self, states, t, actions, contexts) -> StepResult:
        result = ode_step(states[:, 0], t, actions, contexts, self.dt, self.horizon)
        result.next_state = result.next_state.reshape(-1, 1)
        return result

    def training_starts(self):
        return ODE_TRAIN_STARTS


class CartPoleEnv:
    name = "cartpole"
    state_dim = 4
    action_dim = 1

    def __init__(self, dt: float = CARTPOLE_DT, horizon: int = CARTPOLE_HORIZON):
        self.dt = dt
        self.horizon = horizon

    def reset(self, contexts: np.ndarray, rng: np.random.Generator, start_states=None) -> np.ndarray:
        if start_states is not None:
            return np.array(start_states, dtype=np.float64).reshape(len(contexts), 4)
        return rng.uniform(-CARTPOLE_INIT_RANGE, CARTPOLE_INIT_RANGE, size=(len(contexts), 4))

    def step(self, states, t, actions, contexts) -> StepResult:
        return cartpole_step(states, np.asarray(actions)[:, 0], contexts, t, self.dt, self.horizon)

    def training_starts(self):
        return (None,)


ENVS = {"ode": OdeEnv, "cartpole": CartPoleEnv}


def make_env(name: str, **kwargs):
    try:
        return ENVS[name](**kwargs)
    except KeyError as exc:
        raise ValueError(f"unknown environment '{name}', expected one of {sorted(ENVS)}") from exc


class CmdpInstance:
    """One environment with a fixed context, stepped one episode at a time."""

    def __init__(self, env, context):
        self.env = env
        self.context = np.asarray(context, dtype=np.float64).reshape(1, -1)
        self.state = None
        self.t = 0

    def reset(self, rng: np.random.Generator, start_state=None) -> np.ndarray:
        starts = None if start_state is None else np.asarray([start_state])
        self.state = self.env.reset(self.context, rng, starts)
        self.t = 0
        return self.state[0].copy()

    def step(self, action) -> tuple[np.ndarray, float, bool, bool]:
        result = self.env.step(self.state, np.array([self.t]), np.asarray(action).reshape(1, -1), self.context)
        self.state = result.next_state
        self.t += 1
        return self.state[0].copy(), float(result.reward[0]), bool(result.terminated[0]), bool(result.truncated[0])


# context processing


@dataclass(frozen=True)
class DistractorSpec:
    k: int = 0
    mode: str = "fixed"
    train_value: float = 1.0
    eval_value: float = 0.0
    train_mean: float = 1.0
    eval_mean: float = 0.0
    sigma: float = 0.2

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"distractor count must be non-negative, got {self.k}")
        if self.mode not in ("fixed", "gaussian"):
            raise ValueError(f"unknown distractor mode '{self.mode}'")


def normalize_context(c, max_per_dim) -> np.ndarray:
    max_per_dim = np.asarray(max_per_dim, dtype=np.float64)
    if np.any(max_per_dim <= 0):
        raise ValueError(f"normalisation divisors must be positive, got {max_per_dim}")
    return np.asarray(c, dtype=np.float64) / max_per_dim


def apply_distractors(c, spec: DistractorSpec, phase: str, rng: np.random.Generator | None = None) -> np.ndarray:
    """Append spec.k inert dims; rows of a batch are separate episodes and get separate gaussian draws."""
    c = np.asarray(c, dtype=np.float64)
    if spec.k == 0:
        return c.copy()
    lead = c.shape[:-1]
    if spec.mode == "fixed":
        extra = np.full((*lead, spec.k), spec.train_value if phase == "train" else spec.eval_value)
    else:
        extra = rng.normal(spec.train_mean if phase == "train" else spec.eval_mean, spec.sigma, size=(*lead, spec.k))
    return np.concatenate([c, extra], axis=-1)


def add_context_noise(c_normalized, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"noise sigma must be non-negative, got {sigma}")
    c_normalized = np.asarray(c_normalized, dtype=np.float64)
    if sigma == 0:
        return c_normalized.copy()
    return c_normalized + rng.normal(0.0, sigma, size=c_normalized.shape)


@dataclass
class ContextPipeline:
    """What the policy sees: normalise, then add noise, then append distractors (drawn once per episode)."""

    max_per_dim: np.ndarray
    distractors: DistractorSpec = field(default_factory=DistractorSpec)
    train_noise: float = 0.0
    eval_noise: float = 0.0

    @property
    def raw_dim(self) -> int:
        return len(self.max_per_dim)

    @property
    def policy_dim(self) -> int:
        return self.raw_dim + self.distractors.k

    def process(self, raw, phase: str, rng: np.random.Generator) -> np.ndarray:
        c = normalize_context(raw, self.max_per_dim)
        c = add_context_noise(c, self.train_noise if phase == "train" else self.eval_noise, rng)
        return apply_distractors(c, self.distractors, phase, rng)


# context sets


@dataclass
class ContextSet:
    name: str
    env: str
    train: np.ndarray
    eval: np.ndarray
    labels: np.ndarray
    varying_dims: tuple
    context_names: tuple
    grid_shape: tuple | None = None

    @property
    def raw_dim(self) -> int:
        return self.train.shape[1]

    def default_normaliser(self) -> np.ndarray:
        """Largest absolute training value per dim."""
        return np.max(np.abs(self.train), axis=0)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull of 2-D points, counter-clockwise, without repeated endpoint."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _on_segment(p, a, b, tol) -> bool:
    ab = b - a
    length2 = float(ab @ ab)
    if length2 == 0.0:
        return bool(np.linalg.norm(p - a) <= tol)
    s = np.clip(float((p - a) @ ab) / length2, 0.0, 1.0)
    return bool(np.linalg.norm(p - (a + s * ab)) <= tol)


def in_hull(points: np.ndarray, train: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """
    Membership of points in the convex hull of train (both already reduced to the varying dims):
    an interval in 1-D, a polygon in 2-D, the bounding box above that.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    train = np.atleast_2d(np.asarray(train, dtype=np.float64))
    dim = train.shape[1]
    if dim == 0:
        return np.ones(len(points), dtype=bool)
    if dim != 2:
        low, high = train.min(axis=0), train.max(axis=0)
        return np.all((points >= low - tol) & (points <= high + tol), axis=1)
    hull = convex_hull(train)
    if len(hull) < 3:
        a, b = hull[0], hull[-1]
        return np.array([_on_segment(p, a, b, tol) for p in points])
    edges = np.roll(hull, -1, axis=0) - hull
    rel = points[:, None, :] - hull[None, :, :]
    crosses = edges[None, :, 0] * rel[:, :, 1] - edges[None, :, 1] * rel[:, :, 0]
    return np.all(crosses >= -tol, axis=1)


def split_labels(eval_points: np.ndarray, train: np.ndarray, varying_dims) -> np.ndarray:
    """Label each evaluation context train / interpolation / extrapolation."""
    dims = list(varying_dims)
    is_train = np.array([np.any(np.all(np.isclose(train, p), axis=1)) for p in eval_points], dtype=bool)
    inside = in_hull(eval_points[:, dims], train[:, dims])
    return np.where(is_train, LABEL_TRAIN, np.where(inside, LABEL_INTERP, LABEL_EXTRAP))


def _grid_1d(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1, 1)


def _make_set(name, env, train, eval_points, context_names, grid_shape=None) -> ContextSet:
    train = np.asarray(train, dtype=np.float64)
    eval_points = np.asarray(eval_points, dtype=np.float64)
    varying = tuple(int(d) for d in np.flatnonzero(np.ptp(np.vstack([train, eval_points]), axis=0) > 0))
    labels = split_labels(eval_points, train, varying)
    return ContextSet(name, env, train, eval_points, labels, varying, tuple(context_names), grid_shape)


def _ode1d(name: str, train) -> ContextSet:
    return _make_set(name, "ode", _grid_1d(train), _grid_1d(np.linspace(-10.0, 10.0, 201)), ("c0",))


def _ode2d(name: str, train) -> ContextSet:
    axis = np.linspace(-10.0, 10.0, 21)
    grid = np.array([(a, b) for a in axis for b in axis])
    return _make_set(name, "ode", train, grid, ("c0", "c1"), grid_shape=(21, 21))


def _cartpole(name: str, dim_name: str, train_values, eval_values) -> ContextSet:
    base = np.array([CARTPOLE_DEFAULTS[k] for k in CARTPOLE_CONTEXT_NAMES])
    col = CARTPOLE_CONTEXT_NAMES.index(dim_name)

    def rows(values):
        out = np.tile(base, (len(values), 1))
        out[:, col] = values
        return out

    return _make_set(name, "cartpole", rows(train_values), rows(eval_values), CARTPOLE_CONTEXT_NAMES)


def _ode2d_train() -> list:
    small = [(a, b) for a in (1, 0, -1) for b in (1, 0, -1)]
    large = [(a, b) for a in (5, 0, -5) for b in (5, 0, -5)]
    return sorted({p for p in small + large if p != (0, 0)})


ODE_NARROW_SETS = {
    "a": (-0.1, 0.1),
    "b": (-1.0, -0.5, 0.5, 1.0),
    "c": (1.0, 5.0),
    "d": (-1.0, 1.0),
    "e": (-2.5, -2.0, 2.0, 2.5),
    "f": (-5.0, 5.0),
    "g": (-10.0, -1.0, 1.0, 10.0),
    # varied and bounded, the catalog's default 1-D training set
    "h": (-5.0, -1.0, 1.0, 5.0),
}
ODE_OVERFIT_TRAIN = ((1, 1), (1, -1), (1, 0), (-1, 1), (-1, -1), (-1, 0), (0, 1), (0, -1))

CONTEXT_SETS = {
    "ode1d": lambda: _ode1d("ode1d", (-5.0, -1.0, 1.0, 5.0)),
    "ode2d": lambda: _ode2d("ode2d", _ode2d_train()),
    "ode2d-overfit": lambda: _ode2d("ode2d-overfit", ODE_OVERFIT_TRAIN),
    "ode1d-positive": lambda: _make_set(
        "ode1d-positive", "ode", _grid_1d((1.0, 5.0)), _grid_1d(np.linspace(0.0, 10.0, 101)), ("c0",)
    ),
    "cartpole-polelength": lambda: _cartpole(
        "cartpole-polelength", "pole_length", (1.0, 4.0, 6.0), np.linspace(0.1, 10.0, 301)
    ),
    "cartpole-polemass": lambda: _cartpole("cartpole-polemass", "pole_mass", (0.01,), np.linspace(0.01, 1.0, 100)),
}
for _key, _train in ODE_NARROW_SETS.items():
    CONTEXT_SETS[f"ode1d-narrow-{_key}"] = lambda _k=_key, _t=_train: _ode1d(f"ode1d-narrow-{_k}", _t)
# experiment ids that reuse another set's contexts
CONTEXT_SET_ALIASES = {
    "ode1d-normalisation": "ode1d",
    "ode1d-narrow": "ode1d-narrow-a",
    "cartpole-distractor-fixed": "cartpole-polelength",
    "cartpole-distractor-gaussian": "cartpole-polelength",
    "cartpole-noise": "cartpole-polelength",
}


def context_set_ids() -> list[str]:
    return sorted([*CONTEXT_SETS, *CONTEXT_SET_ALIASES])


def build_context_sets(experiment_id: str) -> ContextSet:
    """Training contexts, evaluation grid and split labels for a known experiment id."""
    key = CONTEXT_SET_ALIASES.get(experiment_id, experiment_id)
    if key not in CONTEXT_SETS:
        raise ValueError(f"unknown context set '{experiment_id}', expected one of {context_set_ids()}")
    return CONTEXT_SETS[key]()


class ContextSchedule:
    """
    Training episodes as (raw context, start state); contexts are visited in order and each one is
    repeated once per start state before moving on.
    """

    def __init__(self, train_contexts: np.ndarray, starts=(None,)):
        self.contexts = np.asarray(train_contexts, dtype=np.float64)
        self.starts = tuple(starts)
        self.episode = 0

    def __iter__(self):
        return self

    def __next__(self) -> tuple[np.ndarray, float | None]:
        per_context = len(self.starts)
        ctx = self.contexts[(self.episode // per_context) % len(self.contexts)]
        start = self.starts[self.episode % per_context]
        self.episode += 1
        return ctx, start

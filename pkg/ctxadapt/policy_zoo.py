"""
file: policy_zoo.py
brief: context-conditioned actor and critic networks (unaware, concat, cgate, flap, adapter) and parameter parity
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np  # pylint: disable=import-error

from .hyper_adapter import (
    AdapterSpec,
    ChunkedHypernetSpec,
    ThetaCache,
    adapter_forward,
    cgate_equivalent_forward,
    hypernet_shapes,
    init_hypernet,
    parameter_count,
)
from .msg_utils import msg_warn
from .nn_core import (
    MlpSpec,
    ParamStore,
    ShapeError,
    Tensor,
    as_tensor,
    batched_matvec,
    concat,
    dense,
    dense_shapes,
    exp,
    init_dense,
    init_mlp,
    log,
    mlp_forward,
    mlp_shapes,
    no_grad,
    reduce_sum,
    relu,
    reshape,
    square,
    tanh,
)

KINDS = ("unaware", "concat", "cgate", "flap", "adapter")
ROLES = ("actor", "critic")
LOCATIONS = ("start", "base_f", "base", "end")

_WARNED: set = set()


class ParameterBudgetError(ValueError):
    """No hidden width brings an architecture within tolerance of the reference parameter count."""


@dataclass(frozen=True)
class EnvDims:
    state_dim: int
    action_dim: int
    context_dim: int


@dataclass(frozen=True)
class HypernetOptions:
    chunk_size: int = 330
    trunk_hidden_dims: tuple = (33, 33)
    embedding_dim: int = 8
    chunked: bool = True
    embedding_std: float = 0.05
    final_scale: float = 0.1


@dataclass(frozen=True)
class AdapterOptions:
    bottleneck_dims: tuple = (32,)
    use_skip: bool = True
    adapter_activation: str = "relu"
    actor_locations: tuple = ("base",)
    critic_locations: tuple = ("base",)
    actor_pre_activation: bool = False
    critic_pre_activation: bool = True
    hypernet: HypernetOptions = field(default_factory=HypernetOptions)


@dataclass(frozen=True)
class PolicyArch:
    """
    Actor/critic architecture shared by all conditioning kinds.

    hidden_dims is the backbone; the last layer is the head (2 x action_dim for the actor, 1 for the critic).
    """

    kind: str = "unaware"
    hidden_dims: tuple = (256,)
    adapter: AdapterOptions = field(default_factory=AdapterOptions)
    cgate_hidden_dims: tuple | None = None
    flap_hidden_dims: tuple = (32,)
    log_std_min: float = -5.0
    log_std_max: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture kind '{self.kind}', expected one of {KINDS}")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be non-empty and positive, got {self.hidden_dims}")
        for role in ROLES:
            for loc in self.adapter_locations(role):
                if isinstance(loc, str) and loc not in LOCATIONS:
                    raise ValueError(f"unknown adapter location '{loc}', expected one of {LOCATIONS} or an index")

    @classmethod
    def from_dict(cls, config: dict) -> PolicyArch:
        config = dict(config)
        adapter = dict(config.pop("adapter", None) or {})
        hypernet = HypernetOptions(**(adapter.pop("hypernet", None) or {}))
        for key in ("bottleneck_dims", "actor_locations", "critic_locations"):
            if key in adapter:
                adapter[key] = tuple(adapter[key])
        for key in ("hidden_dims", "cgate_hidden_dims", "flap_hidden_dims"):
            if config.get(key) is not None:
                config[key] = tuple(config[key])
        return cls(adapter=AdapterOptions(hypernet=hypernet, **adapter), **config)

    def with_width(self, width: int) -> PolicyArch:
        return dataclasses.replace(self, hidden_dims=(int(width),) * len(self.hidden_dims))

    def adapter_locations(self, role: str) -> tuple:
        if self.kind != "adapter":
            return ()
        return self.adapter.actor_locations if role == "actor" else self.adapter.critic_locations


def resolve_location(location, n_layers: int) -> int:
    """Feature position: 0 is the network input, n_layers - 1 feeds the head, n_layers is the output."""
    if isinstance(location, (int, np.integer)):
        if not 0 <= location <= n_layers:
            raise ValueError(f"adapter location {location} outside [0, {n_layers}]")
        return int(location)
    return {"start": 0, "base_f": max(n_layers - 2, 0), "base": n_layers - 1, "end": n_layers}[location]


class _Network:
    """Layer plan of one actor or critic for a given architecture and environment."""

    def __init__(self, arch: PolicyArch, dims: EnvDims, role: str, prefix: str, warn: bool = True):
        if arch.kind in ("cgate", "flap", "adapter") and dims.context_dim < 1:
            raise ShapeError(f"'{arch.kind}' needs a context, got context_dim={dims.context_dim}", prefix)
        self.arch, self.dims, self.role, self.prefix = arch, dims, role, prefix
        in_dim = dims.state_dim + (dims.action_dim if role == "critic" else 0)
        if arch.kind == "concat":
            in_dim += dims.context_dim
        out_dim = 2 * dims.action_dim if role == "actor" else 1
        self.sizes = [in_dim, *arch.hidden_dims, out_dim]
        self.n_layers = len(self.sizes) - 1
        self.feature_dim = self.sizes[-2]
        self.adapters: dict[int, tuple[AdapterSpec, ChunkedHypernetSpec]] = {}
        for loc in arch.adapter_locations(role):
            pos = resolve_location(loc, self.n_layers)
            self.adapters[pos] = self._adapter_specs(self.sizes[pos], pos, warn)
        opts = arch.adapter
        self.pre_activation = opts.actor_pre_activation if role == "actor" else opts.critic_pre_activation

    def _adapter_specs(self, width: int, pos: int, warn: bool) -> tuple[AdapterSpec, ChunkedHypernetSpec]:
        opts = self.arch.adapter
        bottleneck = tuple(opts.bottleneck_dims)
        if any(p >= width for p in bottleneck):
            key = (self.role, pos, width, bottleneck)
            if warn and key not in _WARNED:
                _WARNED.add(key)
                msg_warn(
                    f"{self.role} adapter at position {pos}: bottleneck {bottleneck} >= width {width}, "
                    f"using a single {width}x{width} layer"
                )
            bottleneck = ()
        adapter = AdapterSpec(width, bottleneck, opts.use_skip, opts.adapter_activation)
        hopts = opts.hypernet
        hnet = ChunkedHypernetSpec(
            self.dims.context_dim,
            parameter_count(adapter),
            chunk_size=hopts.chunk_size,
            trunk_hidden_dims=hopts.trunk_hidden_dims,
            embedding_dim=hopts.embedding_dim,
            chunked=hopts.chunked,
        )
        return adapter, hnet

    @property
    def cgate_encoder(self) -> MlpSpec:
        hidden = self.arch.cgate_hidden_dims or (self.feature_dim,)
        return MlpSpec(self.dims.context_dim, hidden, self.feature_dim)

    @property
    def flap_generator(self) -> MlpSpec:
        out_dim = self.sizes[-1]
        return MlpSpec(self.dims.context_dim, self.arch.flap_hidden_dims, out_dim * self.feature_dim + out_dim)

    def shapes(self) -> list[tuple[str, tuple]]:
        shapes = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if i == self.n_layers - 1 and self.arch.kind == "flap":
                continue
            shapes += dense_shapes(f"{self.prefix}.l{i}", fan_in, fan_out)
        if self.arch.kind == "cgate":
            shapes += mlp_shapes(self.cgate_encoder, f"{self.prefix}.gate")
        if self.arch.kind == "flap":
            shapes += mlp_shapes(self.flap_generator, f"{self.prefix}.head")
        for pos, (_, hnet) in sorted(self.adapters.items()):
            shapes += hypernet_shapes(hnet, f"{self.prefix}.hnet{pos}")
        return shapes

    def init(self, params: ParamStore, rng: np.random.Generator):
        # backbone first, so architectures sharing a backbone start from identical weights
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if i == self.n_layers - 1 and self.arch.kind == "flap":
                continue
            init_dense(params, f"{self.prefix}.l{i}", fan_in, fan_out, rng)
        if self.arch.kind == "cgate":
            init_mlp(self.cgate_encoder, params, f"{self.prefix}.gate", rng)
        if self.arch.kind == "flap":
            init_mlp(self.flap_generator, params, f"{self.prefix}.head", rng)
        hopts = self.arch.adapter.hypernet
        for pos, (_, hnet) in sorted(self.adapters.items()):
            init_hypernet(hnet, params, f"{self.prefix}.hnet{pos}", rng, hopts.embedding_std, hopts.final_scale)

    def forward(self, params: ParamStore, x: Tensor, c, cache: ThetaCache | None) -> Tensor:
        h = x
        for i in range(self.n_layers):
            if i in self.adapters:
                h = self._adapt(params, h, c, i, cache)
            if i == self.n_layers - 1:
                if self.arch.kind == "cgate":
                    h = cgate_equivalent_forward(h, mlp_forward(self.cgate_encoder, params, c, f"{self.prefix}.gate"))
                if self.arch.kind == "flap":
                    h = flap_head_forward(h, c, self.flap_generator, params, f"{self.prefix}.head")
                else:
                    h = dense(params, f"{self.prefix}.l{i}", h)
            else:
                h = dense(params, f"{self.prefix}.l{i}", h)
                if i + 1 not in self.adapters or self.pre_activation:
                    h = relu(h)
        if self.n_layers in self.adapters:
            h = self._adapt(params, h, c, self.n_layers, cache)
        return h

    def _adapt(self, params: ParamStore, h: Tensor, c, pos: int, cache: ThetaCache | None) -> Tensor:
        adapter, hnet = self.adapters[pos]
        return adapter_forward(h, c, hnet, adapter, params, f"{self.prefix}.hnet{pos}", cache)


@dataclass
class ActionDistribution:
    """Diagonal Gaussian over pre-squash actions; actions are tanh(x)."""

    mean: Tensor
    log_std: Tensor

    def sample(self, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
        """Reparameterised sample and its log-probability (summed over action dims, tanh-corrected)."""
        noise = rng.standard_normal(self.mean.shape)
        pre_squash = self.mean + exp(self.log_std) * noise
        action = tanh(pre_squash)
        # (x - mean) / std is exactly the drawn noise
        log_prob = -self.log_std - (0.5 * noise * noise + 0.5 * np.log(2.0 * np.pi))
        log_prob = log_prob - log(1.0 - square(action) + 1e-6)
        return action, reduce_sum(log_prob, axis=-1)

    def mode(self) -> Tensor:
        return tanh(self.mean)


def _batch_inputs(*arrays):
    tensors = [as_tensor(a) for a in arrays]
    single = tensors[0].ndim == 1
    if single:
        tensors = [reshape(t, (1, t.shape[0])) for t in tensors]
    return single, tensors


def actor_forward(
    arch: PolicyArch, dims: EnvDims, params: ParamStore, s, c, cache: ThetaCache | None = None
) -> ActionDistribution:
    single, (s, c) = _batch_inputs(s, c)
    if s.shape[1] != dims.state_dim or c.shape[1] != dims.context_dim:
        raise ShapeError(
            f"expected state {dims.state_dim} / context {dims.context_dim}, got {s.shape} / {c.shape}", "actor"
        )
    net = _Network(arch, dims, "actor", "actor")
    x = concat([s, c], axis=1) if arch.kind == "concat" and dims.context_dim > 0 else s
    raw = net.forward(params, x, c, cache)
    a = dims.action_dim
    mean = raw[:, :a]
    log_std = arch.log_std_min + 0.5 * (arch.log_std_max - arch.log_std_min) * (tanh(raw[:, a:]) + 1.0)
    if single:
        mean, log_std = mean[0], log_std[0]
    return ActionDistribution(mean, log_std)


def critic_forward(
    arch: PolicyArch, dims: EnvDims, params: ParamStore, s, a, c, prefix: str = "q1", cache: ThetaCache | None = None
) -> Tensor:
    """Q-values (B,) for a batch, or a scalar for a single (s, a, c)."""
    single, (s, a, c) = _batch_inputs(s, a, c)
    if s.shape[1] != dims.state_dim or a.shape[1] != dims.action_dim or c.shape[1] != dims.context_dim:
        raise ShapeError(f"critic inputs {s.shape}, {a.shape}, {c.shape} do not match {dims}", prefix)
    net = _Network(arch, dims, "critic", prefix)
    parts = [s, a, c] if arch.kind == "concat" and dims.context_dim > 0 else [s, a]
    q = net.forward(params, concat(parts, axis=1), c, cache)[:, 0]
    return q[0] if single else q


def flap_head_forward(phi_s, c, generator: MlpSpec, params: ParamStore, prefix: str = "head") -> Tensor:
    """Final linear layer whose (W, b) come from a generator MLP on the context: W(c) phi + b(c)."""
    single, (phi_s, c) = _batch_inputs(phi_s, c)
    width = phi_s.shape[1]
    out_dim = generator.output_dim // (width + 1)
    if out_dim * (width + 1) != generator.output_dim:
        raise ShapeError(
            f"generator output {generator.output_dim} does not split into a head over {width} features", prefix
        )
    generated = mlp_forward(generator, params, c, prefix)
    batch = phi_s.shape[0]
    w = reshape(generated[:, : out_dim * width], (batch, out_dim, width))
    out = batched_matvec(w, phi_s, layer=prefix) + generated[:, out_dim * width :]
    return out[0] if single else out


def param_shapes(arch: PolicyArch, dims: EnvDims, role: str, prefix: str | None = None) -> list[tuple[str, tuple]]:
    return _Network(arch, dims, role, prefix or ("actor" if role == "actor" else "q1"), warn=False).shapes()


def count_parameters(arch: PolicyArch, dims: EnvDims) -> int:
    """Learnable parameters of the actor plus one critic."""
    return sum(int(np.prod(shape)) for role in ROLES for _, shape in param_shapes(arch, dims, role))


def init_actor(arch: PolicyArch, dims: EnvDims, rng: np.random.Generator) -> ParamStore:
    params = ParamStore()
    _Network(arch, dims, "actor", "actor").init(params, rng)
    return params


def init_critic(arch: PolicyArch, dims: EnvDims, rng: np.random.Generator, heads: tuple = ("q1", "q2")) -> ParamStore:
    params = ParamStore()
    for head in heads:
        _Network(arch, dims, "critic", head).init(params, rng)
    return params


def equalize_parameters(
    reference_arch: PolicyArch,
    target: PolicyArch,
    dims: EnvDims,
    tolerance: float = 0.05,
    max_width: int = 1 << 16,
) -> int:
    """
    Uniform hidden width for target whose parameter count is closest to the reference

    Parameters
    -----------------
    - reference_arch: architecture whose count is the budget
    - target: architecture to resize (all hidden layers get the same width)
    - dims: environment dimensions
    - tolerance: accepted relative deviation from the budget

    Returns
    -----------------
    - hidden width
    """
    budget = count_parameters(reference_arch, dims)

    def count(width: int) -> int:
        return count_parameters(target.with_width(width), dims)

    if count(1) > budget * (1.0 + tolerance):
        raise ParameterBudgetError(
            f"'{target.kind}' needs {count(1)} parameters at width 1, budget is {budget} (+{tolerance:.0%})"
        )
    high = 1
    while count(high) < budget and high < max_width:
        high *= 2
    low = 1
    # smallest width reaching the budget; counts grow monotonically with width
    while low < high:
        mid = (low + high) // 2
        if count(mid) < budget:
            low = mid + 1
        else:
            high = mid
    best = min({max(low - 1, 1), low}, key=lambda w: (abs(count(w) - budget), w))
    if abs(count(best) - budget) > tolerance * budget:
        raise ParameterBudgetError(
            f"no width brings '{target.kind}' within {tolerance:.0%} of {budget} parameters (closest {count(best)})"
        )
    return best


@dataclass
class Policy:
    """Trained or untrained actor bundled with what is needed to act."""

    arch: PolicyArch
    dims: EnvDims
    params: ParamStore
    cache: ThetaCache = field(default_factory=ThetaCache)

    def mean_action(self, s, c) -> np.ndarray:
        with no_grad():
            return actor_forward(self.arch, self.dims, self.params, s, c, self.cache).mode().data

    def sample_action(self, s, c, rng: np.random.Generator) -> np.ndarray:
        with no_grad():
            action, _ = actor_forward(self.arch, self.dims, self.params, s, c, self.cache).sample(rng)
        return action.data


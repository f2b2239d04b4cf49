"""
file: hyper_adapter.py
brief: chunked hypernetworks mapping a context to the weights of a bottleneck adapter, and the adapter forward pass
note: generated weight vector layout, per adapter layer in order: W (out x in, row-major) then b (out);
      for the default bottleneck this is down W, down b, up W, up b
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np  # pylint: disable=import-error

from .nn_core import (
    MlpSpec,
    ParamStore,
    ShapeError,
    Tensor,
    activate,
    as_tensor,
    batched_matvec,
    concat,
    init_mlp,
    is_grad_enabled,
    mlp_forward,
    mlp_shapes,
    mul,
    reshape,
)

ADAPTER_ACTIVATIONS = ("relu", "tanh", "none")


@dataclass(frozen=True)
class AdapterSpec:
    feature_dim: int
    bottleneck_dims: tuple = (32,)
    use_skip: bool = True
    adapter_activation: str = "relu"
    use_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "bottleneck_dims", tuple(int(p) for p in self.bottleneck_dims))
        if self.feature_dim < 1:
            raise ValueError(f"adapter feature_dim must be positive, got {self.feature_dim}")
        for dim in self.bottleneck_dims:
            if not 1 <= dim < self.feature_dim:
                raise ValueError(f"bottleneck dim {dim} must lie in [1, {self.feature_dim})")
        if self.adapter_activation not in ADAPTER_ACTIVATIONS:
            raise ValueError(f"unknown adapter activation '{self.adapter_activation}'")

    @property
    def layers(self) -> list[tuple[int, int]]:
        sizes = [self.feature_dim, *self.bottleneck_dims, self.feature_dim]
        return list(zip(sizes[:-1], sizes[1:]))

    def partition(self) -> list[tuple[int, int, int, int | None]]:
        """Per layer: (fan_in, fan_out, weight offset, bias offset or None)."""
        offsets = []
        pos = 0
        for fan_in, fan_out in self.layers:
            w_pos = pos
            pos += fan_in * fan_out
            b_pos = None
            if self.use_bias:
                b_pos = pos
                pos += fan_out
            offsets.append((fan_in, fan_out, w_pos, b_pos))
        return offsets


def parameter_count(spec: AdapterSpec) -> int:
    return sum(fan_in * fan_out + (fan_out if spec.use_bias else 0) for fan_in, fan_out in spec.layers)


@dataclass(frozen=True)
class ChunkedHypernetSpec:
    """
    Hypernetwork producing target_param_count values in num_chunks segments of chunk_size.
    With chunked=False a single trunk pass produces all values and no embeddings are used.
    """

    context_dim: int
    target_param_count: int
    chunk_size: int = 330
    trunk_hidden_dims: tuple = (33, 33)
    embedding_dim: int = 8
    num_chunks: int | None = None
    chunked: bool = True
    trunk_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "trunk_hidden_dims", tuple(int(h) for h in self.trunk_hidden_dims))
        if self.context_dim < 1 or self.target_param_count < 1:
            raise ValueError("hypernetwork context_dim and target_param_count must be positive")
        if not self.chunked:
            object.__setattr__(self, "chunk_size", self.target_param_count)
            object.__setattr__(self, "num_chunks", 1)
            object.__setattr__(self, "embedding_dim", 0)
            return
        if self.chunk_size < 1 or self.embedding_dim < 1:
            raise ValueError("chunk_size and embedding_dim must be positive")
        if self.num_chunks is None:
            object.__setattr__(self, "num_chunks", math.ceil(self.target_param_count / self.chunk_size))
        if self.chunk_size * self.num_chunks < self.target_param_count:
            raise ValueError(
                f"{self.num_chunks} chunks of {self.chunk_size} cannot cover {self.target_param_count} parameters"
            )

    @property
    def trunk(self) -> MlpSpec:
        return MlpSpec(
            self.context_dim + self.embedding_dim, self.trunk_hidden_dims, self.chunk_size, self.trunk_activation
        )


def hypernet_shapes(spec: ChunkedHypernetSpec, prefix: str) -> list[tuple[str, tuple]]:
    shapes = [(f"{prefix}.emb", (spec.num_chunks, spec.embedding_dim))] if spec.chunked else []
    return shapes + mlp_shapes(spec.trunk, f"{prefix}.trunk")


def hypernet_param_count(spec: ChunkedHypernetSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in hypernet_shapes(spec, "h"))


def init_hypernet(
    spec: ChunkedHypernetSpec,
    params: ParamStore,
    prefix: str,
    rng: np.random.Generator,
    embedding_std: float = 0.05,
    final_scale: float = 0.1,
):
    """Embeddings ~ N(0, embedding_std); the last trunk layer is shrunk so generated weights start near zero."""
    if spec.chunked:
        params.add(f"{prefix}.emb", rng.normal(0.0, embedding_std, size=(spec.num_chunks, spec.embedding_dim)))
    init_mlp(spec.trunk, params, f"{prefix}.trunk", rng, final_scale=final_scale)


def hypernet_forward(spec: ChunkedHypernetSpec, params: ParamStore, c, prefix: str = "hnet") -> Tensor:
    """Generate theta (B, P) for a batch of contexts (B, context_dim), or (P,) for a single context."""
    c = as_tensor(c)
    single = c.ndim == 1
    if single:
        c = reshape(c, (1, c.shape[0]))
    if c.ndim != 2 or c.shape[1] != spec.context_dim:
        raise ShapeError(f"expected context length {spec.context_dim}, got shape {c.shape}", f"{prefix}.trunk.l0")

    # contexts repeat heavily within a batch (one per episode), so only distinct rows go through the trunk
    inverse = None
    rows = c
    if not c.requires_grad:
        unique, inverse = np.unique(c.data, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        rows = Tensor(unique)
    n_rows, n_chunks = rows.shape[0], spec.num_chunks

    if spec.chunked:
        row_index = np.repeat(np.arange(n_rows), n_chunks)
        chunk_index = np.tile(np.arange(n_chunks), n_rows)
        trunk_in = concat([rows[row_index], params.leaf(f"{prefix}.emb")[chunk_index]], axis=1)
    else:
        trunk_in = rows
    chunks = mlp_forward(spec.trunk, params, trunk_in, prefix=f"{prefix}.trunk")
    theta = reshape(chunks, (n_rows, n_chunks * spec.chunk_size))[:, : spec.target_param_count]
    if inverse is not None and not np.array_equal(inverse, np.arange(c.shape[0])):
        theta = theta[inverse]
    return theta[0] if single else theta


class ThetaCache:
    """Generated weights per (hypernetwork, context), valid for one parameter-store version."""

    def __init__(self):
        self._owner = None
        self._values: dict[tuple[str, bytes], np.ndarray] = {}

    def __len__(self):
        return len(self._values)

    def generate(self, spec: ChunkedHypernetSpec, params: ParamStore, c: np.ndarray, prefix: str) -> Tensor:
        owner = (id(params), params.version)
        if owner != self._owner:
            self._values.clear()
            self._owner = owner
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        keys = [(prefix, row.tobytes()) for row in c]
        missing = [i for i, key in enumerate(keys) if key not in self._values]
        if missing:
            fresh = hypernet_forward(spec, params, c[missing], prefix).data
            for i, row in zip(missing, fresh):
                self._values[keys[i]] = row
        return Tensor(np.stack([self._values[key] for key in keys]))


@dataclass
class GeneratedWeights:
    theta: Tensor
    spec: AdapterSpec

    def __post_init__(self):
        if self.theta.shape[-1] != parameter_count(self.spec):
            raise ShapeError(
                f"theta has {self.theta.shape[-1]} values, the adapter needs {parameter_count(self.spec)}", "adapter"
            )


def generate_adapter_weights(
    hnet: ChunkedHypernetSpec,
    params: ParamStore,
    c,
    adapter: AdapterSpec,
    prefix: str = "hnet",
    cache: ThetaCache | None = None,
) -> GeneratedWeights:
    if hnet.target_param_count != parameter_count(adapter):
        raise ShapeError(
            f"hypernetwork generates {hnet.target_param_count} values for a {parameter_count(adapter)}-value adapter",
            prefix,
        )
    if cache is not None and not is_grad_enabled():
        c = c.data if isinstance(c, Tensor) else np.asarray(c, dtype=np.float64)
        theta = cache.generate(hnet, params, c, prefix)
        if c.ndim == 1:
            theta = theta[0]
    else:
        theta = hypernet_forward(hnet, params, c, prefix)
    return GeneratedWeights(theta, adapter)


def adapter_apply(x, theta, spec: AdapterSpec, layer: str = "adapter") -> Tensor:
    """Run the adapter on features x (d,) or (B, d) with flat weights theta (P,) or (B, P)."""
    x, theta = as_tensor(x), as_tensor(theta)
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, x.shape[0]))
    if x.shape[1] != spec.feature_dim:
        raise ShapeError(f"expected {spec.feature_dim} features, got shape {x.shape}", layer)
    if theta.shape[-1] != parameter_count(spec):
        raise ShapeError(f"expected {parameter_count(spec)} adapter weights, got {theta.shape[-1]}", layer)
    batch = x.shape[0]
    if theta.ndim == 1:
        theta = theta[np.zeros(batch, dtype=np.int64)]
    elif theta.shape[0] != batch:
        raise ShapeError(f"{theta.shape[0]} weight rows for a batch of {batch}", layer)

    partition = spec.partition()
    h = x
    for i, (fan_in, fan_out, w_pos, b_pos) in enumerate(partition):
        w = reshape(theta[:, w_pos : w_pos + fan_in * fan_out], (batch, fan_out, fan_in))
        h = batched_matvec(w, h, layer=f"{layer}.l{i}")
        if b_pos is not None:
            h = h + theta[:, b_pos : b_pos + fan_out]
        if i < len(partition) - 1:
            h = activate(h, spec.adapter_activation)
    out = x + h if spec.use_skip else h
    return out[0] if single else out


def adapter_forward(
    x,
    c,
    hnet: ChunkedHypernetSpec,
    adapter: AdapterSpec,
    params: ParamStore,
    prefix: str = "hnet",
    cache: ThetaCache | None = None,
) -> Tensor:
    weights = generate_adapter_weights(hnet, params, c, adapter, prefix, cache)
    return adapter_apply(x, weights.theta, adapter, layer=f"{prefix}.adapter")


def cgate_equivalent_forward(s_features, g_of_c) -> Tensor:
    """Feature gating s * g(c)."""
    s_features, g_of_c = as_tensor(s_features), as_tensor(g_of_c)
    if s_features.shape != g_of_c.shape:
        raise ShapeError(f"cannot gate {s_features.shape} features with {g_of_c.shape} gates", "cgate")
    return mul(s_features, g_of_c)

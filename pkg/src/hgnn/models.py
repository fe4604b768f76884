"""Hypermodel assembly: four architectures built from a ModelConfig.

one_level          broadcast graph vector onto nodes -> GNN stack -> pool ->
                   dense head.
two_level          GNN stack on nodes + dense stack on the graph vector,
                   concatenated before the head.
two_level_pseudo   adds a duration-bin one-hot matrix with its own GNN stack;
                   both node streams are concatenated per node and refined by
                   a third GNN stack before pooling.
two_level_embedding adds a learned activity-embedding matrix with its own GNN
                   stack, fused per node with the main stream.

Block order inside a layer: message passing / linear -> batch norm ->
(+ skip projection) -> activation -> dropout. GIN keeps its activation inside
its MLP, so no outer activation is applied there.
"""

import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .operators import OPERATOR_KINDS, OperatorParams, apply_operator
from .tensor import (
    Tensor,
    add,
    add_scalar,
    apply_activation,
    col_mean,
    concat_cols,
    dropout,
    matmul,
    mul,
    rowwise_reduce,
    rsqrt,
    square,
    sub,
    take_rows,
)
from .tensor import ACTIVATIONS

ARCHITECTURES = ("one_level", "two_level", "two_level_pseudo", "two_level_embedding")
TWO_LEVEL_FAMILY = ("two_level", "two_level_pseudo", "two_level_embedding")
POOLINGS = ("mean", "add", "max")


class ConfigError(ValueError):
    """A ModelConfig is structurally invalid for its architecture/operator."""


@dataclass
class LayerSpec:
    units: int
    activation: str = "relu"
    dropout: Optional[float] = None
    bn_momentum: Optional[float] = None
    bn_eps: Optional[float] = None
    skip: bool = False

    def __post_init__(self):
        if self.activation is not None and self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if (self.bn_momentum is None) != (self.bn_eps is None):
            raise ConfigError("batch norm needs both momentum and eps")
        if self.units < 1:
            raise ConfigError(f"units must be positive, got {self.units}")

    @property
    def batch_norm(self):
        return self.bn_momentum is not None

    def to_json_dict(self):
        d = {"units": self.units, "activation": self.activation}
        if self.dropout is not None:
            d["dropout"] = self.dropout
        if self.batch_norm:
            d["bn_momentum"] = self.bn_momentum
            d["bn_eps"] = self.bn_eps
        if self.skip:
            d["skip"] = True
        return d

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            units=int(d["units"]),
            activation=d.get("activation", "relu"),
            dropout=d.get("dropout"),
            bn_momentum=d.get("bn_momentum"),
            bn_eps=d.get("bn_eps"),
            skip=bool(d.get("skip", False)),
        )


def _layers(specs):
    return [s if isinstance(s, LayerSpec) else LayerSpec.from_json_dict(s) for s in specs]


@dataclass
class ModelConfig:
    architecture: str
    operator: str
    gnn_layers: list
    final_dense_layers: list
    pooling: str
    output_size: int
    sequence_dense_layers: Optional[list] = None   # two-level family
    pseudo_gnn_layers: Optional[list] = None       # two_level_pseudo
    concat_gnn_layers: Optional[list] = None       # two_level_pseudo
    embedding_dim: Optional[int] = None            # two_level_embedding
    graph_aggregation: Optional[str] = None        # operator == graph
    K: Optional[int] = None                        # operator in {tag, cheb}
    exclude_activity_onehot: bool = False          # two_level_embedding option

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.operator not in OPERATOR_KINDS:
            raise ConfigError(f"unknown operator {self.operator!r}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        self.gnn_layers = _layers(self.gnn_layers)
        self.final_dense_layers = _layers(self.final_dense_layers)
        if not 1 <= len(self.gnn_layers) <= 5:
            raise ConfigError(f"gnn_layers must have 1-5 layers, got {len(self.gnn_layers)}")
        if not 1 <= len(self.final_dense_layers) <= 3:
            raise ConfigError(f"final_dense_layers must have 1-3 layers")
        if self.output_size < 2:
            raise ConfigError("output_size must be >= 2")

        two_level = self.architecture in TWO_LEVEL_FAMILY
        self._require("sequence_dense_layers", two_level)
        if two_level:
            self.sequence_dense_layers = _layers(self.sequence_dense_layers)
            if not 1 <= len(self.sequence_dense_layers) <= 3:
                raise ConfigError("sequence_dense_layers must have 1-3 layers")

        pseudo = self.architecture == "two_level_pseudo"
        self._require("pseudo_gnn_layers", pseudo)
        self._require("concat_gnn_layers", pseudo)
        if pseudo:
            self.pseudo_gnn_layers = _layers(self.pseudo_gnn_layers)
            self.concat_gnn_layers = _layers(self.concat_gnn_layers)
            if not 1 <= len(self.pseudo_gnn_layers) <= 5:
                raise ConfigError("pseudo_gnn_layers must have 1-5 layers")
            if not 1 <= len(self.concat_gnn_layers) <= 5:
                raise ConfigError("concat_gnn_layers must have 1-5 layers")

        self._require("embedding_dim", self.architecture == "two_level_embedding")
        self._require("graph_aggregation", self.operator == "graph")
        self._require("K", self.operator in ("tag", "cheb"))
        if self.graph_aggregation is not None and self.graph_aggregation not in POOLINGS:
            raise ConfigError(f"unknown graph_aggregation {self.graph_aggregation!r}")
        if self.K is not None and self.K < 0:
            raise ConfigError("K must be >= 0")
        if self.embedding_dim is not None and not 10 <= self.embedding_dim <= 50:
            warnings.warn(f"embedding_dim {self.embedding_dim} outside the tuned range 10-50")

    def _require(self, name, needed):
        val = getattr(self, name)
        if needed and val is None:
            raise ConfigError(f"{self.architecture}/{self.operator} requires {name}")
        if not needed and val is not None:
            raise ConfigError(f"{name} is only valid for its architecture/operator, "
                              f"not {self.architecture}/{self.operator}")

    def to_json_dict(self):
        d = {
            "architecture": self.architecture,
            "operator": self.operator,
            "gnn_layers": [s.to_json_dict() for s in self.gnn_layers],
            "final_dense_layers": [s.to_json_dict() for s in self.final_dense_layers],
            "pooling": self.pooling,
            "output_size": self.output_size,
        }
        if self.sequence_dense_layers is not None:
            d["sequence_dense_layers"] = [s.to_json_dict() for s in self.sequence_dense_layers]
        if self.pseudo_gnn_layers is not None:
            d["pseudo_gnn_layers"] = [s.to_json_dict() for s in self.pseudo_gnn_layers]
        if self.concat_gnn_layers is not None:
            d["concat_gnn_layers"] = [s.to_json_dict() for s in self.concat_gnn_layers]
        if self.embedding_dim is not None:
            d["embedding_dim"] = self.embedding_dim
        if self.graph_aggregation is not None:
            d["graph_aggregation"] = self.graph_aggregation
        if self.K is not None:
            d["K"] = self.K
        if self.exclude_activity_onehot:
            d["exclude_activity_onehot"] = True
        return d

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            architecture=d["architecture"],
            operator=d["operator"],
            gnn_layers=d["gnn_layers"],
            final_dense_layers=d["final_dense_layers"],
            pooling=d["pooling"],
            output_size=int(d["output_size"]),
            sequence_dense_layers=d.get("sequence_dense_layers"),
            pseudo_gnn_layers=d.get("pseudo_gnn_layers"),
            concat_gnn_layers=d.get("concat_gnn_layers"),
            embedding_dim=d.get("embedding_dim"),
            graph_aggregation=d.get("graph_aggregation"),
            K=d.get("K"),
            exclude_activity_onehot=bool(d.get("exclude_activity_onehot", False)),
        )

    def to_json(self):
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


# -- runtime blocks -------------------------------------------------------------


class BatchNorm:
    """Column-wise batch normalization over the rows it is given (nodes for
    GNN stacks, graphs for dense stacks). PyTorch-style momentum: running =
    (1 - m) * running + m * batch."""

    def __init__(self, width, momentum, eps):
        self.gamma = Tensor(np.ones((1, width)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, width)), requires_grad=True)
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x, training):
        if training:
            mu = col_mean(x)
            xc = sub(x, mu)
            var = col_mean(square(xc))
            inv = rsqrt(add_scalar(var, self.eps))
            xn = mul(xc, inv)
            n = x.rows
            batch_mean = x.data.mean(axis=0)
            batch_var = x.data.var(axis=0)
            unbiased = batch_var * (n / (n - 1)) if n > 1 else batch_var
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * batch_mean
            self.running_var = (1 - m) * self.running_var + m * unbiased
        else:
            shift = Tensor(self.running_mean.reshape(1, -1))
            scale_vec = Tensor((1.0 / np.sqrt(self.running_var + self.eps)).reshape(1, -1))
            xn = mul(sub(x, shift), scale_vec)
        return add(mul(xn, self.gamma), self.beta)


class GnnLayer:
    def __init__(self, op_params, bn, activation, drop_rate, skip_proj):
        self.op = op_params
        self.bn = bn
        self.activation = activation      # None for gin (lives in its MLP)
        self.drop_rate = drop_rate
        self.skip_proj = skip_proj        # None | "identity" | Tensor

    def parameters(self):
        ps = self.op.parameters()
        if self.bn is not None:
            ps += self.bn.parameters()
        if isinstance(self.skip_proj, Tensor):
            ps.append(self.skip_proj)
        return ps

    def forward(self, x, batch, training, rng):
        h = apply_operator(self.op, x, batch)
        if self.bn is not None:
            h = self.bn.forward(h, training)
        if self.skip_proj is not None:
            sk = x if self.skip_proj == "identity" else matmul(x, self.skip_proj)
            h = add(h, sk)
        h = apply_activation(h, self.activation)
        if training and self.drop_rate:
            h = dropout(h, self.drop_rate, rng)
        return h


class DenseLayer:
    def __init__(self, weight, bias, bn, activation, drop_rate):
        self.weight = weight
        self.bias = bias
        self.bn = bn
        self.activation = activation
        self.drop_rate = drop_rate

    def parameters(self):
        ps = [self.weight, self.bias]
        if self.bn is not None:
            ps += self.bn.parameters()
        return ps

    def forward(self, x, training, rng):
        h = add(matmul(x, self.weight), self.bias)
        if self.bn is not None:
            h = self.bn.forward(h, training)
        h = apply_activation(h, self.activation)
        if training and self.drop_rate:
            h = dropout(h, self.drop_rate, rng)
        return h


def _kaiming(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def _operator_params(kind, in_dim, out_dim, spec, config, rng):
    if kind in ("gcn", "graph"):
        weights = [_kaiming(rng, in_dim, out_dim)]
    elif kind == "sage":
        weights = [_kaiming(rng, 2 * in_dim, out_dim)]
    elif kind in ("tag", "cheb"):
        weights = [_kaiming(rng, in_dim, out_dim) for _ in range(config.K + 1)]
    elif kind == "gin":
        weights = [
            _kaiming(rng, in_dim, out_dim),
            Tensor(np.zeros((1, out_dim)), requires_grad=True),
            _kaiming(rng, out_dim, out_dim),
            Tensor(np.zeros((1, out_dim)), requires_grad=True),
        ]
    else:
        raise ConfigError(f"unknown operator {kind!r}")
    return OperatorParams(
        kind=kind,
        in_dim=in_dim,
        out_dim=out_dim,
        weights=weights,
        K=config.K or 0,
        epsilon=0.0,
        aggregation=config.graph_aggregation or "add",
        activation=spec.activation if kind == "gin" else None,
    )


def _build_gnn_stack(config, specs, in_dim, rng):
    layers = []
    for spec in specs:
        bn = BatchNorm(spec.units, spec.bn_momentum, spec.bn_eps) if spec.batch_norm else None
        skip = None
        if spec.skip:
            skip = "identity" if in_dim == spec.units else _kaiming(rng, in_dim, spec.units)
        op = _operator_params(config.operator, in_dim, spec.units, spec, config, rng)
        outer_act = None if config.operator == "gin" else spec.activation
        layers.append(GnnLayer(op, bn, outer_act, spec.dropout, skip))
        in_dim = spec.units
    return layers, in_dim


def _build_dense_stack(specs, in_dim, rng):
    layers = []
    for spec in specs:
        bn = BatchNorm(spec.units, spec.bn_momentum, spec.bn_eps) if spec.batch_norm else None
        layers.append(DenseLayer(
            _kaiming(rng, in_dim, spec.units),
            Tensor(np.zeros((1, spec.units)), requires_grad=True),
            bn, spec.activation, spec.dropout,
        ))
        in_dim = spec.units
    return layers, in_dim


def pool(nodes, node_graph, n_graphs, mode):
    """Per-graph readout over node rows; output row order follows the batch
    order of the graphs. 'add' is the sum reduction of Table-style naming."""
    reduce_mode = "sum" if mode == "add" else mode
    return rowwise_reduce(nodes, reduce_mode, node_graph, n_graphs)


class Model:
    """A built hypermodel. Exclusive to one training run; eval-mode forwards
    are read-only and bit-reproducible."""

    def __init__(self, config, dims):
        self.config = config
        self.dims = dict(dims)
        self.training = True
        self._rng = np.random.default_rng(0)
        self.gnn_stack = []
        self.pseudo_stack = []
        self.concat_stack = []
        self.aux_stack = []
        self.seq_stack = []
        self.dense_stack = []
        self.embedding = None
        self.out_weight = None
        self.out_bias = None

    def set_train(self):
        self.training = True

    def set_eval(self):
        self.training = False

    def seed_dropout(self, seed):
        self._rng = np.random.default_rng(seed)

    def parameters(self):
        ps = []
        for stack in (self.gnn_stack, self.pseudo_stack, self.concat_stack,
                      self.aux_stack, self.seq_stack, self.dense_stack):
            for layer in stack:
                ps += layer.parameters()
        if self.embedding is not None:
            ps.append(self.embedding)
        ps += [self.out_weight, self.out_bias]
        return ps

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def n_parameters(self):
        return sum(p.data.size for p in self.parameters())

    # -- forward ----------------------------------------------------------------

    def _run_gnn(self, stack, h, batch):
        for layer in stack:
            h = layer.forward(h, batch, self.training, self._rng)
        return h

    def _run_dense(self, stack, h):
        for layer in stack:
            h = layer.forward(h, self.training, self._rng)
        return h

    def _main_nodes(self, batch):
        x = batch.x
        if self.config.exclude_activity_onehot:
            x = x[:, self.dims["n_activities"]:]
        return Tensor(x)

    def forward(self, batch):
        cfg = self.config
        if cfg.architecture == "one_level":
            g_nodes = take_rows(Tensor(batch.g), batch.node_graph)
            h = concat_cols([Tensor(batch.x), g_nodes])
            h = self._run_gnn(self.gnn_stack, h, batch)
            pooled = pool(h, batch.node_graph, batch.n_graphs, cfg.pooling)
            z = self._run_dense(self.dense_stack, pooled)
        else:
            if cfg.architecture == "two_level":
                h = self._run_gnn(self.gnn_stack, Tensor(batch.x), batch)
            elif cfg.architecture == "two_level_pseudo":
                n_bins = self.dims["n_bins"]
                if batch.duration_bins.max(initial=0) >= n_bins:
                    raise ConfigError(
                        f"duration bin {int(batch.duration_bins.max())} >= n_bins {n_bins}"
                    )
                onehot = np.zeros((batch.n_nodes, n_bins))
                onehot[np.arange(batch.n_nodes), batch.duration_bins] = 1.0
                hp = self._run_gnn(self.pseudo_stack, Tensor(onehot), batch)
                hm = self._run_gnn(self.gnn_stack, Tensor(batch.x), batch)
                h = self._run_gnn(self.concat_stack, concat_cols([hm, hp]), batch)
            else:  # two_level_embedding
                emb = take_rows(self.embedding, batch.activity_ids)
                he = self._run_gnn(self.aux_stack, emb, batch)
                hm = self._run_gnn(self.gnn_stack, self._main_nodes(batch), batch)
                h = concat_cols([hm, he])
            pooled = pool(h, batch.node_graph, batch.n_graphs, cfg.pooling)
            s = self._run_dense(self.seq_stack, Tensor(batch.g))
            z = self._run_dense(self.dense_stack, concat_cols([pooled, s]))
        return add(matmul(z, self.out_weight), self.out_bias)


def build_model(config, dims, seed=0):
    """Deterministically allocate and initialize a Model.

    dims must carry d_N, d_G, n_bins, n_activities. Parameter shapes are a
    pure function of (config, dims, architecture wiring).
    """
    for key in ("d_N", "d_G", "n_bins", "n_activities"):
        if key not in dims or dims[key] < 0:
            raise ConfigError(f"dims must include nonnegative {key}")
    cfg = config
    rng = np.random.default_rng(seed)
    model = Model(cfg, dims)

    if cfg.architecture == "one_level":
        main_in = dims["d_N"] + dims["d_G"]
    elif cfg.exclude_activity_onehot:
        main_in = dims["d_N"] - dims["n_activities"]
        if main_in < 1:
            raise ConfigError(
                "exclude_activity_onehot leaves no node features "
                f"(d_N={dims['d_N']}, n_activities={dims['n_activities']})"
            )
    else:
        main_in = dims["d_N"]
    model.gnn_stack, node_out = _build_gnn_stack(cfg, cfg.gnn_layers, main_in, rng)

    if cfg.architecture == "two_level_pseudo":
        model.pseudo_stack, pseudo_out = _build_gnn_stack(
            cfg, cfg.pseudo_gnn_layers, dims["n_bins"], rng
        )
        model.concat_stack, node_out = _build_gnn_stack(
            cfg, cfg.concat_gnn_layers, node_out + pseudo_out, rng
        )
    elif cfg.architecture == "two_level_embedding":
        model.embedding = Tensor(
            rng.uniform(-0.05, 0.05, size=(dims["n_activities"], cfg.embedding_dim)),
            requires_grad=True,
        )
        # the auxiliary stack mirrors the main layer specs with its own weights
        model.aux_stack, aux_out = _build_gnn_stack(
            cfg, cfg.gnn_layers, cfg.embedding_dim, rng
        )
        node_out = node_out + aux_out

    if cfg.architecture == "one_level":
        head_in = node_out
    else:
        model.seq_stack, seq_out = _build_dense_stack(cfg.sequence_dense_layers, dims["d_G"], rng)
        head_in = node_out + seq_out

    model.dense_stack, head_out = _build_dense_stack(cfg.final_dense_layers, head_in, rng)
    model.out_weight = _kaiming(rng, head_out, cfg.output_size)
    model.out_bias = Tensor(np.zeros((1, cfg.output_size)), requires_grad=True)
    return model

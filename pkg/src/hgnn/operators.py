"""The six message-passing operators over temporally weighted chain graphs.

Graphs are directed i -> i+1 (messages flow forward in time) and adjacency is
never symmetrized: A[target][source] = w. All operators consume a node matrix
plus the edge arrays of a GraphBatch and honor the edge weights, so that a
zero-weight edge contributes nothing (causality for simultaneous events).

Activation handling: gcn/graph/sage/tag apply ``params.activation`` to the
aggregation result; cheb has no activation of its own in its update rule, so
the configured one is applied after the polynomial sum; gin uses it as the
hidden activation of its 2-layer MLP.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor import (
    add,
    apply_activation,
    concat_cols,
    edge_aggregate,
    edge_max_aggregate,
    matmul,
    scale,
    scale_rows,
)

OPERATOR_KINDS = ("gcn", "graph", "sage", "tag", "cheb", "gin")


@dataclass
class GraphBatch:
    """One or more chain graphs packed into flat arrays.

    Node rows of consecutive graphs are stacked; edge indices are global.
    """

    x: np.ndarray              # (N, d_N) node features
    g: np.ndarray              # (B, d_G) graph-level features
    src: np.ndarray            # (E,) int64 edge sources
    dst: np.ndarray            # (E,) int64 edge targets
    w: np.ndarray              # (E,) float64 edge weights in [0, 1]
    node_graph: np.ndarray     # (N,) int64 graph membership per node
    labels: np.ndarray         # (B,) int64 class indices
    activity_ids: np.ndarray   # (N,) int64, -1 for padding
    duration_bins: np.ndarray  # (N,) int64
    n_graphs: int

    @property
    def n_nodes(self):
        return self.x.shape[0]


def collate(graphs) -> GraphBatch:
    """Pack EncodedGraph objects into a single batch, offsetting edge indices."""
    xs, gs, srcs, dsts, ws, membership, labels, acts, bins = [], [], [], [], [], [], [], [], []
    offset = 0
    for i, gr in enumerate(graphs):
        n = gr.node_features.shape[0]
        xs.append(gr.node_features)
        gs.append(gr.graph_features)
        srcs.append(gr.edge_index[0] + offset)
        dsts.append(gr.edge_index[1] + offset)
        ws.append(gr.edge_weights)
        membership.append(np.full(n, i, dtype=np.int64))
        labels.append(gr.label)
        acts.append(gr.activity_ids)
        bins.append(gr.duration_bins)
        offset += n
    return GraphBatch(
        x=np.ascontiguousarray(np.concatenate(xs, axis=0)),
        g=np.ascontiguousarray(np.vstack(gs)),
        src=np.concatenate(srcs).astype(np.int64),
        dst=np.concatenate(dsts).astype(np.int64),
        w=np.ascontiguousarray(np.concatenate(ws), dtype=np.float64),
        node_graph=np.concatenate(membership),
        labels=np.asarray(labels, dtype=np.int64),
        activity_ids=np.concatenate(acts).astype(np.int64),
        duration_bins=np.concatenate(bins).astype(np.int64),
        n_graphs=len(graphs),
    )


@dataclass
class OperatorParams:
    """Learnable state of one message-passing layer.

    weights layout by kind:
      gcn/graph:  [W]                       (in, out)
      sage:       [W]                       (2*in, out)
      tag/cheb:   [Theta_0 .. Theta_K]      each (in, out)
      gin:        [W1, b1, W2, b2]          MLP in->out->out
    """

    kind: str
    in_dim: int
    out_dim: int
    weights: list = field(default_factory=list)
    K: int = 0
    epsilon: float = 0.0
    aggregation: str = "add"          # graph kind only
    activation: Optional[str] = None

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")

    def parameters(self):
        return list(self.weights)


def _in_weight_sums(batch, n):
    deg = np.zeros(n)
    if len(batch.dst):
        np.add.at(deg, batch.dst, batch.w)
    return deg


def _check_weights_nonnegative(batch):
    if len(batch.w) and batch.w.min() < 0:
        raise ValueError(f"negative edge weight {batch.w.min()} (gaps are nonnegative)")


def forward_gcn(params, x, batch):
    """sigma(D^-1/2 (A_w + I) D^-1/2 X W) with degrees = row sums of A_w + I."""
    _check_weights_nonnegative(batch)
    n = x.rows
    z = matmul(x, params.weights[0])
    deg = _in_weight_sums(batch, n) + 1.0
    s = 1.0 / np.sqrt(deg)
    propagated = scale_rows(
        edge_aggregate(scale_rows(z, s), batch.src, batch.dst, batch.w, n), s
    )
    y = add(propagated, scale_rows(z, s * s))
    return apply_activation(y, params.activation)


def forward_graph(params, x, batch):
    """Left-normalized weighted aggregation; add/mean scale by edge weight,
    max takes the elementwise max of in-neighbor features (weights ignored)."""
    _check_weights_nonnegative(batch)
    n = x.rows
    z = matmul(x, params.weights[0])
    mode = params.aggregation
    if mode == "max":
        y = edge_max_aggregate(z, batch.src, batch.dst, n)
    else:
        y = edge_aggregate(z, batch.src, batch.dst, batch.w, n)
        if mode == "mean":
            deg = _in_weight_sums(batch, n)
            inv = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
            y = scale_rows(y, inv)
        elif mode != "add":
            raise ValueError(f"unknown aggregation {mode!r}")
    return apply_activation(y, params.activation)


def forward_sage(params, x, batch):
    """sigma([x || weighted in-neighbor mean] W); empty neighborhoods give a
    zero mean block."""
    n = x.rows
    nb = edge_aggregate(x, batch.src, batch.dst, batch.w, n)
    wsum = _in_weight_sums(batch, n)
    inv = np.where(wsum > 0, 1.0 / np.where(wsum > 0, wsum, 1.0), 0.0)
    nb_mean = scale_rows(nb, inv)
    y = matmul(concat_cols([x, nb_mean]), params.weights[0])
    return apply_activation(y, params.activation)


def forward_tag(params, x, batch):
    """sigma(sum_{k=0..K} A_w^k X Theta_k)."""
    n = x.rows
    acc = matmul(x, params.weights[0])
    p = x
    for k in range(1, params.K + 1):
        p = edge_aggregate(p, batch.src, batch.dst, batch.w, n)
        acc = add(acc, matmul(p, params.weights[k]))
    return apply_activation(acc, params.activation)


def _cheb_structure(batch, n):
    """Symmetrized normalization for the rescaled Laplacian.

    A_sym = (A_w + A_w^T)/2, D = diag(row sums of A_sym); with lambda_max
    fixed at 2, applying the rescaled Laplacian reduces to
    L~ x = -(D^-1/2 A_sym D^-1/2 x + 1[deg==0] * x); isolated nodes keep the
    0-diagonal convention of the normalized Laplacian, so an edgeless graph
    gives L~ = -I.
    """
    deg = np.zeros(n)
    if len(batch.src):
        half = 0.5 * batch.w
        np.add.at(deg, batch.dst, half)
        np.add.at(deg, batch.src, half)
    s = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    iso = (deg == 0).astype(np.float64)
    if len(batch.src):
        sym_src = np.concatenate([batch.src, batch.dst])
        sym_dst = np.concatenate([batch.dst, batch.src])
        coeff = 0.5 * np.concatenate([batch.w, batch.w]) * s[sym_src] * s[sym_dst]
    else:
        sym_src = sym_dst = np.zeros(0, dtype=np.int64)
        coeff = np.zeros(0)
    return sym_src, sym_dst, coeff, iso


def forward_cheb(params, x, batch):
    """sum_{k=0..K} T_k(L~) X Theta_k via the Chebyshev recurrence
    T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2}."""
    n = x.rows
    sym_src, sym_dst, coeff, iso = _cheb_structure(batch, n)

    def apply_lap(t):
        m = edge_aggregate(t, sym_src, sym_dst, coeff, n)
        return scale(add(m, scale_rows(t, iso)), -1.0)

    acc = matmul(x, params.weights[0])
    if params.K >= 1:
        t_prev, t_cur = x, apply_lap(x)
        acc = add(acc, matmul(t_cur, params.weights[1]))
        for k in range(2, params.K + 1):
            t_next = add(scale(apply_lap(t_cur), 2.0), scale(t_prev, -1.0))
            acc = add(acc, matmul(t_next, params.weights[k]))
            t_prev, t_cur = t_cur, t_next
    return apply_activation(acc, params.activation)


def forward_gin(params, x, batch):
    """MLP((1 + eps) x + weighted in-neighbor sum); 2-layer MLP whose hidden
    activation is params.activation."""
    n = x.rows
    nb = edge_aggregate(x, batch.src, batch.dst, batch.w, n)
    h = add(scale(x, 1.0 + params.epsilon), nb)
    w1, b1, w2, b2 = params.weights
    hidden = apply_activation(add(matmul(h, w1), b1), params.activation)
    return add(matmul(hidden, w2), b2)


_FORWARDS = {
    "gcn": forward_gcn,
    "graph": forward_graph,
    "sage": forward_sage,
    "tag": forward_tag,
    "cheb": forward_cheb,
    "gin": forward_gin,
}


def apply_operator(params, x, batch):
    return _FORWARDS[params.kind](params, x, batch)


def build_adjacency(batch, self_loops=False):
    """Dense weighted adjacency with A[target][source] = w; optional +1 diag.

    Mostly a test oracle: the forwards above work on edge lists directly.
    """
    n = batch.x.shape[0] if hasattr(batch, "x") else batch.node_features.shape[0]
    src = np.asarray(batch.src if hasattr(batch, "src") else batch.edge_index[0])
    dst = np.asarray(batch.dst if hasattr(batch, "dst") else batch.edge_index[1])
    w = np.asarray(batch.w if hasattr(batch, "w") else batch.edge_weights, dtype=np.float64)
    if len(src) and (src.min() < 0 or src.max() >= n or dst.min() < 0 or dst.max() >= n):
        raise IndexError(f"edge index out of range for {n} nodes")
    a = np.zeros((n, n))
    np.add.at(a, (dst, src), w)
    if self_loops:
        a[np.diag_indices(n)] += 1.0
    return a

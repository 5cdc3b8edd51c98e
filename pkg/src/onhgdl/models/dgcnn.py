"""Dynamic graph CNN: EdgeConv layers over k-NN graphs rebuilt in each layer's feature space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ..core import tensor as T
from ..core.layers import LayerParams, dense, dropout, global_max_pool, linear
from ..core.tensor import Tensor
from ..errors import ConfigError, ContractError, InputError
from .base import ForwardResult, PointCloudModel
from .pointnet import _stack


@dataclass
class DgcnnConfig:
    in_features: int = 4
    k: int = 20
    edge_widths: tuple[int, ...] = (64, 64, 128)
    pool_dim: int = 256
    head: tuple[int, ...] = (128, 64)
    num_classes: int = 2
    batch_norm: bool = True
    dropout: float = 0.3
    graph_features: str = "all"  # first graph on all 4 features, or "spatial" (x, y, z only)

    def __post_init__(self):
        self.edge_widths = tuple(self.edge_widths)
        self.head = tuple(self.head)
        if self.in_features != 4:
            raise ConfigError("DGCNN consumes exactly 4 features (x, y, z, thickness)")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not self.edge_widths:
            raise ConfigError("need at least one EdgeConv layer")
        if self.num_classes != 2:
            raise ConfigError("binary classifier: num_classes must be 2")
        if self.graph_features not in ("all", "spatial"):
            raise ConfigError("graph_features must be 'all' or 'spatial'")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


def _knn_exact(x: np.ndarray, k: int, chunk: int = 128) -> np.ndarray:
    n = x.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for s in range(0, n, chunk):
        d = ((x[s:s + chunk, None, :] - x[None, :, :]) ** 2).sum(-1)
        rows = np.arange(d.shape[0])
        d[rows, rows + s] = np.inf
        # stable sort keeps index order among equal distances
        out[s:s + chunk] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def knn_graph(features, k: int, margin: int = 8) -> np.ndarray:
    """Indices of the k nearest other rows, nearest first, ties to the smaller index.

    ``features`` is (N, C) -> (N, k), or (B, N, C) -> (B, N, k). Candidates
    come from the Gram-matrix expansion; the final order uses exact squared
    differences, and rows whose candidate cut is within rounding error of the
    k-th distance are redone exhaustively.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 3:
        return np.stack([knn_graph(xb, k, margin) for xb in x])
    n = x.shape[0]
    if not 1 <= k < n:
        raise InputError(f"k-NN needs 1 <= k < N, got k={k}, N={n}")
    m = min(n - 1, k + margin)
    if m == n - 1:
        return _knn_exact(x, k)
    sq = (x * x).sum(1)
    approx = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(approx, np.inf)
    part = np.argpartition(approx, m, axis=1)
    cand, rest = part[:, :m], part[:, m]
    exact = ((x[:, None, :] - x[cand]) ** 2).sum(-1)
    order = np.lexsort((cand, exact), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    exact = np.take_along_axis(exact, order, axis=1)
    tol = 1e-9 * (1.0 + 4.0 * sq.max())
    cut = approx[np.arange(n), rest]
    out = cand[:, :k].copy()
    unsafe = np.nonzero(cut - tol <= exact[:, k - 1])[0]
    if unsafe.size:
        d = ((x[unsafe, None, :] - x[None, :, :]) ** 2).sum(-1)
        d[np.arange(unsafe.size), unsafe] = np.inf
        out[unsafe] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def _edge_bn_relu_max(p: Tensor, q: Tensor, graph: np.ndarray, lp: LayerParams, training: bool) -> Tensor:
    """max_j relu(bn(p_i + q_j)) over the neighbours j of i, without materialising edges.

    Batch-norm is a per-channel monotone map, so the max over neighbours is
    taken on q (argmin where the scale is negative). Edge statistics and the
    dense part of the batch-norm gradient reduce to adjacency products.
    """
    B, N, C = p.shape
    k = graph.shape[-1]
    bn_n = B * N
    m = bn_n * k
    gidx = (graph + (np.arange(B) * N)[:, None, None]).reshape(bn_n, k)
    pf = p.data.reshape(bn_n, C)
    qf = q.data.reshape(bn_n, C)
    adj = sparse.csr_matrix((np.ones(m), (np.repeat(np.arange(bn_n), k), gidx.ravel())), shape=(bn_n, bn_n))
    aq = adj @ qf
    bn = lp.bn
    if bn is not None:
        gamma, beta = bn.gamma.data, bn.beta.data
        if training:
            mu = (k * pf.sum(0) + aq.sum(0)) / m
            ex2 = (k * (pf * pf).sum(0) + 2.0 * (pf * aq).sum(0) + (adj @ (qf * qf)).sum(0)) / m
            var = np.maximum(ex2 - mu * mu, 0.0)
        else:
            mu, var = bn.running_mean, bn.running_var
        sigma = np.sqrt(var + bn.eps)
        use_max = gamma >= 0
    else:
        use_max = np.ones(C, dtype=bool)
    # channel-major layout makes the neighbour reduction contiguous
    qgt = np.ascontiguousarray(qf.T)[:, gidx]                      # (C, BN, k)
    arg = np.empty((C, bn_n), dtype=np.int64)
    if use_max.any():
        arg[use_max] = qgt[use_max].argmax(axis=2)
    if not use_max.all():
        arg[~use_max] = qgt[~use_max].argmin(axis=2)
    arg = arg.T
    jsel = np.take_along_axis(gidx, arg, axis=1)                  # (BN, C) neighbour row per channel
    qsel = qf[jsel, np.arange(C)]
    h = pf + qsel
    if bn is not None:
        xhat = (h - mu) / sigma
        y = gamma * xhat + beta
    else:
        y = h
    out = np.maximum(y, 0.0)

    def backward(g):
        gy = g.reshape(bn_n, C) * (y > 0)
        alpha = np.zeros(C)
        slope = np.zeros(C)
        grads_bn = ()
        if bn is not None:
            grads_bn = ((gy * xhat).sum(0), gy.sum(0))
            gx = gy * gamma
            gh = gx / sigma
            if training:
                mean_gx = gx.sum(0) / m
                mean_gxx = (gx * xhat).sum(0) / m
                slope = -mean_gxx / (sigma * sigma)
                alpha = -mean_gx / sigma - mu * slope
        else:
            gh = gy
        gp = gh + k * alpha + slope * (k * pf + aq)
        flat = (jsel * C + np.arange(C)).ravel()
        gq = np.bincount(flat, weights=gh.ravel(), minlength=bn_n * C).reshape(bn_n, C)
        if bn is not None and training:
            cnt = np.asarray(adj.sum(axis=0)).ravel()[:, None]
            gq += cnt * alpha + slope * (cnt * qf + adj.T @ pf)
        return (gp.reshape(B, N, C), gq.reshape(B, N, C)) + grads_bn

    parents = (p, q) + ((bn.gamma, bn.beta) if bn is not None else ())
    result = T._make(out.reshape(B, N, C), parents, backward)
    if bn is not None and training:
        bn.running_mean = bn.momentum * bn.running_mean + (1.0 - bn.momentum) * mu
        bn.running_var = bn.momentum * bn.running_var + (1.0 - bn.momentum) * var
    return result


def edge_conv(features, graph: np.ndarray, params: list[LayerParams] | LayerParams,
              training: bool = False, fused: bool = True) -> Tensor:
    """Per point i: max over neighbours j of mlp(concat(x_i, x_j - x_i)).

    A single-layer MLP takes the fused path: the first linear map splits into
    x_i (W_a - W_b) + x_j W_b, so only per-point products are formed.
    """
    x = T.as_tensor(features)
    graph = np.asarray(graph)
    squeeze = x.ndim == 2
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
        graph = graph[None]
    if graph.shape[:2] != x.shape[:2] or graph.min(initial=0) < 0 or graph.max(initial=0) >= x.shape[1]:
        raise ContractError(f"graph {graph.shape} does not index features {x.shape}")
    layers = params if isinstance(params, list) else [params]
    B, N, C = x.shape
    if layers[0].in_features != 2 * C:
        raise ContractError(f"edge MLP expects {layers[0].in_features} inputs, edges have {2 * C}")
    if fused and len(layers) == 1:
        lp = layers[0]
        w_self, w_nbr = lp.weight[:C], lp.weight[C:]
        p = T.add(T.matmul(x, T.sub(w_self, w_nbr)), lp.bias)
        q = T.matmul(x, w_nbr)
        out = _edge_bn_relu_max(p, q, graph, lp, training)
    else:
        k = graph.shape[2]
        xj = T.gather_rows(x, graph)                               # (B, N, k, C)
        xi = T.broadcast_to(T.reshape(x, (B, N, 1, C)), (B, N, k, C))
        h = T.concat([xi, T.sub(xj, xi)], axis=-1)
        for lp in layers:
            h = dense(h, lp, training)
        out, _ = T.max_reduce(h, axis=2)
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out


class Dgcnn(PointCloudModel):
    family = "dgcnn"

    def __init__(self, config: DgcnnConfig | None = None, seed: int = 0):
        config = config or DgcnnConfig()
        super().__init__(config)
        rng = np.random.default_rng(seed)
        bn = config.batch_norm
        self.edges: list[LayerParams] = []
        cin = config.in_features
        for w in config.edge_widths:
            self.edges.append(LayerParams.create(2 * cin, w, rng, batch_norm=bn))
            cin = w
        self.aggregate = LayerParams.create(sum(config.edge_widths), config.pool_dim, rng, batch_norm=bn)
        self.head = _stack(config.head, config.pool_dim, rng, False)
        self.classifier = LayerParams.create(config.head[-1] if config.head else config.pool_dim,
                                             config.num_classes, rng)

    def min_points(self) -> int:
        return self.config.k + 1

    def layers(self) -> list[LayerParams]:
        return [*self.edges, self.aggregate, *self.head, self.classifier]

    def graphs(self, x) -> list[np.ndarray]:
        """The k-NN graph used by each EdgeConv layer (eval mode)."""
        return self._run(self._batched(x), False, None)[1]

    def _run(self, x: np.ndarray, training: bool, rng):
        h = T.as_tensor(x)
        outs, graphs = [], []
        for i, lp in enumerate(self.edges):
            gfeat = h.data
            if i == 0 and self.config.graph_features == "spatial":
                gfeat = gfeat[..., :3]
            graph = knn_graph(gfeat, self.config.k)
            graphs.append(graph)
            h = edge_conv(h, graph, lp, training)
            outs.append(h)
        h = dense(T.concat(outs, axis=-1), self.aggregate, training)
        g, argmax = global_max_pool(h)
        for lp in self.head:
            g = dense(g, lp, training)
        g = dropout(g, self.config.dropout, rng, training)
        return ForwardResult(linear(g, self.classifier), argmax), graphs

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> ForwardResult:
        return self._run(self._batched(x), training, rng)[0]

    def extra_loss(self, result: ForwardResult) -> Tensor | None:
        return None

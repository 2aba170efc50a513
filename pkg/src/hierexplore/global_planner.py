"""Multi-graph attention network producing robot-to-cluster affinities.

Robots and candidate clusters are embedded separately, refined by blocks of
self-attention (within robots, within clusters) followed by cross-attention
over the complete bipartite robot-cluster graph whose edges carry geodesic
distance and cluster gain.  The last cross layer's edge similarities are the
affinity matrix; a small critic head reads the pooled robot features.
"""
from __future__ import annotations

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DomainError

DIM = 32
DEFAULT_LAYERS = 3
VIRTUAL_WEIGHT = -1e9
CHECKPOINT_MAGIC = b"MGNN"
CHECKPOINT_VERSION = 1


# -- parameters -----------------------------------------------------------------

def _mlp_shapes(prefix: str, n_in: int, n_hidden: int, n_out: int) -> list:
    return [(f"{prefix}.w1", (n_in, n_hidden)), (f"{prefix}.b1", (n_hidden,)),
            (f"{prefix}.w2", (n_hidden, n_out)), (f"{prefix}.b2", (n_out,))]


def param_shapes(layers: int = DEFAULT_LAYERS) -> list[tuple[str, tuple]]:
    shapes = _mlp_shapes("embed_robot", 3, DIM, DIM) + _mlp_shapes("embed_cluster", 3, DIM, DIM)
    for l in range(layers):
        for g in ("robot", "cluster"):
            p = f"layer{l}.self_{g}"
            shapes += [(f"{p}.query", (DIM, DIM)), (f"{p}.key", (DIM, DIM)),
                       (f"{p}.value", (DIM, DIM))]
            shapes += _mlp_shapes(f"{p}.update", 2 * DIM, DIM, DIM)
        p = f"layer{l}.cross"
        shapes += [(f"{p}.query", (DIM, DIM)), (f"{p}.key", (DIM, DIM)),
                   (f"{p}.value_robot", (DIM, DIM)), (f"{p}.value_cluster", (DIM, DIM))]
        shapes += _mlp_shapes(f"{p}.edge", 2 * DIM + 2, DIM, 1)
        shapes += _mlp_shapes(f"{p}.update_robot", 2 * DIM, DIM, DIM)
        shapes += _mlp_shapes(f"{p}.update_cluster", 2 * DIM, DIM, DIM)
    shapes += _mlp_shapes("critic", DIM, DIM, 1)
    return shapes


class ModelParams:
    """Ordered collection of named parameter tensors."""

    def __init__(self, tensors: "OrderedDict[str, Tensor]"):
        self.tensors = tensors
        self.layers = sum(1 for n in tensors if n.endswith(".self_robot.query"))

    @classmethod
    def initialize(cls, seed: int = 0, layers: int = DEFAULT_LAYERS) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors = OrderedDict()
        fan_in = 1
        for name, shape in param_shapes(layers):
            if len(shape) == 2:
                fan_in = shape[0]
            a = 1.0 / math.sqrt(fan_in)
            tensors[name] = ad.parameter(rng.uniform(-a, a, size=shape))
        return cls(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self):
        return len(self.tensors)

    def size(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data) for n, t in self.tensors.items())

    def copy(self) -> "ModelParams":
        return ModelParams(OrderedDict((n, ad.parameter(t.data.copy()))
                                       for n, t in self.tensors.items()))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def grads(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, np.zeros_like(t.data) if t.grad is None else t.grad)
                           for n, t in self.tensors.items())

    def equal(self, other: "ModelParams") -> bool:
        return (list(self.tensors) == list(other.tensors)
                and all(np.array_equal(a.data, other.tensors[n].data)
                        for n, a in self.tensors.items()))


def save_checkpoint(params: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<H", CHECKPOINT_VERSION))
        for name, t in params:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(t.data.astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise DomainError(f"{path}: not an MGNN checkpoint")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CHECKPOINT_VERSION:
        raise DomainError(f"{path}: unsupported checkpoint version {version}")
    pos, tensors = 6, OrderedDict()
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 1)
            pos += 1 + 4 * rank
            count = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
            pos += 8 * count
            tensors[name] = ad.parameter(values.reshape(dims))
    except (struct.error, ValueError) as exc:
        raise DomainError(f"{path}: truncated checkpoint") from exc
    params = ModelParams(tensors)
    expected = param_shapes(params.layers)
    if [(n, t.shape) for n, t in params] != expected:
        raise DomainError(f"{path}: parameter layout does not match the model")
    return params


# -- observation ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GraphObservation:
    """Normalised network inputs for one planning step."""

    robot_feats: np.ndarray    # (R, 3): x, y, label
    cluster_feats: np.ndarray  # (C, 3)
    dist: np.ndarray           # (R, C) distance / grid diagonal, 0 where unreachable
    gain: np.ndarray           # (C,) gain / total frontier count
    reachable: np.ndarray      # (R, C) bool

    @property
    def n_robots(self) -> int:
        return len(self.robot_feats)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_feats)


def build_observation(robots: Sequence, clusters: Sequence, dist, width: int,
                      height: int) -> GraphObservation:
    entries = np.asarray(getattr(dist, "entries", dist), dtype=np.float64)
    scale = float(max(width, height))
    n = len(robots)
    robot_feats = np.array([[r.x / scale, r.y / scale, (r.robot_id + 1) / n] for r in robots],
                           dtype=np.float64).reshape(-1, 3)
    cluster_feats = np.array([[c.center[0] / scale, c.center[1] / scale, 0.0]
                              for c in clusters], dtype=np.float64).reshape(-1, 3)
    gains = np.array([c.gain for c in clusters], dtype=np.float64)
    reachable = np.isfinite(entries)
    diag = math.hypot(width, height)
    d = np.where(reachable, entries, 0.0) / diag
    total = gains.sum()
    g = gains / total if total > 0 else gains
    for arr in (robot_feats, cluster_feats, d, g):
        if not np.all(np.isfinite(arr)):
            raise DomainError("non-finite network input")
    return GraphObservation(robot_feats, cluster_feats, d, g, reachable)


# -- layers ------------------------------------------------------------------------

def _mlp(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    h = ad.tanh(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    return h @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]


def embed_nodes(feats, params: ModelParams, kind: str) -> Tensor:
    """Two-layer MLP from (x, y, label) triples to 32-dimensional features."""
    feats = np.asarray(feats, dtype=np.float64)
    if not np.all(np.isfinite(feats)):
        raise DomainError("non-finite node state")
    return _mlp(Tensor(feats.reshape(-1, 3)), params, f"embed_{kind}")


def self_attention_layer(v: Tensor, params: ModelParams, prefix: str):
    """Attention over a complete graph with self-loops plus residual MLP update.

    Returns ``(updated features, attention weights)``.
    """
    q = v @ params[f"{prefix}.query"]
    k = v @ params[f"{prefix}.key"]
    u = v @ params[f"{prefix}.value"]
    weights = ad.masked_softmax(q @ k.T, axis=1)
    attn = weights @ u
    return v + _mlp(ad.concat([v, attn], axis=1), params, f"{prefix}.update"), weights


def edge_similarity(q: Tensor, k: Tensor, dist, gain, params: ModelParams, prefix: str) -> Tensor:
    """Edge MLP on (query_i, key_k, distance_ik, gain_k) for every robot-cluster pair."""
    w1 = params[f"{prefix}.edge.w1"]
    n_r, n_c = q.shape[0], k.shape[0]
    hq = (q @ w1[:DIM]).reshape(n_r, 1, DIM)
    hk = (k @ w1[DIM:2 * DIM]).reshape(1, n_c, DIM)
    d = np.asarray(dist, dtype=np.float64).reshape(n_r, n_c, 1)
    g = np.asarray(gain, dtype=np.float64).reshape(1, n_c, 1)
    h = ad.tanh(hq + hk + w1[2 * DIM] * d + w1[2 * DIM + 1] * g + params[f"{prefix}.edge.b1"])
    sim = h @ params[f"{prefix}.edge.w2"] + params[f"{prefix}.edge.b2"]
    return sim.reshape(n_r, n_c)


def cross_attention_layer(vr: Tensor, vc: Tensor, obs: GraphObservation, params: ModelParams,
                          prefix: str):
    """Returns ``(robot feats, cluster feats, edge similarities, robot-side weights)``."""
    q = vr @ params[f"{prefix}.query"]
    k = vc @ params[f"{prefix}.key"]
    sim = edge_similarity(q, k, obs.dist, obs.gain, params, prefix)
    w_rc = ad.masked_softmax(sim, obs.reachable, axis=1)
    w_cr = ad.masked_softmax(sim.T, obs.reachable.T, axis=1)
    attn_r = w_rc @ (vc @ params[f"{prefix}.value_cluster"])
    attn_c = w_cr @ (vr @ params[f"{prefix}.value_robot"])
    vr2 = vr + _mlp(ad.concat([vr, attn_r], axis=1), params, f"{prefix}.update_robot")
    vc2 = vc + _mlp(ad.concat([vc, attn_c], axis=1), params, f"{prefix}.update_cluster")
    return vr2, vc2, sim, w_rc


@dataclass(eq=False)
class ForwardResult:
    logits: Tensor            # (R, C) affinity as a differentiable tensor
    value: Tensor             # scalar critic estimate
    reachable: np.ndarray
    attention: list           # every softmax weight matrix, for diagnostics

    def affinity(self) -> np.ndarray:
        """Affinity matrix with unreachable pairs pinned to the virtual weight."""
        return np.where(self.reachable, self.logits.data, VIRTUAL_WEIGHT)


def forward_observation(obs: GraphObservation, params: ModelParams) -> ForwardResult:
    if obs.n_robots == 0 or obs.n_clusters == 0:
        raise DomainError("forward needs at least one robot and one cluster")
    vr = embed_nodes(obs.robot_feats, params, "robot")
    vc = embed_nodes(obs.cluster_feats, params, "cluster")
    attention = []
    sim = None
    for l in range(params.layers):
        vr, w = self_attention_layer(vr, params, f"layer{l}.self_robot")
        attention.append(w)
        vc, w = self_attention_layer(vc, params, f"layer{l}.self_cluster")
        attention.append(w)
        vr, vc, sim, w = cross_attention_layer(vr, vc, obs, params, f"layer{l}.cross")
        attention.append(w)
    pooled = vr.mean(axis=0, keepdims=True)
    value = _mlp(pooled, params, "critic").reshape(())
    return ForwardResult(sim, value, obs.reachable, attention)


def forward(robots: Sequence, clusters: Sequence, dist, params: ModelParams, width: int,
            height: int) -> ForwardResult:
    return forward_observation(build_observation(robots, clusters, dist, width, height), params)


# -- assignment -------------------------------------------------------------------

def assign(affinity) -> list[int | None]:
    """Maximum-total one-to-one matching of robots (rows) to clusters (columns).

    Non-square inputs are padded with :data:`VIRTUAL_WEIGHT`; robots matched
    to a padded column, or to a pair at the virtual weight, get ``None``.
    """
    a = np.asarray(affinity, dtype=np.float64)
    n_r, n_c = a.shape
    if n_r == 0:
        return []
    n = max(n_r, n_c)
    square = np.full((n, n), VIRTUAL_WEIGHT)
    square[:n_r, :n_c] = a
    rows, cols = linear_sum_assignment(square, maximize=True)
    out: list[int | None] = [None] * n_r
    for r, c in zip(rows, cols):
        if r < n_r and c < n_c and a[r, c] > VIRTUAL_WEIGHT / 2:
            out[r] = int(c)
    return out

"""Graph attention fusion network feeding a three-layer GAT regressor."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyNeighborhood, ShapeMismatch
from .graph import NODE_DIM, PcwGraph
from .nn.attention import AttentionParams, multi_head_attention
from .nn.tape import Tape, Var, add, as_var, concat, dropout, leaky_relu, matmul, relu, row_mean, softmax, tanh

BRANCHES = ("color", "curvature", "saliency")


@dataclass(frozen=True)
class ModelConfig:
    node_dim: int = NODE_DIM
    gaf_layers: int = 2
    gaf_heads: int = 4
    gaf_dk: int = 16
    d_out: int = 64
    fusion_dropout: float = 0.2
    gat_hidden: int = 64
    gat_heads: tuple = (8, 6, 4)
    feat_dropout: float = 0.3
    attn_dropout: float = 0.3
    negative_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "gat_heads", tuple(int(h) for h in self.gat_heads))
        for name in ("node_dim", "gaf_layers", "gaf_heads", "gaf_dk", "d_out", "gat_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.gat_heads or min(self.gat_heads) < 1:
            raise ValueError("gat_heads must list positive head counts")
        for name in ("fusion_dropout", "feat_dropout", "attn_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["gat_heads"] = list(self.gat_heads)
        return d

    def gat_widths(self):
        """(input width, output width, concat?) for every GAT layer."""
        widths = []
        d_in = self.d_out
        last = len(self.gat_heads) - 1
        for i, h in enumerate(self.gat_heads):
            concat_heads = i < last
            d_next = h * self.gat_hidden if concat_heads else self.gat_hidden
            widths.append((d_in, d_next, concat_heads))
            d_in = d_next
        return widths


def _glorot(rng, shape):
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, seed: int) -> dict:
    """Glorot-uniform weights, zero biases; insertion order is the canonical order."""
    rng = np.random.default_rng(seed)
    p = {}
    d = config.node_dim
    for b in BRANCHES:
        for layer in range(config.gaf_layers):
            pre = f"gaf.{b}.{layer}"
            for h in range(config.gaf_heads):
                for w in ("wq", "wk", "wv"):
                    p[f"{pre}.h{h}.{w}"] = _glorot(rng, (d, config.gaf_dk))
            p[f"{pre}.wo"] = _glorot(rng, (config.gaf_heads * config.gaf_dk, d))
    p["gaf.proj.w"] = _glorot(rng, (3 * d, config.d_out))
    p["gaf.proj.b"] = np.zeros((1, config.d_out))
    for layer, ((d_in, _, _), heads) in enumerate(zip(config.gat_widths(), config.gat_heads)):
        for h in range(heads):
            pre = f"gat.{layer}.h{h}"
            p[f"{pre}.w"] = _glorot(rng, (d_in, config.gat_hidden))
            p[f"{pre}.a_src"] = _glorot(rng, (1, config.gat_hidden))
            p[f"{pre}.a_dst"] = _glorot(rng, (1, config.gat_hidden))
    p["head.w"] = _glorot(rng, (config.gat_hidden, 1))
    p["head.b"] = np.zeros((1, 1))
    return p


class _Dropper:
    """Draws keep-masks in a fixed order from one seeded generator."""

    def __init__(self, train: bool, seed):
        self.train = train
        self.rng = np.random.default_rng(seed) if train else None

    def __call__(self, x, rate):
        if not self.train or rate <= 0.0:
            return x
        x = as_var(x)
        keep = 1.0 - rate
        mask = self.rng.random(x.value.shape) < keep
        return dropout(x, mask, keep)


def _branch_params(P, branch, layer, heads):
    pre = f"gaf.{branch}.{layer}"
    return AttentionParams(
        w_q=[P[f"{pre}.h{h}.wq"] for h in range(heads)],
        w_k=[P[f"{pre}.h{h}.wk"] for h in range(heads)],
        w_v=[P[f"{pre}.h{h}.wv"] for h in range(heads)],
        w_o=P[f"{pre}.wo"],
    )


def gaf_branches(graph: PcwGraph, P, config: ModelConfig):
    """Per-channel stacked attention outputs Z^1..Z^3 (each k x node_dim)."""
    x0 = as_var(graph.node_features)
    outs = []
    for branch, adj in zip(BRANCHES, graph.adjacencies):
        x = x0
        a = as_var(adj)
        for layer in range(config.gaf_layers):
            x = multi_head_attention(x, a, _branch_params(P, branch, layer, config.gaf_heads))
        outs.append(as_var(x))
    return outs


def gaf_forward(graph: PcwGraph, P, config: ModelConfig, mode="infer", rng_seed=None, _drop=None):
    if graph.node_features.shape[1] != config.node_dim:
        raise ShapeMismatch(f"node features have {graph.node_features.shape[1]} columns, "
                            f"model expects {config.node_dim}")
    drop = _drop or _Dropper(mode == "train", rng_seed)
    z = concat(gaf_branches(graph, P, config))
    z = relu(add(matmul(z, P["gaf.proj.w"]), P["gaf.proj.b"]))
    return drop(z, config.fusion_dropout)


def gat_layer(H, mask, weights, a_src, a_dst, concat_heads=True, mode="infer", rng_seed=None,
              feat_dropout=0.0, attn_dropout=0.0, negative_slope=0.2, _drop=None):
    """One GAT layer: masked neighbour softmax of LeakyReLU(a^T [Wh_i || Wh_j]), tanh output.

    ``weights``, ``a_src`` and ``a_dst`` hold one entry per head; heads are
    concatenated or averaged.
    """
    mask = np.asarray(mask, dtype=bool)
    h = as_var(H)
    k = h.value.shape[0]
    if mask.shape != (k, k):
        raise ShapeMismatch(f"mask {mask.shape} for {k} nodes")
    if not np.all(mask.any(axis=1)):
        raise EmptyNeighborhood("a node has an empty attention neighbourhood")
    drop = _drop or _Dropper(mode == "train", rng_seed)
    h = drop(h, feat_dropout)
    heads = []
    for W, a_s, a_d in zip(weights, a_src, a_dst):
        wh = matmul(h, W)
        e = leaky_relu(add(matmul(wh, a_s, transpose_b=True), matmul(a_d, wh, transpose_b=True)),
                       negative_slope)
        alpha = drop(softmax(e, mask=mask), attn_dropout)
        heads.append(matmul(alpha, wh))
    if len(heads) == 1:
        out = heads[0]
    elif concat_heads:
        out = concat(heads)
    else:
        f = heads[0].value.shape[1]
        avg = np.tile(np.eye(f), (len(heads), 1)) / len(heads)
        out = matmul(concat(heads), avg)
    out = tanh(out)
    return out if any(isinstance(x, Var) for x in (H, *weights, *a_src, *a_dst)) else out.value


def gat_forward(Z, mask, P, config: ModelConfig, mode="infer", rng_seed=None, _drop=None):
    """Stacked GAT layers, mean pooling over nodes, linear scalar head. Returns a (1, 1) tensor."""
    drop = _drop or _Dropper(mode == "train", rng_seed)
    h = as_var(Z)
    for layer, ((_, _, concat_heads), heads) in enumerate(zip(config.gat_widths(), config.gat_heads)):
        pre = f"gat.{layer}"
        h = gat_layer(
            h, mask,
            [P[f"{pre}.h{i}.w"] for i in range(heads)],
            [P[f"{pre}.h{i}.a_src"] for i in range(heads)],
            [P[f"{pre}.h{i}.a_dst"] for i in range(heads)],
            concat_heads=concat_heads, feat_dropout=config.feat_dropout,
            attn_dropout=config.attn_dropout, negative_slope=config.negative_slope, _drop=drop,
        )
        h = as_var(h)
    pooled = row_mean(h)
    return add(matmul(pooled, P["head.w"]), P["head.b"])


@dataclass
class GafGatModel:
    config: ModelConfig
    params: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: ModelConfig = ModelConfig(), seed: int = 0):
        return cls(config, init_params(config, seed))

    def forward(self, graph: PcwGraph, mode="infer", rng_seed=None, tape: Tape | None = None):
        """Scalar prediction as a (1, 1) Var; records on ``tape`` when given."""
        P = {n: tape.param(v, n) for n, v in self.params.items()} if tape is not None else self.params
        drop = _Dropper(mode == "train", rng_seed)
        z = gaf_forward(graph, P, self.config, mode, _drop=drop)
        return gat_forward(z, graph.support_mask(), P, self.config, mode, _drop=drop)

    def predict(self, graph: PcwGraph) -> float:
        return float(self.forward(graph, "infer").value[0, 0])

    def loss_and_grads(self, graph: PcwGraph, target: float, mode="train", rng_seed=None):
        """Squared error of one sample and its parameter gradients."""
        tape = Tape()
        out = self.forward(graph, mode, rng_seed, tape)
        diff = out.value[0, 0] - target
        grads = tape.backward(out, np.array([[2.0 * diff]]))
        return diff * diff, grads

    def architecture(self):
        c = self.config
        rows = [
            ("GAF branches", ", ".join(BRANCHES)),
            ("GAF attention layers per branch", c.gaf_layers),
            ("GAF heads / d_k", f"{c.gaf_heads} / {c.gaf_dk}"),
            ("GAF fused width -> d_out", f"{3 * c.node_dim} -> {c.d_out}"),
            ("Fusion dropout", c.fusion_dropout),
            ("Number of GAT layers", len(c.gat_heads)),
            ("Hidden dimension (per head)", c.gat_hidden),
            ("Attention heads per layer", list(c.gat_heads)),
            ("GAT layer widths", [f"{a}->{b}{'' if cc else ' (avg)'}" for a, b, cc in c.gat_widths()]),
            ("Activation", "tanh"),
            ("Feature dropout", c.feat_dropout),
            ("Attention dropout", c.attn_dropout),
            ("LeakyReLU slope", c.negative_slope),
            ("Residual connections", "No"),
            ("Pooling", "mean over nodes"),
            ("Output head", f"linear {c.gat_hidden} -> 1"),
            ("Parameters", sum(int(v.size) for v in self.params.values())),
        ]
        return rows

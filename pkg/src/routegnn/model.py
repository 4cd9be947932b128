"""Residual graph network built from route attention blocks.

Each block applies, in order:

    T  = H + LayerNorm(Linear(RouteAttention(H)))
    H' = T + LayerNorm(FFN(T)),   FFN(x) = W2 ReLU(W1 x + b1) + b2

so the skip path carries the input through unchanged and gradients reach
early layers without attenuation.  A ``norm_after_sum`` variant that
normalizes the sums instead is kept purely as a negative control; it trains
poorly because the normalization shrinks the skip-path gradient.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .attention import AttentionConfig, RouteAttentionParams, init_route_attention, route_mhsa
from .graphs import BatchedGraphs, locality_mask
from .nn import Linear, assign_parameters, init_linear, params_from_doc, params_to_doc
from .tensor import Tensor, dropout, layer_norm, matmul, mul, relu, tanh, transpose2d, tsum

MODEL_FORMAT = "routegnn-model-v1"

HEAD_TYPES = ("node_regression", "graph_classification")


@dataclass
class ModelConfig:
    n_layers: int
    d_hidden: int
    n_heads: int
    d_k: int | None = None            # default d_hidden // n_heads
    d_v: int | None = None            # default d_k
    d_r: int | None = None            # default d_k
    radius: int | None | list = None  # per-head attention ball radius, None = whole graph
    score_map: str = "softmax"
    f_route: int = 4
    f_nodes: int = 1
    dropout: float = 0.0
    dropout_modes: tuple = ("element", "channel")
    head: str = "node_regression"
    n_tasks: int = 1
    d_ffn: int | None = None          # default 4 * d_hidden
    pool: bool = True
    variant: str = "residual"
    # fixed affine applied to node-head outputs so regression targets can be
    # standardized without leaving the original units
    output_scale: float = 1.0
    output_shift: float = 0.0

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.head not in HEAD_TYPES:
            raise ValueError(f"head must be one of {HEAD_TYPES}, got {self.head!r}")
        if self.variant not in ("residual", "norm_after_sum"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.d_k is None:
            if self.d_hidden % self.n_heads:
                raise ValueError("d_hidden must be divisible by n_heads when d_k is omitted")
            self.d_k = self.d_hidden // self.n_heads
        if self.d_v is None:
            self.d_v = self.d_k
        if self.d_r is None:
            self.d_r = self.d_k
        if isinstance(self.radius, tuple):
            self.radius = list(self.radius)
        self.dropout_modes = tuple(self.dropout_modes)

    def attention(self) -> AttentionConfig:
        return AttentionConfig(n_heads=self.n_heads, d_k=self.d_k, d_v=self.d_v,
                               d_r=self.d_r, score_map=self.score_map, radius=self.radius)

    @property
    def ffn_dim(self) -> int:
        return self.d_ffn if self.d_ffn is not None else 4 * self.d_hidden


@dataclass
class LayerParams:
    attn: RouteAttentionParams
    proj: Linear
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ffn1: Linear
    ffn2: Linear
    ln2_gamma: Tensor
    ln2_beta: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = dict(self.attn.named(prefix + "attn."))
        out[prefix + "proj.weight"] = self.proj.weight
        out[prefix + "proj.bias"] = self.proj.bias
        out[prefix + "ln1.gamma"] = self.ln1_gamma
        out[prefix + "ln1.beta"] = self.ln1_beta
        out[prefix + "ffn1.weight"] = self.ffn1.weight
        out[prefix + "ffn1.bias"] = self.ffn1.bias
        out[prefix + "ffn2.weight"] = self.ffn2.weight
        out[prefix + "ffn2.bias"] = self.ffn2.bias
        out[prefix + "ln2.gamma"] = self.ln2_gamma
        out[prefix + "ln2.beta"] = self.ln2_beta
        return out


class RouteGraphNetwork:
    """Input projection, pool embedding, attention blocks, and an output head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.d_hidden
        self.input_linear = init_linear(rng, config.f_nodes, d, bias=False)
        bound = 1.0 / np.sqrt(d)
        self.pool_embedding = Tensor(rng.uniform(-bound, bound, size=d), requires_grad=True)
        self.layers: list[LayerParams] = []
        attn_cfg = config.attention()
        for _ in range(config.n_layers):
            self.layers.append(LayerParams(
                attn=init_route_attention(rng, d, config.f_route, attn_cfg),
                proj=init_linear(rng, attn_cfg.d_out, d),
                ln1_gamma=Tensor(np.ones(d), requires_grad=True),
                ln1_beta=Tensor(np.zeros(d), requires_grad=True),
                ffn1=init_linear(rng, d, config.ffn_dim),
                ffn2=init_linear(rng, config.ffn_dim, d),
                ln2_gamma=Tensor(np.ones(d), requires_grad=True),
                ln2_beta=Tensor(np.zeros(d), requires_grad=True),
            ))
        self.head_hidden = init_linear(rng, d, d)
        self.head_out = init_linear(rng, d, config.n_tasks)

    # -- parameters ---------------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        out = {"input.weight": self.input_linear.weight}
        if self.config.pool:
            out["pool.embedding"] = self.pool_embedding
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"layers.{i}."))
        out["head.hidden.weight"] = self.head_hidden.weight
        out["head.hidden.bias"] = self.head_hidden.bias
        out["head.out.weight"] = self.head_out.weight
        out["head.out.bias"] = self.head_out.bias
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def set_parameter_arrays(self, values: dict[str, np.ndarray]) -> None:
        assign_parameters(self.named_parameters(), values)

    # -- forward ------------------------------------------------------------
    def head_masks(self, batched: BatchedGraphs) -> list[np.ndarray]:
        return [locality_mask(batched, r) for r in self.config.attention().head_radii()]

    def forward(self, batched: BatchedGraphs, training: bool = False,
                rng: np.random.Generator | None = None,
                capture: list | None = None) -> Tensor:
        h = embed_inputs(batched, self)
        p = Tensor(batched.routes)
        masks = self.head_masks(batched)
        for layer in self.layers:
            layer_capture = None
            if capture is not None:
                layer_capture = []
                capture.append(layer_capture)
            h = layer_forward(h, p, batched.node_mask, masks, layer, self.config,
                              training=training, rng=rng, capture=layer_capture)
        return h

    def node_predictions(self, batched: BatchedGraphs, training: bool = False,
                         rng: np.random.Generator | None = None) -> Tensor:
        return node_head(self.forward(batched, training, rng), self)

    def graph_logits(self, batched: BatchedGraphs, training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
        return graph_head(self.forward(batched, training, rng), batched, self)

    # -- checkpoints ----------------------------------------------------------
    def save(self, path) -> None:
        doc = params_to_doc(self.named_parameters())
        doc["format"] = MODEL_FORMAT
        doc["version"] = 1
        doc["config"] = asdict(self.config)
        Path(path).write_text(json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RouteGraphNetwork":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported checkpoint format: {doc.get('format')!r}")
        cfg_doc = dict(doc["config"])
        cfg = ModelConfig(**cfg_doc)
        model = cls(cfg, seed=0)
        doc_params = dict(doc)
        doc_params["format"] = "routegnn-params-v1"
        model.set_parameter_arrays(params_from_doc(doc_params))
        return model


def embed_inputs(batched: BatchedGraphs, model: RouteGraphNetwork) -> Tensor:
    """Project node features to hidden size; the pool slot gets its own embedding."""
    if batched.features.shape[-1] != model.config.f_nodes:
        raise ValueError(
            f"batch has {batched.features.shape[-1]} node features, model expects {model.config.f_nodes}")
    x = Tensor(batched.features)
    h = matmul(x, transpose2d(model.input_linear.weight))
    if batched.pool_index is not None:
        onehot = np.zeros(batched.features.shape[:2] + (1,))
        onehot[:, batched.pool_index, 0] = 1.0
        h = h + mul(Tensor(onehot), model.pool_embedding)
    return h


def _block_dropout(x: Tensor, config: ModelConfig, training: bool,
                   rng: np.random.Generator | None) -> Tensor:
    if not training or config.dropout == 0.0:
        return x
    for mode in config.dropout_modes:
        x = dropout(x, config.dropout, mode=mode, training=True, rng=rng)
    return x


def layer_forward(h: Tensor, p: Tensor, node_mask: np.ndarray, route_masks: list,
                  layer: LayerParams, config: ModelConfig, training: bool = False,
                  rng: np.random.Generator | None = None,
                  capture: list | None = None) -> Tensor:
    attn = route_mhsa(h, p, node_mask, route_masks, layer.attn, config.attention(),
                      capture=capture)
    z = _block_dropout(layer.proj(attn), config, training, rng)
    if config.variant == "residual":
        t = h + layer_norm(z, layer.ln1_gamma, layer.ln1_beta)
    else:
        t = layer_norm(h + z, layer.ln1_gamma, layer.ln1_beta)
    f = _block_dropout(layer.ffn2(relu(layer.ffn1(t))), config, training, rng)
    if config.variant == "residual":
        return t + layer_norm(f, layer.ln2_gamma, layer.ln2_beta)
    return layer_norm(t + f, layer.ln2_gamma, layer.ln2_beta)


def node_head(h_final: Tensor, model: RouteGraphNetwork) -> Tensor:
    """Per-node predictions: linear, tanh, linear, then the fixed output affine."""
    raw = model.head_out(tanh(model.head_hidden(h_final)))
    cfg = model.config
    if cfg.output_scale != 1.0 or cfg.output_shift != 0.0:
        raw = raw * cfg.output_scale + Tensor(np.float64(cfg.output_shift))
    return raw


def graph_head(h_final: Tensor, batched: BatchedGraphs, model: RouteGraphNetwork) -> Tensor:
    """Per-graph logits: linear, ReLU, mean over real nodes, linear."""
    z = relu(model.head_hidden(h_final))
    indicator = batched.real_node_indicator()[..., None]
    total = tsum(mul(z, Tensor(indicator)), axis=-2)
    counts = batched.node_counts.astype(np.float64)[:, None]
    mean = mul(total, Tensor(1.0 / counts))
    return model.head_out(mean)


def sum_readout(h_final: Tensor, batched: BatchedGraphs) -> Tensor:
    """Sum of final hidden vectors over real graph nodes (pool and pads excluded)."""
    indicator = batched.real_node_indicator()[..., None]
    return tsum(mul(h_final, Tensor(indicator)), axis=-2)


def attention_dump(model: RouteGraphNetwork, batched: BatchedGraphs,
                   sample: int = 0) -> list[dict]:
    """Per-layer, per-head attention matrices for one sample, as plain lists."""
    capture: list = []
    model.forward(batched, training=False, capture=capture)
    n = int(batched.node_counts[sample])
    labels = list(range(n))
    pool_index = batched.pool_index
    keep = labels + ([pool_index] if pool_index is not None else [])
    records = []
    for layer_idx, heads in enumerate(capture):
        for head_idx, matrix in enumerate(heads):
            sub = matrix[sample][np.ix_(keep, keep)]
            records.append({
                "layer": layer_idx,
                "head": head_idx,
                "matrix": sub.tolist(),
                "node_labels": labels,
                "pool_index": len(labels) if pool_index is not None else None,
            })
    return records

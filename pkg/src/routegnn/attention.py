"""Route-based multi-head self-attention.

Attention scores combine node query-key products with row-wise products
between a node's route query and the key vectors of its routes to every
other node.  The value side mirrors this: each attended node contributes its
value vector plus the value vector of the route leading to it.  Scores are
scaled by 1/sqrt(d_k + d_r) and shifted by additive masks before the score
map (softmax rows, or elementwise sigmoid for the injective variant).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (MASK_VALUE, ShapeError, Tensor, concat, matmul, mul,
                     rowwise_inner, rowwise_mix, sigmoid, softmax_rows,
                     swapaxes)

SCORE_MAPS = ("softmax", "sigmoid")

# Rows whose best score is below this are fully masked; their probabilities
# are forced to zero instead of a meaningless uniform softmax.
DEAD_ROW_CUTOFF = MASK_VALUE / 2


@dataclass
class AttentionConfig:
    n_heads: int
    d_k: int
    d_v: int
    d_r: int
    score_map: str = "softmax"
    # one radius per head (None = unrestricted); a single value is shared
    radius: int | None | list = None

    def __post_init__(self):
        if self.score_map not in SCORE_MAPS:
            raise ValueError(f"score_map must be one of {SCORE_MAPS}, got {self.score_map!r}")
        if min(self.n_heads, self.d_k, self.d_v, self.d_r) < 1:
            raise ValueError("n_heads, d_k, d_v, d_r must all be >= 1")

    def head_radii(self) -> list:
        if isinstance(self.radius, list):
            if len(self.radius) != self.n_heads:
                raise ValueError(
                    f"got {len(self.radius)} radii for {self.n_heads} heads")
            return list(self.radius)
        return [self.radius] * self.n_heads

    @property
    def d_out(self) -> int:
        return self.n_heads * self.d_v


@dataclass
class AttentionHeadParams:
    w_q: Tensor       # (d_k, d)
    w_k: Tensor       # (d_k, d)
    w_v: Tensor       # (d_v, d)
    w_q_route: Tensor  # (d_r, d)
    w_k_route: Tensor  # (d_r, f_route)
    w_v_route: Tensor  # (d_v, f_route)


@dataclass
class RouteAttentionParams:
    heads: list[AttentionHeadParams] = field(default_factory=list)

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, h in enumerate(self.heads):
            for attr in ("w_q", "w_k", "w_v", "w_q_route", "w_k_route", "w_v_route"):
                out[f"{prefix}heads.{i}.{attr}"] = getattr(h, attr)
        return out


def init_route_attention(rng: np.random.Generator, d_hidden: int, f_route: int,
                         config: AttentionConfig) -> RouteAttentionParams:
    def u(shape, fan_in):
        b = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-b, b, size=shape), requires_grad=True)

    heads = []
    for _ in range(config.n_heads):
        heads.append(AttentionHeadParams(
            w_q=u((config.d_k, d_hidden), d_hidden),
            w_k=u((config.d_k, d_hidden), d_hidden),
            w_v=u((config.d_v, d_hidden), d_hidden),
            w_q_route=u((config.d_r, d_hidden), d_hidden),
            w_k_route=u((config.d_r, f_route), f_route),
            w_v_route=u((config.d_v, f_route), f_route),
        ))
    return RouteAttentionParams(heads)


def route_scores(q: Tensor, k: Tensor, q_route: Tensor, k_route: Tensor,
                 mask: np.ndarray | None) -> Tensor:
    """Masked, scaled attention scores.

    S[..., a, b] = (q[a].k[b] + q_route[a].k_route[a, b]) / sqrt(d_k + d_r) + mask[a, b]
    """
    d_k = q.shape[-1]
    d_r = q_route.shape[-1]
    if k.shape[-1] != d_k:
        raise ShapeError(f"route_scores: q has d_k={d_k} but k has {k.shape[-1]}")
    if k_route.shape[-1] != d_r:
        raise ShapeError(f"route_scores: q_route has d_r={d_r} but k_route has {k_route.shape[-1]}")
    scores = matmul(q, swapaxes(k, -1, -2)) + rowwise_inner(q_route, k_route)
    scores = scores * (1.0 / np.sqrt(d_k + d_r))
    if mask is not None:
        if mask.shape != scores.shape[-mask.ndim:]:
            raise ShapeError(f"route_scores: mask shape {mask.shape} does not match scores {scores.shape}")
        scores = scores + Tensor(mask)
    return scores


def attention_probs(scores: Tensor, score_map: str) -> Tensor:
    """Map scores to [0, 1] attention values.

    Softmax normalizes each row over its unmasked entries; rows that are
    entirely masked come out as all zeros.  Sigmoid applies elementwise, so
    masked entries underflow to exactly zero on their own.
    """
    if score_map == "sigmoid":
        return sigmoid(scores)
    if score_map == "softmax":
        probs = softmax_rows(scores)
        alive = scores.data.max(axis=-1, keepdims=True) > DEAD_ROW_CUTOFF
        if not alive.all():
            probs = mul(probs, Tensor(alive.astype(np.float64)))
        return probs
    raise ValueError(f"unknown score map {score_map!r}")


def route_attn(a: Tensor, v: Tensor, v_route: Tensor) -> Tensor:
    """Weighted aggregation: out[k] = sum_l a[k, l] * (v[l] + v_route[k, l])."""
    return matmul(a, v) + rowwise_mix(a, v_route)


def route_mhsa(h: Tensor, p: Tensor, node_mask: np.ndarray,
               route_masks: np.ndarray | list, params: RouteAttentionParams,
               config: AttentionConfig, capture: list | None = None) -> Tensor:
    """Multi-head route attention over hidden states h and route features p.

    h: (..., N, d); p: (..., N, N, f_route); node_mask: (..., N) additive;
    route_masks: one additive (..., N, N) mask shared by all heads, or a
    list with one mask per head.  Head outputs are concatenated, giving
    (..., N, n_heads * d_v).  When ``capture`` is a list, each head's
    attention matrix is appended to it as a plain array.
    """
    if len(params.heads) != config.n_heads:
        raise ShapeError(f"params have {len(params.heads)} heads, config says {config.n_heads}")
    if isinstance(route_masks, list):
        if len(route_masks) != config.n_heads:
            raise ShapeError(f"got {len(route_masks)} route masks for {config.n_heads} heads")
        masks = route_masks
    else:
        masks = [route_masks] * config.n_heads

    outputs = []
    for head, head_mask in zip(params.heads, masks):
        q = matmul(h, swapaxes(head.w_q, -1, -2))
        k = matmul(h, swapaxes(head.w_k, -1, -2))
        v = matmul(h, swapaxes(head.w_v, -1, -2))
        q_route = matmul(h, swapaxes(head.w_q_route, -1, -2))
        k_route = matmul(p, swapaxes(head.w_k_route, -1, -2))
        v_route = matmul(p, swapaxes(head.w_v_route, -1, -2))
        mask = head_mask + np.expand_dims(node_mask, -2)
        scores = route_scores(q, k, q_route, k_route, mask)
        probs = attention_probs(scores, config.score_map)
        if capture is not None:
            capture.append(probs.data.copy())
        outputs.append(route_attn(probs, v, v_route))
    return concat(outputs, axis=-1)

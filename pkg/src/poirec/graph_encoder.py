"""Graph-based preference extractor: GAT with context-adaptive attention.

Per layer, each aggregation pair (central node i, neighbor j) gets a
standard attention logit a.T [W h_i || W h_j], multiplied by a context
factor exp(-b_c s_c) exp(-b_d s_d) exp(-b_t s_t) where the s terms score
the category / spatial / temporal disparity of the pair via shared MLPs
(one hidden stage consumed per propagation layer) and the b weights are
a softmax over three free logits.  The product goes through LeakyReLU,
is softmax-normalized over each central node's neighbors, and weights
the aggregation.  The encoder output is the mean of all layer outputs.

Neighborhoods default to in-neighbors (transition predecessors) plus a
self pair per node; nodes with an empty neighborhood output zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import ContextFeatures, TransitionGraph
from .params import CONTEXTS, CONTEXT_PREFIX
from .tensor import (Tensor, add, concat, const, elementwise_mul, exp, gather_rows,
                     leaky_relu, matmul, mean, neg, relu, reshape, scalar_mul,
                     segment_softmax, segment_sum, softmax, sum_, transpose)

LEAKY_SLOPE = 0.2


@dataclass
class GraphEncoding:
    """Encoder output plus the attention traces used by the analysis tools."""

    h: Tensor                       # (|V|, dim) mean of the layer outputs
    neighbor: np.ndarray            # aggregation pair arrays, sorted by central
    central: np.ndarray
    layer_attn: list[dict] | None   # per layer: alpha / multiplier / logits / gat_alpha


def balance_weights(balance_logits: Tensor) -> Tensor:
    """Softmax over the three context-balance logits (positive, sums to 1)."""
    return softmax(balance_logits, axis=0)


def _select(vec: Tensor, index: int, length: int) -> Tensor:
    onehot = np.zeros(length)
    onehot[index] = 1.0
    return sum_(elementwise_mul(vec, const(onehot)))


def gat_logit(h_i: Tensor, h_j: Tensor, W: Tensor, a: Tensor) -> Tensor:
    """Unnormalized embedding-based attention for one (central, neighbor) pair."""
    pair = concat([matmul(W, h_i), matmul(W, h_j)], axis=0)
    return sum_(elementwise_mul(a, pair))


def ada_att(x: Tensor, stages: list[tuple[Tensor, Tensor]], upto_stage: int) -> Tensor:
    """Run MLP stages 1..upto_stage with ReLU, then mean the final hidden vector."""
    if not 1 <= upto_stage <= len(stages):
        raise ValueError(f"ada_att: stage {upto_stage} exceeds configured depth {len(stages)}")
    m = x
    for s in range(upto_stage):
        W, b = stages[s]
        m = relu(add(matmul(W, m), b))
    return mean(m)


def context_stages(params: dict[str, Tensor], context: str, depth: int):
    prefix = CONTEXT_PREFIX[context]
    return [(params[f"{prefix}.{s}.W"], params[f"{prefix}.{s}.b"]) for s in range(1, depth + 1)]


def context_features_for_edge(i: int, j: int, features: ContextFeatures,
                              params: dict[str, Tensor]):
    """Concatenated context feature pairs for central node i and neighbor j."""
    c_i = reshape(gather_rows(params["cat_emb"], [features.category[i]]), (-1,))
    c_j = reshape(gather_rows(params["cat_emb"], [features.category[j]]), (-1,))
    cat_pair = concat([c_i, c_j], axis=0)
    spat_pair = concat([matmul(const(features.d_src[i]), params["dist_emb"]),
                        matmul(const(features.d_dst[j]), params["dist_emb"])], axis=0)
    temp_pair = concat([matmul(const(features.hourly[i]), params["time_emb"]),
                        matmul(const(features.hourly[j]), params["time_emb"])], axis=0)
    return cat_pair, spat_pair, temp_pair


def context_multiplier(alpha_cat: Tensor, alpha_spat: Tensor, alpha_temp: Tensor,
                       balance_logits: Tensor) -> Tensor:
    """exp(-b_c a_c) * exp(-b_d a_d) * exp(-b_t a_t); strictly positive."""
    beta = balance_weights(balance_logits)
    out = exp(neg(elementwise_mul(alpha_cat, _select(beta, 0, 3))))
    out = elementwise_mul(out, exp(neg(elementwise_mul(alpha_spat, _select(beta, 1, 3)))))
    out = elementwise_mul(out, exp(neg(elementwise_mul(alpha_temp, _select(beta, 2, 3)))))
    return out


def _pair_feature_tensors(features: ContextFeatures, params: dict[str, Tensor],
                          neighbor: np.ndarray, central: np.ndarray,
                          disabled: frozenset) -> dict[str, Tensor]:
    """Edge-batched feature pairs, cached once per encode (layer-independent)."""
    pairs: dict[str, Tensor] = {}
    if "category" not in disabled:
        cat_rows = gather_rows(params["cat_emb"], features.category)
        pairs["category"] = concat([gather_rows(cat_rows, central),
                                    gather_rows(cat_rows, neighbor)], axis=1)
    if "spatial" not in disabled:
        spat_src = matmul(const(features.d_src), params["dist_emb"])
        spat_dst = matmul(const(features.d_dst), params["dist_emb"])
        pairs["spatial"] = concat([gather_rows(spat_src, central),
                                   gather_rows(spat_dst, neighbor)], axis=1)
    if "temporal" not in disabled:
        temp = matmul(const(features.hourly), params["time_emb"])
        pairs["temporal"] = concat([gather_rows(temp, central),
                                    gather_rows(temp, neighbor)], axis=1)
    return pairs


def _layer_multiplier(params: dict[str, Tensor], pair_feats: dict[str, Tensor],
                      hidden: dict[str, Tensor], layer: int, per_layer_mlp: bool):
    """Context multiplier for one layer, advancing each context's MLP stage."""
    beta = balance_weights(params["balance.logits"])
    mult: Tensor | None = None
    for idx, ctx in enumerate(CONTEXTS):
        if ctx not in pair_feats:
            continue  # ablated context: its raw attention is forced to 0, factor exp(0)=1
        prefix = CONTEXT_PREFIX[ctx]
        inp = pair_feats[ctx] if (layer == 1 or per_layer_mlp) else hidden[ctx]
        h = relu(add(matmul(inp, transpose(params[f"{prefix}.{layer}.W"])),
                     params[f"{prefix}.{layer}.b"]))
        hidden[ctx] = h
        raw = mean(h, axis=1)
        factor = exp(neg(elementwise_mul(raw, _select(beta, idx, 3))))
        mult = factor if mult is None else elementwise_mul(mult, factor)
    return mult


def _np_segment_softmax(x: np.ndarray, seg: np.ndarray, num_segments: int) -> np.ndarray:
    m = np.full(num_segments, -np.inf)
    np.maximum.at(m, seg, x)
    e = np.exp(x - m[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    return e / denom[seg]


def _propagate(H: Tensor, W: Tensor, a: Tensor, neighbor: np.ndarray, central: np.ndarray,
               mult: Tensor | None, num_nodes: int, collect: bool):
    WH = matmul(H, transpose(W))
    h_ce = gather_rows(WH, central)
    h_nb = gather_rows(WH, neighbor)
    logits = matmul(concat([h_ce, h_nb], axis=1), a)
    combined = logits if mult is None else elementwise_mul(logits, mult)
    scores = leaky_relu(combined, LEAKY_SLOPE)
    alpha = segment_softmax(scores, central, num_nodes)
    messages = elementwise_mul(reshape(alpha, (-1, 1)), h_nb)
    h_next = relu(segment_sum(messages, central, num_nodes))
    aux = None
    if collect:
        raw = logits.data
        aux = {
            "alpha": alpha.data.copy(),
            "multiplier": np.ones_like(raw) if mult is None else mult.data.copy(),
            "logits": raw.copy(),
            "gat_alpha": _np_segment_softmax(np.where(raw > 0, raw, LEAKY_SLOPE * raw),
                                             central, num_nodes),
        }
    return h_next, aux


def propagate_layer(H: Tensor, graph: TransitionGraph, features: ContextFeatures,
                    params: dict[str, Tensor], layer: int, *, direction: str = "in",
                    disabled: frozenset = frozenset(), standard_gat: bool = False,
                    per_layer_mlp: bool = False) -> Tensor:
    """One propagation layer on an explicit input, recomputing the context
    MLP stages 1..layer from the cached feature pairs."""
    neighbor, central, _ = graph.attention_pairs(direction)
    mult = None
    if not standard_gat:
        pair_feats = _pair_feature_tensors(features, params, neighbor, central, disabled)
        hidden: dict[str, Tensor] = {}
        for l in range(1, layer + 1):
            mult = _layer_multiplier(params, pair_feats, hidden, l, per_layer_mlp)
    h_next, _ = _propagate(H, params[f"gat{layer}.W"], params[f"gat{layer}.a"],
                           neighbor, central, mult, graph.num_nodes, False)
    return h_next


def encode_graph(graph: TransitionGraph, features: ContextFeatures,
                 params: dict[str, Tensor], num_layers: int, *, direction: str = "in",
                 disabled: frozenset = frozenset(), standard_gat: bool = False,
                 per_layer_mlp: bool = False, collect: bool = False) -> GraphEncoding:
    """Full propagation stack; returns the mean of the layer outputs."""
    if num_layers < 1:
        raise ValueError(f"encode_graph: num_layers must be >= 1, got {num_layers}")
    neighbor, central, _ = graph.attention_pairs(direction)
    pair_feats: dict[str, Tensor] = {}
    if not standard_gat:
        pair_feats = _pair_feature_tensors(features, params, neighbor, central, disabled)
    hidden: dict[str, Tensor] = {}
    H = params["poi_emb"]
    outputs: list[Tensor] = []
    layer_attn: list[dict] | None = [] if collect else None
    for layer in range(1, num_layers + 1):
        mult = None
        if not standard_gat:
            mult = _layer_multiplier(params, pair_feats, hidden, layer, per_layer_mlp)
        H, aux = _propagate(H, params[f"gat{layer}.W"], params[f"gat{layer}.a"],
                            neighbor, central, mult, graph.num_nodes, collect)
        outputs.append(H)
        if collect:
            layer_attn.append(aux)
    acc = outputs[0]
    for t in outputs[1:]:
        acc = add(acc, t)
    return GraphEncoding(h=scalar_mul(acc, 1.0 / num_layers), neighbor=neighbor,
                         central=central, layer_attn=layer_attn)

"""Diagnostics over trained models: attention histograms, per-node case
studies, ablation sweeps, and a plug-in mutual-information probe.

All read-only over parameters.  The MI probe is a diagnostic, not a
gate: plug-in estimates are biased at small sample sizes, so callers
should report it next to a shuffled-label control.
"""

from __future__ import annotations

import dataclasses
import math
from collections import Counter

import numpy as np

from .graph_encoder import encode_graph
from .ingest import ContextFeatures, Dataset, TransitionGraph
from .tensor import Tensor
from .train import TrainConfig, evaluate, expand_samples, train

VARIANTS = ("full", "no_mutloss", "no_catada", "no_spatada", "no_tempada", "no_contada")
HIST_BINS = 10
SUPPRESS_BELOW = 1e-4
GAT_VISIBLE = 1e-2


def _encode_collect(params, graph, features, config: TrainConfig, standard_gat: bool):
    return encode_graph(graph, features, params, config.gat_layers,
                        direction=config.neighbor_direction,
                        disabled=config.disabled_contexts(),
                        standard_gat=standard_gat,
                        per_layer_mlp=config.context_mlp_per_layer,
                        collect=True)


def attention_histogram(params: dict[str, Tensor], graph: TransitionGraph,
                        features: ContextFeatures, config: TrainConfig,
                        variant: str = "context_adaptive") -> np.ndarray:
    """Counts of final-layer normalized attentions in ten bins over [0, 1].

    Bin b covers [b/10, (b+1)/10); weights of exactly 1.0 (singleton
    neighborhoods) land in the top bin.  Counts sum to the number of
    aggregation pairs.
    """
    if variant not in ("context_adaptive", "standard_gat"):
        raise ValueError(f"attention_histogram: unknown variant {variant!r}")
    enc = _encode_collect(params, graph, features, config,
                          standard_gat=(variant == "standard_gat"))
    alphas = enc.layer_attn[-1]["alpha"]
    counts = np.zeros(HIST_BINS, dtype=np.int64)
    for a in alphas:
        counts[min(int(a * HIST_BINS), HIST_BINS - 1)] += 1
    return counts


def histogram_rows(counts: np.ndarray, variant: str):
    """(bin_low, bin_high, count, log_count, variant) rows for the CSV dump."""
    return [(b / HIST_BINS, (b + 1) / HIST_BINS, int(counts[b]),
             math.log10(counts[b]) if counts[b] > 0 else 0.0, variant)
            for b in range(HIST_BINS)]


def edge_attention_records(params, graph, features, config: TrainConfig):
    """Per-layer per-edge attention dump: src, dst, layer, alpha_gat (same
    layer inputs, multiplier off), alpha_context (the multiplier), alpha_final."""
    enc = _encode_collect(params, graph, features, config, standard_gat=False)
    rows = []
    for layer_idx, aux in enumerate(enc.layer_attn, start=1):
        for e in range(enc.neighbor.size):
            rows.append((int(enc.neighbor[e]), int(enc.central[e]), layer_idx,
                         float(aux["gat_alpha"][e]), float(aux["multiplier"][e]),
                         float(aux["alpha"][e])))
    return rows


def case_study(params: dict[str, Tensor], graph: TransitionGraph, features: ContextFeatures,
               config: TrainConfig, node: int):
    """Final-layer attention per neighbor of ``node`` under both variants.

    A neighbor is flagged suppressed when the context-adaptive weight
    falls below 1e-4 while the standard-GAT weight stays at or above 1e-2.
    """
    if not 0 <= node < graph.num_nodes:
        raise ValueError(f"case_study: unknown node {node}")
    ctx = _encode_collect(params, graph, features, config, standard_gat=False)
    std = _encode_collect(params, graph, features, config, standard_gat=True)
    mask = ctx.central == node
    if not mask.any():
        raise ValueError(f"case_study: node {node} has no neighbors")
    alpha_ctx = ctx.layer_attn[-1]["alpha"][mask]
    alpha_std = std.layer_attn[-1]["alpha"][mask]
    neighbors = ctx.neighbor[mask]
    records = []
    for nb, a_std, a_ctx in zip(neighbors, alpha_std, alpha_ctx):
        records.append({
            "neighbor": int(nb),
            "category": int(features.category[nb]),
            "alpha_gat": float(a_std),
            "alpha_context_adaptive": float(a_ctx),
            "suppressed": bool(a_ctx < SUPPRESS_BELOW and a_std >= GAT_VISIBLE),
        })
    return records


def variant_config(base: TrainConfig, variant: str) -> TrainConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}")
    flags = {} if variant == "full" else {variant: True}
    return dataclasses.replace(base, **flags)


def ablation_suite(dataset: Dataset, graph: TransitionGraph, features: ContextFeatures,
                   base_config: TrainConfig, variants=VARIANTS, split: str = "test"):
    """Train every variant from the same seed and evaluate one split."""
    trajectories = getattr(dataset, split)
    reports = {}
    for variant in variants:
        cfg = variant_config(base_config, variant)
        params, _ = train(dataset, graph, features, cfg)
        reports[variant] = evaluate(params, trajectories, dataset, cfg)
    return reports


def _column_codes(col: np.ndarray, num_bins: int) -> np.ndarray:
    uniq = np.unique(col)
    if uniq.size <= num_bins:
        return np.searchsorted(uniq, col)
    edges = np.quantile(col, np.linspace(0.0, 1.0, num_bins + 1)[1:-1])
    return np.digitize(col, edges, right=True)


def label_entropy(labels) -> float:
    counts = np.array(list(Counter(labels).values()), dtype=np.float64)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def mi_probe(embeddings: np.ndarray, labels, num_bins: int = 4) -> float:
    """Plug-in mutual information (nats) between quantized embeddings and labels.

    Each dimension is quantized independently: exact small-alphabet
    partitions when a column has at most ``num_bins`` distinct values,
    equal-frequency bins otherwise; a sample's cell is the code tuple.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = list(labels)
    if embeddings.ndim != 2 or embeddings.shape[0] != len(labels):
        raise ValueError(f"mi_probe: embeddings shape {embeddings.shape} "
                         f"vs {len(labels)} labels")
    if len(set(labels)) < 2:
        raise ValueError("mi_probe: degenerate single-label input")
    codes = np.stack([_column_codes(embeddings[:, d], num_bins)
                      for d in range(embeddings.shape[1])], axis=1)
    cells = [tuple(row) for row in codes]
    n = len(labels)
    joint = Counter(zip(cells, labels))
    p_cell = Counter(cells)
    p_label = Counter(labels)
    mi = 0.0
    for (cell, label), c in joint.items():
        p_xy = c / n
        mi += p_xy * math.log(p_xy / ((p_cell[cell] / n) * (p_label[label] / n)))
    return max(mi, 0.0)


def graph_embedding_probe(params, graph, features, dataset: Dataset, config: TrainConfig,
                          split: str = "test", num_bins: int = 4, shuffle_seed: int = 0):
    """MI between graph embeddings of each sample's current POI and its next POI,
    for both encoder variants, next to a shuffled-label control."""
    samples = expand_samples(getattr(dataset, split), dataset)
    if not samples:
        raise ValueError(f"graph_embedding_probe: empty split {split!r}")
    labels = [s.target for s in samples]
    last_pois = np.array([s.pois[-1] for s in samples], dtype=np.intp)
    out = {}
    for variant, standard in (("context_adaptive", False), ("standard_gat", True)):
        h = _encode_collect(params, graph, features, config, standard_gat=standard).h.data
        emb = h[last_pois]
        out[f"mi_{variant}"] = mi_probe(emb, labels, num_bins)
        if variant == "context_adaptive":
            rng = np.random.default_rng(shuffle_seed)
            shuffled = [labels[i] for i in rng.permutation(len(labels))]
            out["mi_shuffled_control"] = mi_probe(emb, shuffled, num_bins)
    out["label_entropy_nats"] = label_entropy(labels)
    out["num_bins"] = num_bins
    out["num_samples"] = len(samples)
    return out

"""Sequential preference extractor: concatenated embeddings through
bidirectional single-head scaled dot-product attention.

Each event row is [user || poi || time-slot] (width 3*dim).  A layer is
attention only: softmax(Q K^T / sqrt(3*dim)) V, no causal mask, no
feed-forward sublayer, no layer norm.  An optional residual connection
sits behind a flag, off by default.  Without a positional signal the
layer is order-equivariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, concat, gather_rows, matmul, scalar_mul, softmax, transpose


@dataclass(frozen=True)
class SeqSample:
    """One training/evaluation instance: a prefix and its next-POI target."""

    user: int
    pois: tuple[int, ...]
    slots: tuple[int, ...]
    target: int

    def __post_init__(self):
        if len(self.pois) < 1 or len(self.pois) != len(self.slots):
            raise ValueError(f"SeqSample: bad lengths pois={len(self.pois)} slots={len(self.slots)}")


def embed_sequence(user: int, pois, slots, params: dict[str, Tensor]) -> Tensor:
    """Per-event rows [u || v_t || t_t]; the user embedding repeats each row."""
    k = len(pois)
    u = gather_rows(params["user_emb"], np.full(k, user, dtype=np.intp))
    v = gather_rows(params["poi_emb"], np.asarray(pois, dtype=np.intp))
    t = gather_rows(params["time_emb"], np.asarray(slots, dtype=np.intp))
    return concat([u, v, t], axis=1)


def transformer_layer(E: Tensor, Wq: Tensor, Wk: Tensor, Wv: Tensor) -> Tensor:
    q = matmul(E, Wq)
    k = matmul(E, Wk)
    v = matmul(E, Wv)
    scores = scalar_mul(matmul(q, transpose(k)), 1.0 / math.sqrt(E.data.shape[1]))
    return matmul(softmax(scores, axis=1), v)


def encode_sequence(E: Tensor, params: dict[str, Tensor], num_layers: int,
                    residual: bool = False) -> Tensor:
    h = E
    for layer in range(1, num_layers + 1):
        out = transformer_layer(h, params[f"trans{layer}.Wq"], params[f"trans{layer}.Wk"],
                                params[f"trans{layer}.Wv"])
        h = add(out, h) if residual else out
    return h

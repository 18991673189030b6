"""Model parameter construction, naming, and checkpoint serialization.

Parameters live in a flat ``name -> Tensor`` dict built in a fixed order
from one seeded generator, so identical seeds give identical models.
Checkpoints are a versioned JSON manifest mapping names to shapes and
row-major values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .optim import init_params
from .tensor import Tensor

CHECKPOINT_FORMAT = "poirec-checkpoint"
CHECKPOINT_VERSION = 1

CONTEXTS = ("category", "spatial", "temporal")
CONTEXT_PREFIX = {"category": "ada_cat", "spatial": "ada_spat", "temporal": "ada_temp"}


@dataclass(frozen=True)
class ModelDims:
    num_users: int
    num_pois: int
    num_cats: int
    dmax: int
    dim: int
    gat_layers: int
    transformer_layers: int
    context_mlp_per_layer: bool = False
    align_perdim: bool = False


def init_model_params(dims: ModelDims, seed: int) -> dict[str, Tensor]:
    """All learnable tensors, keyed by name, from one seeded generator.

    Weight matrices and embedding tables use uniform fan-in init; biases
    and the context-balance logits start at zero (so the three balance
    weights start at exactly 1/3 each).
    """
    rng = np.random.default_rng(seed)
    d = dims.dim
    p: dict[str, Tensor] = {}

    def weight(name, shape, fan_in):
        p[name] = Tensor(init_params(shape, fan_in, rng), requires_grad=True)

    def zeros(name, shape):
        p[name] = Tensor(np.zeros(shape), requires_grad=True)

    weight("user_emb", (dims.num_users, d), d)
    weight("poi_emb", (dims.num_pois, d), d)
    weight("cat_emb", (dims.num_cats, d), d)
    weight("dist_emb", (dims.dmax, d), d)
    weight("time_emb", (24, d), d)
    for layer in range(1, dims.gat_layers + 1):
        weight(f"gat{layer}.W", (d, d), d)
        weight(f"gat{layer}.a", (2 * d,), 2 * d)
    for ctx in CONTEXTS:
        prefix = CONTEXT_PREFIX[ctx]
        for stage in range(1, dims.gat_layers + 1):
            # Stage 1 consumes the concatenated feature pair (width 2*dim);
            # deeper stages consume the previous hidden state, unless each
            # layer gets its own pair-consuming stage.
            in_width = 2 * d if (stage == 1 or dims.context_mlp_per_layer) else d
            weight(f"{prefix}.{stage}.W", (d, in_width), in_width)
            zeros(f"{prefix}.{stage}.b", (d,))
    zeros("balance.logits", (3,))
    for layer in range(1, dims.transformer_layers + 1):
        for mat in ("Wq", "Wk", "Wv"):
            weight(f"trans{layer}.{mat}", (3 * d, 3 * d), 3 * d)
    weight("head.W", (dims.num_pois, 3 * d), 3 * d)
    zeros("head.b", (dims.num_pois,))
    if dims.align_perdim:
        weight("align.proj", (3 * d, d), 3 * d)
    return p


def clone_values(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in params.items()}


def restore_values(params: dict[str, Tensor], values: dict[str, np.ndarray]) -> None:
    for name, t in params.items():
        t.data = values[name].copy()


def squared_norm(params: dict[str, Tensor]) -> float:
    return float(sum((t.data ** 2).sum() for t in params.values()))


def save_checkpoint(path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    params = {
        name: Tensor(np.array(entry["data"]).reshape(entry["shape"]), requires_grad=True)
        for name, entry in payload["params"].items()
    }
    return params, payload["meta"]

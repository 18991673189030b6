"""Prediction head, losses, joint training loop, and ranking evaluation.

Training: per epoch the graph encoder runs once over the full graph and
its computation record is shared by every batch of that epoch; each
batch backward flows through it into the graph-side parameters.  Every
trajectory of length m contributes m-1 prefix samples (prefix of length
t predicts event t+1), for training and evaluation alike.  Validation
NDCG@10 gates early stopping; the best-validation parameter snapshot is
restored before returning.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .align import mutual_loss
from .graph_encoder import balance_weights, encode_graph
from .ingest import ContextFeatures, Dataset, TransitionGraph
from .metrics import DEFAULT_KS, EvalReport, summarize_ranks, target_rank
from .optim import Adam
from .params import ModelDims, clone_values, init_model_params, restore_values, squared_norm
from .seq_encoder import SeqSample, embed_sequence, encode_sequence
from .tensor import (Tensor, add, const, gather_rows, log, matmul, mean, neg, reshape,
                     scalar_mul, softmax, stack_scalars, sum_, elementwise_mul)


class TrainingDivergence(RuntimeError):
    """Raised when the training loss turns non-finite."""


@dataclass
class TrainConfig:
    dim: int = 120
    learning_rate: float = 1e-4
    mutual_weight: float = 0.7      # weight of the alignment loss in the objective
    l2: float = 1e-5                # L2 coefficient, applied inside the optimizer
    gat_layers: int = 2
    transformer_layers: int = 2
    epochs: int = 100
    patience: int = 10              # epochs without val improvement; <=0 disables
    seed: int = 42
    batch_size: int = 32
    no_mutloss: bool = False
    no_catada: bool = False
    no_spatada: bool = False
    no_tempada: bool = False
    no_contada: bool = False
    align_mode: str = "position"    # "position" or "perdim"
    neighbor_direction: str = "in"  # "in" or "out"
    self_loops: bool = True
    context_mlp_per_layer: bool = False
    residual: bool = False

    def validate(self) -> None:
        if self.dim <= 0 or self.gat_layers < 1 or self.transformer_layers < 1:
            raise ValueError(f"bad config: dim={self.dim}, gat_layers={self.gat_layers}, "
                             f"transformer_layers={self.transformer_layers}")
        if self.mutual_weight < 0 or self.l2 < 0 or self.learning_rate <= 0:
            raise ValueError(f"bad config: learning_rate={self.learning_rate}, "
                             f"mutual_weight={self.mutual_weight}, l2={self.l2}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"bad config: epochs={self.epochs}, batch_size={self.batch_size}")
        if self.align_mode not in ("position", "perdim"):
            raise ValueError(f"bad config: align_mode={self.align_mode!r}")
        if self.neighbor_direction not in ("in", "out"):
            raise ValueError(f"bad config: neighbor_direction={self.neighbor_direction!r}")

    @property
    def effective_mutual_weight(self) -> float:
        return 0.0 if self.no_mutloss else self.mutual_weight

    def disabled_contexts(self) -> frozenset:
        out = set()
        if self.no_catada:
            out.add("category")
        if self.no_spatada:
            out.add("spatial")
        if self.no_tempada:
            out.add("temporal")
        return frozenset(out)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        values = parse_kv_file(path)
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ValueError(f"{path}: unknown config key {key!r}")
            kwargs[key] = _coerce(raw, fields[key].type, key)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def parse_kv_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _coerce(raw: str, typ, key: str):
    name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    if name == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if name == "int":
        return int(raw)
    if name == "float":
        return float(raw)
    return raw


def dims_for(dataset: Dataset, config: TrainConfig) -> ModelDims:
    return ModelDims(num_users=len(dataset.users), num_pois=len(dataset.pois),
                     num_cats=len(dataset.categories), dmax=dataset.dmax, dim=config.dim,
                     gat_layers=config.gat_layers,
                     transformer_layers=config.transformer_layers,
                     context_mlp_per_layer=config.context_mlp_per_layer,
                     align_perdim=(config.align_mode == "perdim"))


def expand_samples(trajectories, dataset: Dataset) -> list[SeqSample]:
    """Each trajectory of length m yields m-1 prefix -> next-POI samples."""
    samples: list[SeqSample] = []
    for traj in trajectories:
        user = dataset.users[traj.user_id]
        pois = [dataset.pois[p] for p, _, _ in traj.events]
        slots = [s for _, s, _ in traj.events]
        for t in range(1, len(traj.events)):
            samples.append(SeqSample(user=user, pois=tuple(pois[:t]),
                                     slots=tuple(slots[:t]), target=pois[t]))
    return samples


def predict_scores(h_last: Tensor, W_s: Tensor, b_s: Tensor) -> Tensor:
    """Probability vector over the POI vocabulary for the next visit."""
    return softmax(add(matmul(W_s, h_last), b_s), axis=0)


def ce_loss(probs: Tensor, target: int) -> Tensor:
    onehot = np.zeros(probs.data.shape[0])
    onehot[target] = 1.0
    return neg(sum_(elementwise_mul(log(probs), const(onehot))))


def total_loss(ce_value: float, jm_value: float, config: TrainConfig,
               params: dict[str, Tensor] | None = None) -> float:
    """Reported objective: ce + mutual_weight * jm + l2 * ||theta||^2.

    The L2 term is realized inside the optimizer step; it is added here
    explicitly so logged losses show the full regularized objective.
    """
    reg = config.l2 * squared_norm(params) if (params is not None and config.l2 > 0) else 0.0
    return ce_value + config.effective_mutual_weight * jm_value + reg


def sequence_forward(sample: SeqSample, params: dict[str, Tensor], config: TrainConfig):
    """(H, h_last) for one sample's prefix."""
    E = embed_sequence(sample.user, sample.pois, sample.slots, params)
    H = encode_sequence(E, params, config.transformer_layers, residual=config.residual)
    h_last = reshape(gather_rows(H, [len(sample.pois) - 1]), (-1,))
    return H, h_last


def sample_objective(sample: SeqSample, params: dict[str, Tensor], h_graph: Tensor | None,
                     config: TrainConfig):
    """(ce, jm) tensors for one sample; jm is None when alignment is off."""
    H, h_last = sequence_forward(sample, params, config)
    probs = predict_scores(h_last, params["head.W"], params["head.b"])
    ce = ce_loss(probs, sample.target)
    jm = None
    if h_graph is not None:
        rows = gather_rows(h_graph, np.asarray(sample.pois, dtype=np.intp))
        jm = mutual_loss(H, rows, mode=config.align_mode, proj=params.get("align.proj"))
    return ce, jm


def _frozen(params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Detached view of the parameters (no backward records built)."""
    return {name: Tensor(t.data) for name, t in params.items()}


def evaluate(params: dict[str, Tensor], trajectories, dataset: Dataset, config: TrainConfig,
             ks=DEFAULT_KS) -> EvalReport:
    """Rank the true next POI for every prefix sample of the given split."""
    samples = expand_samples(trajectories, dataset)
    if not samples:
        raise ValueError("evaluate: empty split")
    frozen = _frozen(params)
    ranks = []
    for sample in samples:
        _, h_last = sequence_forward(sample, frozen, config)
        probs = predict_scores(h_last, frozen["head.W"], frozen["head.b"])
        ranks.append(target_rank(probs.data, sample.target))
    return summarize_ranks(ranks, ks)


def train(dataset: Dataset, graph: TransitionGraph, features: ContextFeatures,
          config: TrainConfig, params: dict[str, Tensor] | None = None,
          log=None):
    """Joint training with early stopping; returns (params, EvalReport)."""
    config.validate()
    if not dataset.train:
        raise ValueError("train: empty training split")
    if params is None:
        params = init_model_params(dims_for(dataset, config), config.seed)
    optimizer = Adam(params, lr=config.learning_rate, weight_decay=config.l2)
    rng = np.random.default_rng(config.seed)
    samples = expand_samples(dataset.train, dataset)
    beta = config.effective_mutual_weight
    use_graph = beta > 0.0

    loss_curve: list[float] = []
    val_curve: list[float] = []
    balance_curve: list[tuple[float, float, float]] = []
    best_ndcg = -math.inf
    best_values = clone_values(params)
    best_epoch = 0
    bad_epochs = 0

    for epoch in range(1, config.epochs + 1):
        h_graph = None
        if use_graph:
            h_graph = encode_graph(graph, features, params, config.gat_layers,
                                   direction=config.neighbor_direction,
                                   disabled=config.disabled_contexts(),
                                   standard_gat=config.no_contada).h
        order = rng.permutation(len(samples))
        loss_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            optimizer.zero_grad()
            ces = []
            jms = []
            for idx in batch:
                ce, jm = sample_objective(samples[idx], params, h_graph, config)
                ces.append(ce)
                if jm is not None:
                    jms.append(jm)
            objective = mean(stack_scalars(ces))
            jm_value = 0.0
            if jms:
                jm_mean = mean(stack_scalars(jms))
                jm_value = jm_mean.item()
                objective = add(objective, scalar_mul(jm_mean, beta))
            if not np.isfinite(objective.data):
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}")
            objective.backward()
            optimizer.step()
            ce_value = objective.item() - beta * jm_value
            loss_sum += total_loss(ce_value, jm_value, config, params) * len(batch)
        train_loss = loss_sum / len(samples)
        loss_curve.append(train_loss)
        balance = balance_weights(params["balance.logits"]).data
        balance_curve.append((float(balance[0]), float(balance[1]), float(balance[2])))
        val_report = evaluate(params, dataset.val, dataset, config)
        val_ndcg = val_report.ndcg[10]
        val_curve.append(val_ndcg)
        if log is not None:
            log(epoch, train_loss, val_ndcg)
        if val_ndcg > best_ndcg:
            best_ndcg = val_ndcg
            best_values = clone_values(params)
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if config.patience > 0 and bad_epochs >= config.patience:
                break

    restore_values(params, best_values)
    report = evaluate(params, dataset.val, dataset, config)
    report.loss_curve = loss_curve
    report.val_curve = val_curve
    report.balance_curve = balance_curve
    report.best_epoch = best_epoch
    return params, report

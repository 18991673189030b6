"""Graph-sequential mutual enhancement: bidirectional KL alignment.

The two extractors emit per-sequence matrices of different row widths
(dim vs 3*dim), so each row is reduced to its mean and a softmax over
the sequence positions gives one distribution per extractor; the loss is
the symmetric sum KL(P_s || P_g) + KL(P_g || P_s).  An alternative mode
projects the sequential matrix to the graph width and applies the
softmax per dimension over positions, averaging the KL across
dimensions.  Length-1 sequences contribute zero either way.
"""

from __future__ import annotations

from .tensor import (Tensor, ShapeError, add, elementwise_mul, log, matmul, mean, neg,
                     softmax, sum_)


def position_distribution(H: Tensor) -> Tensor:
    """Row-mean scores, softmaxed over the sequence positions."""
    return softmax(mean(H, axis=1), axis=0)


def kl(p: Tensor, q: Tensor) -> Tensor:
    """sum_t p_t * log(p_t / q_t), natural log, 1e-12 clamp inside the logs."""
    if p.data.shape != q.data.shape:
        raise ShapeError(f"kl: shapes {p.data.shape} and {q.data.shape}")
    return sum_(elementwise_mul(p, add(log(p), neg(log(q)))))


def mutual_loss(H_seq: Tensor, H_graph: Tensor, *, mode: str = "position",
                proj: Tensor | None = None) -> Tensor:
    """Symmetric KL between the two extractors' per-sequence distributions."""
    if H_seq.data.shape[0] != H_graph.data.shape[0]:
        raise ShapeError(f"mutual_loss: sequence lengths {H_seq.data.shape[0]} "
                         f"and {H_graph.data.shape[0]}")
    if mode == "position":
        p_seq = position_distribution(H_seq)
        p_graph = position_distribution(H_graph)
        return add(kl(p_seq, p_graph), kl(p_graph, p_seq))
    if mode == "perdim":
        if proj is None:
            raise ValueError("mutual_loss: perdim mode needs the projection parameter")
        s = softmax(matmul(H_seq, proj), axis=0)
        g = softmax(H_graph, axis=0)
        fwd = mean(sum_(elementwise_mul(s, add(log(s), neg(log(g)))), axis=0))
        bwd = mean(sum_(elementwise_mul(g, add(log(g), neg(log(s)))), axis=0))
        return add(fwd, bwd)
    raise ValueError(f"mutual_loss: unknown mode {mode!r}")

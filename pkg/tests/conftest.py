import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from poirec.ingest import ContextFeatures, TransitionGraph
from poirec.params import ModelDims, init_model_params


def normalized_rows(rng, rows, cols, zero_rows=()):
    m = rng.uniform(0.1, 1.0, size=(rows, cols))
    m = m / m.sum(axis=1, keepdims=True)
    for r in zero_rows:
        m[r] = 0.0
    return m


def make_graph(num_nodes, edges, self_loops=True):
    """TransitionGraph from a list of (src, dst) or (src, dst, count)."""
    src = np.array([e[0] for e in edges], dtype=np.intp)
    dst = np.array([e[1] for e in edges], dtype=np.intp)
    cnt = np.array([e[2] if len(e) > 2 else 1 for e in edges], dtype=np.int64)
    return TransitionGraph(num_nodes=num_nodes, edge_src=src, edge_dst=dst,
                           edge_count=cnt, edge_bin=np.zeros(len(edges), dtype=np.intp),
                           self_loops=self_loops)


def random_instance(num_nodes=4, dim=2, gat_layers=2, cats=2, dmax=3, seed=9,
                    edges=((0, 1), (1, 2), (2, 0), (0, 2), (3, 1)), users=2,
                    transformer_layers=1, self_loops=True):
    """Small random graph + features + params bundle for encoder tests."""
    rng = np.random.default_rng(seed)
    graph = make_graph(num_nodes, edges, self_loops=self_loops)
    features = ContextFeatures(category=rng.integers(0, cats, num_nodes).astype(np.intp),
                               d_src=normalized_rows(rng, num_nodes, dmax),
                               d_dst=normalized_rows(rng, num_nodes, dmax),
                               hourly=normalized_rows(rng, num_nodes, 24))
    dims = ModelDims(num_users=users, num_pois=num_nodes, num_cats=cats, dmax=dmax,
                     dim=dim, gat_layers=gat_layers, transformer_layers=transformer_layers)
    params = init_model_params(dims, seed + 1)
    # non-uniform balance so tests exercise the softmax weighting
    params["balance.logits"].data = np.array([0.3, -0.2, 0.1])
    return graph, features, params, dims


def param_lists(params):
    """Parameter values as nested lists for the scalar-loop oracles."""
    return {k: t.data.tolist() for k, t in params.items()}


@pytest.fixture
def toy3():
    """The documented 3-node toy graph: 4 observed edges plus self pairs."""
    return random_instance(num_nodes=3, dim=2, gat_layers=2, seed=17,
                           edges=((0, 1), (1, 2), (2, 0), (0, 2)))

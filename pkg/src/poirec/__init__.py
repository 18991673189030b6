"""Next-POI recommendation with context-adaptive graph attention, a
sequence transformer, and KL-based mutual enhancement between the two."""

from .align import kl, mutual_loss, position_distribution
from .graph_encoder import (ada_att, context_features_for_edge, context_multiplier,
                            encode_graph, gat_logit, propagate_layer)
from .ingest import (CheckIn, ContextFeatures, DataError, Dataset, Trajectory,
                     TransitionGraph, build_transition_graph, chrono_split, distance_bin,
                     extract_context_features, filter_dataset, haversine_km, load_checkins,
                     prepare_dataset)
from .metrics import EvalReport, ndcg_gain, summarize_ranks, target_rank
from .optim import Adam, init_params
from .params import ModelDims, init_model_params, load_checkpoint, save_checkpoint
from .seq_encoder import SeqSample, embed_sequence, encode_sequence, transformer_layer
from .synth import SynthConfig, generate_rows, generate_synthetic
from .tensor import ShapeError, Tensor, const, finite_diff_check, param
from .train import (TrainConfig, TrainingDivergence, ce_loss, evaluate, expand_samples,
                    predict_scores, total_loss, train)

__version__ = "0.1.0"

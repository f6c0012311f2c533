"""unionrank: joint listwise re-ranking of short-text candidates.

A query's N candidate items are collapsed into one sorted token union and
encoded in a single transformer pass; per-item scores come from selective
mean pooling against each item's membership mask and one shared linear
classifier.  Training objectives include pointwise BCE and three listwise
losses, among them a ranking-probability loss over cumulative lower-set
masses.  The package also ships ranking metrics, a synthetic corpus
generator, and an analytic + measured cost model for the joint-vs-
pointwise trade-off.
"""

from .autodiff import ComputeGraph, NonFiniteValue, ShapeMismatch, Tensor
from .costmodel import CostReport, bench, cost_model, encoder_matmul_flops
from .data import (
    LoadResult,
    RankingInstance,
    load_dataset,
    synthesize_dataset,
    write_jsonl,
)
from .encoder import (
    AssembledInput,
    ContextEmbeddings,
    EncoderConfig,
    ModelParams,
    assemble_input,
    encode,
    load_checkpoint,
    reinject_positional,
    save_checkpoint,
    sinusoid_encoding,
)
from .losses import (
    DegenerateTargets,
    RankProbMatrix,
    bce_loss,
    ce_loss,
    listnet_loss,
    lower_set_matrix,
    lower_sets,
    ranking_prob_matrix,
    rpl_loss,
)
from .metrics import (
    MetricsReport,
    accuracy_at_threshold,
    auc_roc,
    map_at_k,
    mrr_at_k,
    precision_recall_at_k,
    retention_threshold,
)
from .ranker import (
    PooledReps,
    ScoreVector,
    joint_scores,
    pointwise_score,
    rank,
    score,
    selective_pool,
)
from .tokenizer import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    TokenSequence,
    Vocabulary,
    build_vocab,
    tokenize,
)
from .training import AdamW, TrainConfig, TrainResult, evaluate, train
from .union import (
    OverlapStats,
    UnionEncoding,
    attention_mask_for_item,
    build_union,
    compression_factor,
    overlap_stats,
)

__version__ = "0.1.0"

"""tabembed: dual-axis transformer embeddings for tables.

A from-scratch table representation learner: cells are embedded by a frozen
hashed-n-gram text encoder, contextualized by row and column transformers
whose outputs are averaged at every layer, and pretrained to detect
corrupted cells. Includes fine-tuning heads for column/row population and
column type prediction, ranking metrics, and exact kNN / k-means tools over
the learned embeddings.
"""

from .corpus import (
    CellVocab,
    CorpusError,
    Table,
    TruncationLimits,
    build_cell_vocabulary,
    load_corpus,
    truncate_table,
)
from .corruption import (
    CorruptionConfig,
    CorruptionRecord,
    corrupt,
    corrupt_freq,
    corrupt_mix,
    corrupt_swap,
)
from .embedder import CellEmbedder, EmbedderConfig, PositionalEmbeddings, apply_positions
from .encoder import (
    EncodeError,
    EncoderConfig,
    TableEncoding,
    augment_with_cls,
    build_grid_batch,
    encode,
    encode_tables,
    extract_embedding,
    pool_layer,
)
from .metrics import (
    average_precision,
    binary_prf,
    mean_average_precision,
    mrr,
    ndcg_at_k,
    rank_labels,
    ranking_report,
    support_weighted_f1,
)
from .neighbors import EmbeddingIndex, build_index, kmeans, knn, load_index, save_index
from .params import ModelParams
from .tasks import (
    FinetuneSpec,
    colpop_forward,
    coltype_forward,
    detect_corruption,
    finetune,
    rowpop_forward,
)
from .training import (
    Adam,
    Checkpoint,
    TrainingError,
    corruption_probability,
    load_checkpoint,
    make_batches,
    pretrain,
    pretrain_loss,
    save_checkpoint,
)

__version__ = "0.1.0"

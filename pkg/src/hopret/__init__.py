"""hopret: multi-hop dense retrieval over unstructured passage corpora.

Encode (question + passages retrieved so far), run maximum inner-product
search per hop, and beam-search over passage chains scored by summed inner
products.  Includes a contrastive trainer with in-batch / hard / memory-bank
negatives, exact and HNSW indexes with binary persistence, and an
evaluation + latency harness.
"""

from .corpus import Corpus, CorpusFormatError, Passage, load_corpus
from .encoders import (
    EncoderSpec,
    HashedEncoder,
    LinearEncoder,
    QueryInput,
    RemoteEncoder,
    RemoteEncoderError,
    hashed_embed,
    linear_embed,
    render_passage,
    render_query,
)
from .evaluation import (
    BenchRow,
    EvalRecord,
    MetricsReport,
    answer_recall,
    bench_latency,
    evaluate_questions,
    load_eval_records,
    normalize_answer,
    precision_recall_f1,
    recall_at_k,
    run_eval,
    sp_em,
)
from .index import (
    FlatIndex,
    HnswIndex,
    HnswParams,
    IndexFormatError,
    build_flat,
    build_hnsw,
    load_index,
    save_index,
)
from .retriever import (
    BeamConfig,
    Chain,
    ChainScorer,
    RemoteChainScorer,
    StopPredictor,
    lexical_chain_score,
    lexical_score,
    make_chain,
    predict_stop,
    rerank,
    retrieve,
)
from .synthetic import generate_synthetic_task
from .trainer import (
    FULL_SCALE_PRESET,
    MemoryBank,
    ModelFormatError,
    TrainConfig,
    TrainResult,
    TrainingError,
    TrainingExample,
    contrastive_loss,
    load_model,
    load_training_data,
    mine_hard_negatives,
    order_positives,
    save_model,
    train,
    train_epoch,
    training_instances,
)

__version__ = "0.1.0"

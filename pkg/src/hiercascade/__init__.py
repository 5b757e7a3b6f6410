"""Coarse-to-fine hierarchical embedding retrieval."""

__version__ = "0.1.0"

from .cascade import (  # noqa: E402
    CascadeConfig,
    CascadeTrace,
    QueryEmbedding,
    batch_search,
    brute_force_search,
    cascade_search,
    survivors_from_scan_counts,
    topk_level,
)
from .cost import CostParams, hierarchical_cost, simulate_pipeline, traditional_cost  # noqa: E402
from .metrics import EvalReport, average_recall, recall_at_k  # noqa: E402
from .objectives import (  # noqa: E402
    EolProjection,
    PairBatch,
    VlmScorer,
    finite_diff_grad,
    hrl_loss,
    in_batch_softmax,
    project_eol,
    retrieval_loss_level,
    similarity,
    vlm_loss,
    vlm_score,
)
from .store import (  # noqa: E402
    GalleryStore,
    HierEmbedding,
    HierSchedule,
    RawItem,
    build_store,
    load_store,
    save_store,
)
from .synth import SynthConfig, generate_pairs  # noqa: E402
from .train import TrainConfig, encode_corpus, train_eol  # noqa: E402

"""Feedback-loop simulator for music recommenders.

Iteratively trains a recommender on implicit-feedback listening data,
simulates which recommended track each user accepts, feeds the accepted
items back into the training data, and tracks how country and popularity
representation drift over the iterations.
"""

__version__ = "0.1.0"

from .choice import ChoiceConfig, acceptance_probabilities, sample_accepted_item
from .dataset import (
    IngestOptions,
    Interaction,
    InteractionDataset,
    TrackMeta,
    UserMeta,
    augment,
    ingest,
    random_split,
    write_interactions,
)
from .engine import (
    IterationRecord,
    SimulationConfig,
    run_iteration,
    run_simulation,
)
from .metrics import (
    AttributeDistribution,
    country_distribution,
    country_proportions,
    delta_percent,
    jsd,
    ndcg_at_k,
    paired_t_test,
    popularity_binning,
)
from .recommenders import (
    BPRModel,
    FixtureModel,
    ItemKNNModel,
    PopModel,
    RandomModel,
    RecommendationList,
    TrainingConfig,
    make_model,
    recommend_top_k,
)
from .reporting import final_report
from .synthetic import SyntheticSpec, block_dataset, generate_synthetic, majority_skew_spec

__all__ = [
    "__version__",
    "ChoiceConfig",
    "acceptance_probabilities",
    "sample_accepted_item",
    "IngestOptions",
    "Interaction",
    "InteractionDataset",
    "TrackMeta",
    "UserMeta",
    "augment",
    "ingest",
    "random_split",
    "write_interactions",
    "IterationRecord",
    "SimulationConfig",
    "run_iteration",
    "run_simulation",
    "AttributeDistribution",
    "country_distribution",
    "country_proportions",
    "delta_percent",
    "jsd",
    "ndcg_at_k",
    "paired_t_test",
    "popularity_binning",
    "BPRModel",
    "FixtureModel",
    "ItemKNNModel",
    "PopModel",
    "RandomModel",
    "RecommendationList",
    "TrainingConfig",
    "make_model",
    "recommend_top_k",
    "final_report",
    "SyntheticSpec",
    "block_dataset",
    "generate_synthetic",
    "majority_skew_spec",
]

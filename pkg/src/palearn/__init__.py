"""Pretext-based active learning: rotation self-supervision, KL confusion and
sub-query diversity scores for pool-based sample selection."""

from .core import (Dataset, Hyperparameters, PoolError, PoolState, QueryBudget, RunLog,
                   ScoreRecord, commit_query, init_pools, load_dataset, save_dataset)
from .diagnostics import (component_correlations, optimal_alpha, overshadow_probe, pearson,
                          spearman, standardize)
from .nn import (Architecture, ScoringNetwork, TaskNetwork, TrainConfig, clone_ssl,
                 finetune_ssl, train_scoring, train_task)
from .scoring import (Pmf, classification_confusion_score, combined_score,
                      diversity_component, entropy_variant_score, hybrid_score, rotate90,
                      ssl_confusion_score)
from .selection import (Query, StrategyConfig, coreset_select, entropy_select, pal_select,
                        random_select)
from .simulate import (ExperimentPlan, Oracle, generate_synthetic_dataset, make_biased_pool,
                       make_oracle, missing_class_sampling_rate, run_active_learning)

__version__ = "0.1.0"

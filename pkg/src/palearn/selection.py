"""Query strategies: PAL sub-query selection and the random, entropy and
greedy k-center (core-set) baselines.

Every greedy step breaks ties by ascending sample id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .core import Dataset, Hyperparameters, PoolState, QueryBudget, ScoreRecord
from .nn import (ScoringNetwork, TaskNetwork, TrainConfig, clone_ssl, finetune_ssl,
                 predict_in_chunks)
from .scoring import (classification_confusion_scores, diversity_components, entropy,
                      ssl_confusion_scores)

STRATEGY_KINDS = ("pal", "random", "entropy", "coreset")


class SelectionError(ValueError):
    pass


@dataclass
class Query:
    sample_ids: list
    subquery_boundaries: tuple
    # (ScoreRecord, subquery index) pairs; only filled by scored strategies.
    records: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.sample_ids = [int(i) for i in self.sample_ids]
        b = tuple(int(x) for x in self.subquery_boundaries)
        if b[0] != 0 or b[-1] != len(self.sample_ids) or any(x > y for x, y in zip(b, b[1:])):
            raise ValueError(f"bad subquery boundaries {b} for {len(self.sample_ids)} ids")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValueError("query ids must be unique")
        self.subquery_boundaries = b

    def subqueries(self) -> list:
        b = self.subquery_boundaries
        return [self.sample_ids[b[k]:b[k + 1]] for k in range(len(b) - 1)]

    def manifest(self, round_index: int, strategy: str, seed: int) -> dict:
        return {"round": round_index, "strategy": strategy, "ids": self.sample_ids,
                "subquery_boundaries": list(self.subquery_boundaries), "seed": seed}

    def write_manifest(self, path, round_index: int, strategy: str, seed: int) -> None:
        with open(path, "w") as fh:
            json.dump(self.manifest(round_index, strategy, seed), fh, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    hyperparameters: Hyperparameters = Hyperparameters()
    subquery_count: int = 4
    name: Optional[str] = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.subquery_count < 1:
            raise ValueError("subquery_count must be positive")
        if self.name is None:
            object.__setattr__(self, "name", self.kind)

    def budget(self, query_size: int) -> QueryBudget:
        # Only PAL uses sub-queries; baselines return one block.
        return QueryBudget(query_size, self.subquery_count if self.kind == "pal" else 1)


def _even_boundaries(budget: QueryBudget) -> tuple:
    step = budget.subquery_size
    return tuple(range(0, budget.query_size + 1, step))


def _check_capacity(pool: PoolState, budget: QueryBudget) -> None:
    if len(pool.unlabeled) < budget.query_size:
        raise SelectionError(f"query size {budget.query_size} exceeds the "
                             f"{len(pool.unlabeled)} unlabeled samples")


def top_by_score(ids: np.ndarray, scores: np.ndarray, count: int) -> np.ndarray:
    """Indices into ``ids`` of the ``count`` highest scores, ties by ascending id."""
    order = np.lexsort((ids, -np.asarray(scores, dtype=np.float64)))
    return order[:count]


def pal_select(pool: PoolState, dataset: Dataset, scoring_net: ScoringNetwork,
               budget: QueryBudget, hp: Hyperparameters) -> Query:
    """Diversity-aware sub-query selection.

    The first of K sub-queries takes the top N/K unlabeled samples by
    ``S_S + lambda1 * S_C``. Before each later sub-query a clone of the scoring
    network is fine-tuned with rotation self-supervision on everything picked
    so far, and ranking switches to ``S_S + lambda1 * S_C + lambda2 * S_D``
    where S_D is the clone's rotation score. S_S and S_C are computed once
    from the (unmodified) scoring network.
    """
    _check_capacity(pool, budget)
    ids = pool.unlabeled_ids()
    images = dataset.images[ids]
    s_ssl = ssl_confusion_scores(scoring_net.rotation_probs_all(images))
    cls_probs = predict_in_chunks(scoring_net.predict_class_probs, images)
    s_cls = classification_confusion_scores(cls_probs)
    s_ent = s_ssl + hp.lambda1 * entropy(cls_probs)
    base = s_ssl + hp.lambda1 * s_cls

    remaining = np.ones(len(ids), dtype=bool)
    picked: list = []
    records: list = []
    clone = None
    for k in range(budget.subquery_count):
        live = np.flatnonzero(remaining)
        if k == 0:
            s_div = None
            score = base[live]
        else:
            if clone is None:
                clone = clone_ssl(scoring_net)
            clone = finetune_ssl(clone, picked, dataset, TrainConfig.finetune(hp, hp.seed + k))
            s_div = diversity_components(clone.rotation_probs_all(images[live]))
            score = base[live] + hp.lambda2 * s_div
        for j, idx in enumerate(live):
            records.append((ScoreRecord(
                int(ids[idx]), float(s_ssl[idx]), float(s_cls[idx]),
                None if s_div is None else float(s_div[j]), float(score[j]),
                float(s_ent[idx])), k))
        chosen = live[top_by_score(ids[live], score, budget.subquery_size)]
        remaining[chosen] = False
        picked.extend(int(i) for i in ids[chosen])
    return Query(picked, _even_boundaries(budget), records)


def random_select(pool: PoolState, budget: QueryBudget, seed: int) -> Query:
    _check_capacity(pool, budget)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool.unlabeled_ids(), size=budget.query_size, replace=False)
    return Query(chosen.tolist(), _even_boundaries(budget))


def entropy_select(pool: PoolState, dataset: Dataset, task_net: TaskNetwork,
                   budget: QueryBudget) -> Query:
    """Top-N unlabeled samples by entropy of the task network's class PMF."""
    _check_capacity(pool, budget)
    ids = pool.unlabeled_ids()
    probs = predict_in_chunks(task_net.predict_class_probs, dataset.images[ids])
    return entropy_select_from_probs(ids, probs, budget)


def entropy_select_from_probs(ids: np.ndarray, probs: np.ndarray, budget: QueryBudget) -> Query:
    ids = np.asarray(ids, dtype=np.int64)
    order = top_by_score(ids, entropy(probs), budget.query_size)
    return Query(ids[order].tolist(), _even_boundaries(budget))


def coreset_select(pool: PoolState, dataset: Dataset, embed: Callable,
                   budget: QueryBudget) -> Query:
    """Greedy k-center on Euclidean embedding distances.

    ``embed`` maps an (n, H, W, C) batch to an (n, d) array, e.g.
    ``TaskNetwork.embed``.
    """
    _check_capacity(pool, budget)
    unl = pool.unlabeled_ids()
    lab = pool.labeled_ids()
    e_unl = np.asarray(predict_in_chunks(embed, dataset.images[unl]), dtype=np.float64)
    e_lab = (np.asarray(predict_in_chunks(embed, dataset.images[lab]), dtype=np.float64)
             if lab.size else np.empty((0, e_unl.shape[1])))
    order = k_center_greedy(e_unl, e_lab, budget.query_size)
    return Query(unl[order].tolist(), _even_boundaries(budget))


def k_center_greedy(candidates: np.ndarray, centers: np.ndarray, count: int) -> list:
    """Repeatedly take the candidate farthest from its nearest center.

    Candidates must be ordered by ascending id so ``argmax`` breaks ties
    toward the lower id. Returns candidate row indices in pick order.
    """
    n = len(candidates)
    min_dist = np.full(n, np.inf)
    for start in range(0, len(centers), 2048):
        d = cdist(candidates, centers[start:start + 2048]).min(axis=1)
        np.minimum(min_dist, d, out=min_dist)
    taken = np.zeros(n, dtype=bool)
    picks = []
    for _ in range(count):
        masked = np.where(taken, -np.inf, min_dist)
        j = int(np.argmax(masked))
        picks.append(j)
        taken[j] = True
        np.minimum(min_dist, cdist(candidates, candidates[j:j + 1])[:, 0], out=min_dist)
    return picks

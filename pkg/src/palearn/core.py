"""Domain types for pool-based active learning and the pool mutations every
strategy shares.

Sample ids are plain ``int`` indices into a fixed :class:`Dataset` ordering.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

SampleId = int

OPTIMIZERS = ("sgd", "adam")


class PoolError(ValueError):
    """Raised when a pool operation would break the pool invariants."""


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images of shape (n, H, W, C) with values in [0, 1] and their true labels."""

    images: np.ndarray
    true_labels: np.ndarray
    class_count: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.true_labels, dtype=np.int64)
        if images.ndim == 3:
            images = images[..., None]
        if images.ndim != 4:
            raise ValueError(f"images must be (n, H, W, C), got shape {images.shape}")
        if images.shape[1] != images.shape[2]:
            raise ValueError(f"images must be square, got {images.shape[1]}x{images.shape[2]}")
        if labels.shape != (images.shape[0],):
            raise ValueError("need exactly one label per image")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError("true labels must lie in [0, class_count)")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "true_labels", labels)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, ids: Sequence[int]) -> "Dataset":
        """New dataset holding ``ids`` in the given order, re-indexed from 0."""
        ids = np.asarray(ids, dtype=np.int64)
        return Dataset(self.images[ids], self.true_labels[ids], self.class_count)


@dataclass(frozen=True)
class PoolState:
    """Immutable labeled/unlabeled partition of a dataset.

    ``labeled`` maps sample id to the label the oracle returned, which may be
    wrong under label noise.
    """

    labeled: Mapping[int, int]
    unlabeled: frozenset

    def __post_init__(self):
        labeled = {int(k): int(v) for k, v in dict(self.labeled).items()}
        unlabeled = frozenset(int(i) for i in self.unlabeled)
        overlap = unlabeled.intersection(labeled)
        if overlap:
            raise PoolError(f"ids both labeled and unlabeled: {sorted(overlap)[:5]}")
        object.__setattr__(self, "labeled", MappingProxyType(labeled))
        object.__setattr__(self, "unlabeled", unlabeled)

    @property
    def size(self) -> int:
        return len(self.labeled) + len(self.unlabeled)

    @property
    def labeled_fraction(self) -> float:
        return len(self.labeled) / self.size if self.size else 0.0

    def labeled_ids(self) -> np.ndarray:
        return np.array(sorted(self.labeled), dtype=np.int64)

    def labeled_targets(self) -> np.ndarray:
        """Oracle labels aligned with :meth:`labeled_ids`."""
        return np.array([self.labeled[i] for i in sorted(self.labeled)], dtype=np.int64)

    def unlabeled_ids(self) -> np.ndarray:
        return np.array(sorted(self.unlabeled), dtype=np.int64)

    def check_covers(self, n: int) -> None:
        ids = set(self.labeled) | self.unlabeled
        if ids != set(range(n)):
            raise PoolError(f"pool does not cover ids 0..{n - 1}")


@dataclass(frozen=True)
class QueryBudget:
    query_size: int
    subquery_count: int = 4

    def __post_init__(self):
        if self.query_size < 1 or self.subquery_count < 1:
            raise ValueError("query_size and subquery_count must be positive")
        if self.query_size % self.subquery_count:
            raise ValueError(
                f"subquery_count={self.subquery_count} must divide query_size={self.query_size}"
            )

    @property
    def subquery_size(self) -> int:
        return self.query_size // self.subquery_count


@dataclass(frozen=True)
class Hyperparameters:
    """Training and scoring knobs; defaults follow the CIFAR-10/SVHN settings
    (lr 0.01 for both networks, 100 epochs, batch 64, lambda 1, SGD)."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    task_lr: float = 0.01
    scoring_lr: float = 0.01
    epochs_main: int = 100
    epochs_finetune: int = 10
    batch_size: int = 64
    optimizer: str = "sgd"
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        for name in ("task_lr", "scoring_lr"):
            lr = getattr(self, name)
            if not 0 < lr <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {lr}")
        if self.epochs_main < 0 or self.epochs_finetune < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass(frozen=True)
class ScoreRecord:
    sample: int
    s_ssl: float
    s_cls: float
    s_div: Optional[float]
    s_combined: float
    s_entropy_variant: Optional[float] = None


@dataclass
class RoundRecord:
    round_index: int
    labeled_fraction: float
    task_accuracy: float
    query_sample_ids: list = field(default_factory=list)
    query_class_counts: dict = field(default_factory=dict)
    wall_time: float = 0.0


@dataclass
class RunLog:
    """Per-round history of one (strategy, seed) run.

    Round 0 is the evaluation on the initial pool and carries no query; round
    ``r >= 1`` records the query committed in that round and the accuracy of
    the task network retrained afterwards.
    """

    strategy: str = ""
    seed: int = 0
    rounds: list = field(default_factory=list)
    error: Optional[str] = None
    meta: dict = field(default_factory=dict)

    def append(self, record: RoundRecord) -> None:
        if self.rounds and record.labeled_fraction <= self.rounds[-1].labeled_fraction:
            raise ValueError("labeled_fraction must strictly increase across rounds")
        self.rounds.append(record)

    def final_accuracy(self) -> float:
        return self.rounds[-1].task_accuracy

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.rounds:
                row = {"strategy": self.strategy, "seed": self.seed, **asdict(r)}
                row["query_class_counts"] = {str(k): v for k, v in r.query_class_counts.items()}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            if self.error is not None:
                fh.write(json.dumps({"strategy": self.strategy, "seed": self.seed,
                                     "error": self.error}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "RunLog":
        log = cls()
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                log.strategy, log.seed = row["strategy"], row["seed"]
                if "error" in row:
                    log.error = row["error"]
                    continue
                row.pop("strategy"), row.pop("seed")
                row["query_class_counts"] = {int(k): v for k, v in row["query_class_counts"].items()}
                log.rounds.append(RoundRecord(**row))
        return log


def _draw_initial(candidates: np.ndarray, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(candidates, size=count, replace=False))


def init_pools(dataset: Dataset, initial_fraction: float, seed: int, oracle=None) -> PoolState:
    """Label a uniformly random ``round(initial_fraction * n)`` subset.

    Labels come from ``oracle`` when given, else the true labels.
    """
    n = len(dataset)
    if n == 0:
        raise PoolError("dataset is empty")
    if not 0 < initial_fraction <= 1:
        raise PoolError(f"initial_fraction must be in (0, 1], got {initial_fraction}")
    count = round_half_up(initial_fraction * n)
    if count == 0:
        raise PoolError(f"initial_fraction {initial_fraction} labels no samples of {n}")
    chosen = _draw_initial(np.arange(n), count, seed)
    return _pool_from_selection(dataset, chosen, oracle)


def _pool_from_selection(dataset: Dataset, chosen: np.ndarray, oracle) -> PoolState:
    if oracle is None:
        labels = dataset.true_labels[chosen]
    else:
        labels = oracle.labels(chosen)
    labeled = dict(zip(chosen.tolist(), np.asarray(labels).tolist()))
    unlabeled = frozenset(range(len(dataset))) - frozenset(labeled)
    return PoolState(labeled, unlabeled)


def commit_query(pool: PoolState, query: Iterable[int], oracle) -> PoolState:
    """Move ``query`` ids to the labeled pool with labels from ``oracle``."""
    ids = sorted({int(i) for i in query})
    bad = [i for i in ids if i not in pool.unlabeled]
    if bad:
        raise PoolError(f"query ids not in the unlabeled pool: {bad[:5]}")
    if not ids:
        return pool
    labels = np.asarray(oracle.labels(np.array(ids, dtype=np.int64))).tolist()
    labeled = dict(pool.labeled)
    labeled.update(zip(ids, labels))
    return PoolState(labeled, pool.unlabeled.difference(ids))


# -- on-disk dataset format ---------------------------------------------------

MANIFEST = "manifest.json"
DATA_FILE = "images.f32"


def save_dataset(dataset: Dataset, directory) -> None:
    """Write ``manifest.json`` plus a flat little-endian float32 tensor file."""
    os.makedirs(directory, exist_ok=True)
    per_sample = int(np.prod(dataset.image_shape)) * 4
    manifest = {
        "format": "palearn-dataset/1",
        "shape": list(dataset.image_shape),
        "class_count": int(dataset.class_count),
        "count": len(dataset),
        "dtype": "<f4",
        "samples": [
            {"id": i, "label": int(y), "file": DATA_FILE, "offset": i * per_sample}
            for i, y in enumerate(dataset.true_labels)
        ],
    }
    dataset.images.astype("<f4").tofile(os.path.join(directory, DATA_FILE))
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(directory) -> Dataset:
    with open(os.path.join(directory, MANIFEST)) as fh:
        manifest = json.load(fh)
    shape = tuple(manifest["shape"])
    per_sample = int(np.prod(shape))
    blobs = {}
    images = np.empty((manifest["count"],) + shape, dtype=np.float32)
    labels = np.empty(manifest["count"], dtype=np.int64)
    for rec in manifest["samples"]:
        fname = rec["file"]
        if fname not in blobs:
            blobs[fname] = np.fromfile(os.path.join(directory, fname), dtype="<f4")
        start = rec["offset"] // 4
        images[rec["id"]] = blobs[fname][start:start + per_sample].reshape(shape)
        labels[rec["id"]] = rec["label"]
    return Dataset(images, labels, manifest["class_count"])

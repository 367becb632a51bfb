"""Simulated oracles, pool construction, synthetic data and the multi-round
active-learning experiment loop.

True labels stay inside :class:`Oracle` and the evaluation code; strategies
only ever see oracle-labeled pools.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import (Dataset, Hyperparameters, PoolError, PoolState, RoundRecord, RunLog,
                   _draw_initial, _pool_from_selection, commit_query, load_dataset,
                   round_half_up)
from .nn import (Architecture, ScoringNetwork, TaskNetwork, TrainConfig, save_checkpoint,
                 train_scoring, train_task)
from .scoring import write_score_csv
from .selection import (StrategyConfig, coreset_select, entropy_select, pal_select,
                        random_select)

log = logging.getLogger(__name__)


# -- oracle --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Oracle:
    """Label provider with a corruption set fixed up front."""

    true_labels: np.ndarray
    noise_rate: float
    corrupted_ids: frozenset
    seed: int
    returned_labels: np.ndarray = field(repr=False, default=None)

    def label(self, sample_id: int) -> int:
        return int(self.returned_labels[sample_id])

    def labels(self, ids) -> np.ndarray:
        return self.returned_labels[np.asarray(ids, dtype=np.int64)].copy()


def make_oracle(dataset: Dataset, noise_rate: float, seed: int) -> Oracle:
    """Corrupt ``round(noise_rate * n)`` uniformly chosen labels.

    Each corrupted sample gets a label drawn uniformly from the other
    ``class_count - 1`` classes.
    """
    if not 0 <= noise_rate < 1:
        raise ValueError(f"noise_rate must be in [0, 1), got {noise_rate}")
    n = len(dataset)
    count = round_half_up(noise_rate * n)
    true = dataset.true_labels
    returned = true.copy()
    rng = np.random.default_rng([seed, 0x0AC1E])
    corrupted = np.sort(rng.choice(n, size=count, replace=False)) if count else np.empty(0, int)
    if count:
        if dataset.class_count < 2:
            raise ValueError("label noise needs at least two classes")
        shift = rng.integers(1, dataset.class_count, size=count)
        returned[corrupted] = (true[corrupted] + shift) % dataset.class_count
    returned.setflags(write=False)
    return Oracle(true, noise_rate, frozenset(corrupted.tolist()), seed, returned)


# -- pools -----------------------------------------------------------------------

def make_biased_pool(dataset: Dataset, initial_fraction: float, excluded_classes,
                     seed: int, oracle: Optional[Oracle] = None) -> PoolState:
    """Initial pool drawn only from classes outside ``excluded_classes``.

    With nothing excluded this draws exactly what :func:`init_pools` draws.
    """
    excluded = {int(c) for c in excluded_classes}
    if excluded and not excluded < set(range(dataset.class_count)):
        raise PoolError("excluded_classes must be a strict subset of the classes")
    if not 0 < initial_fraction <= 1:
        raise PoolError(f"initial_fraction must be in (0, 1], got {initial_fraction}")
    count = round_half_up(initial_fraction * len(dataset))
    candidates = np.flatnonzero(~np.isin(dataset.true_labels, list(excluded)))
    if count == 0 or count > len(candidates):
        raise PoolError(f"cannot label {count} samples from {len(candidates)} eligible ones")
    chosen = _draw_initial(candidates, count, seed)
    return _pool_from_selection(dataset, chosen, oracle)


def stratified_split(dataset: Dataset, test_fraction: float, seed: int):
    """Split into (train, test) datasets, holding out ``test_fraction`` of each class."""
    rng = np.random.default_rng([seed, 0x5E1])
    test = []
    for c in range(dataset.class_count):
        members = np.flatnonzero(dataset.true_labels == c)
        test.extend(rng.permutation(members)[:round_half_up(test_fraction * len(members))])
    test_mask = np.zeros(len(dataset), dtype=bool)
    test_mask[test] = True
    return dataset.subset(np.flatnonzero(~test_mask)), dataset.subset(np.flatnonzero(test_mask))


# -- synthetic data --------------------------------------------------------------

FAMILIES = ("stripes", "blob", "rings", "chevron")


def generate_synthetic_dataset(class_count: int, samples_per_class: int, image_size: int,
                               seed: int, noise: float = 0.55,
                               rare_fraction: float = 0.15) -> Dataset:
    """Balanced single-channel pattern classes on a square grid.

    Class ``c`` uses pattern family ``c % 4`` with parameters varied by
    ``c // 4``. Stripes carry a top-bright ramp, blobs sit off-centre and
    chevrons point up, so their rotation is recoverable. Rings are centred
    on the grid and are 4-fold rotation symmetric before noise is added.
    A ``rare_fraction`` share of every class is drawn contrast-inverted, a
    sub-mode that uniform sampling rarely covers from a small labeled pool.
    """
    if image_size < 8:
        raise ValueError("image_size must be at least 8")
    if class_count < 1 or samples_per_class < 1:
        raise ValueError("class_count and samples_per_class must be positive")
    rng = np.random.default_rng(seed)
    coords = (np.arange(image_size) - (image_size - 1) / 2) / ((image_size - 1) / 2)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    images, labels = [], []
    for c in range(class_count):
        fam, variant = FAMILIES[c % 4], c // 4
        m = samples_per_class
        u = lambda lo, hi: rng.uniform(lo, hi, size=(m, 1, 1))
        if fam == "stripes":
            theta = np.deg2rad(30 + 35 * variant) + u(-0.25, 0.25)
            freq = 1.5 + 0.5 * variant + u(-0.2, 0.2)
            phase = u(-1.0, 1.0)
            wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
            pat = wave * (0.35 + 0.65 * (1 - yy) / 2)
        elif fam == "blob":
            cx = -0.4 + 0.8 * ((variant % 2)) + u(-0.2, 0.2)
            cy = -0.45 + u(-0.2, 0.2)
            width = 0.3 + 0.1 * (variant // 2) + u(-0.05, 0.05)
            pat = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width ** 2))
        elif fam == "rings":
            r = np.sqrt(xx ** 2 + yy ** 2)
            freq = 1.5 + 0.6 * variant + u(-0.15, 0.15)
            pat = 0.5 + 0.5 * np.cos(2 * np.pi * freq * r + u(-0.6, 0.6))
        else:
            apex = -0.55 + u(-0.15, 0.15)
            slope = 1.3 + 0.5 * variant + u(-0.25, 0.25)
            thick = 0.45 + u(-0.1, 0.1)
            d = yy - (apex + slope * np.abs(xx - u(-0.15, 0.15)))
            pat = ((d >= 0) & (d <= thick)).astype(float)
        contrast = u(0.55, 1.0)
        contrast[rng.permutation(m)[:round_half_up(rare_fraction * m)]] *= -1
        img = 0.5 + contrast * (pat - 0.5) + noise * rng.standard_normal((m, image_size, image_size))
        images.append(np.clip(img, 0.0, 1.0))
        labels.append(np.full(m, c))
    images = np.concatenate(images)[..., None].astype(np.float32)
    return Dataset(images, np.concatenate(labels), class_count)


# -- experiment plan ---------------------------------------------------------------

HP_FIELDS = ("lambda1", "lambda2", "task_lr", "scoring_lr", "epochs_main",
             "epochs_finetune", "batch_size", "optimizer", "seed")

PLAN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["dataset", "strategies", "seeds"],
    "additionalProperties": False,
    "properties": {
        "dataset": {
            "type": "object",
            "oneOf": [
                {"required": ["synthetic"]},
                {"required": ["path"]},
            ],
            "properties": {
                "path": {"type": "string"},
                "synthetic": {
                    "type": "object",
                    "required": ["class_count", "samples_per_class", "image_size"],
                    "additionalProperties": False,
                    "properties": {
                        "class_count": {"type": "integer", "minimum": 2},
                        "samples_per_class": {"type": "integer", "minimum": 1},
                        "image_size": {"type": "integer", "minimum": 8},
                        "seed": {"type": "integer"},
                        "noise": {"type": "number", "minimum": 0},
                    },
                },
            },
            "additionalProperties": False,
        },
        "initial_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "query_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "round_count": {"type": "integer", "minimum": 1},
        "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
        "noise_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "excluded_classes": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "save_checkpoints": {"type": "boolean"},
        "architecture": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "conv_channels": {"type": "array", "minItems": 1,
                                  "items": {"type": "integer", "minimum": 1}},
                "hidden": {"type": "integer", "minimum": 1},
            },
        },
        "strategies": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["kind"],
                "additionalProperties": False,
                "properties": {
                    "kind": {"enum": ["pal", "random", "entropy", "coreset"]},
                    "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                    "subquery_count": {"type": "integer", "minimum": 1},
                    "hyperparameters": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "lambda1": {"type": "number", "minimum": 0},
                            "lambda2": {"type": "number", "minimum": 0},
                            "task_lr": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                            "scoring_lr": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                            "epochs_main": {"type": "integer", "minimum": 0},
                            "epochs_finetune": {"type": "integer", "minimum": 0},
                            "batch_size": {"type": "integer", "minimum": 1},
                            "optimizer": {"enum": ["sgd", "adam"]},
                            "seed": {"type": "integer"},
                        },
                    },
                },
            },
        },
    },
}


class PlanError(ValueError):
    """Invalid experiment plan; ``errors`` lists ``(field_path, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p or '<root>'}: {m}" for p, m in self.errors))


@dataclass(frozen=True)
class ExperimentPlan:
    dataset: dict
    strategies: tuple
    seeds: tuple
    initial_fraction: float = 0.10
    query_fraction: float = 0.05
    round_count: int = 4
    test_fraction: float = 0.2
    noise_rate: float = 0.0
    excluded_classes: tuple = ()
    conv_channels: tuple = (16, 32)
    hidden: int = 64
    save_checkpoints: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        import jsonschema

        validator = jsonschema.Draft202012Validator(PLAN_SCHEMA)
        errors = sorted(validator.iter_errors(d), key=lambda e: list(e.absolute_path))
        if errors:
            raise PlanError(("/".join(str(p) for p in e.absolute_path), e.message) for e in errors)
        strategies = []
        for s in d["strategies"]:
            hp = Hyperparameters(**s.get("hyperparameters", {}))
            strategies.append(StrategyConfig(s["kind"], hp, s.get("subquery_count", 4), s.get("name")))
        arch = d.get("architecture", {})
        plan = cls(
            dataset=d["dataset"], strategies=tuple(strategies), seeds=tuple(d["seeds"]),
            initial_fraction=d.get("initial_fraction", 0.10),
            query_fraction=d.get("query_fraction", 0.05),
            round_count=d.get("round_count", 4),
            test_fraction=d.get("test_fraction", 0.2),
            noise_rate=d.get("noise_rate", 0.0),
            excluded_classes=tuple(d.get("excluded_classes", ())),
            conv_channels=tuple(arch.get("conv_channels", (16, 32))),
            hidden=arch.get("hidden", 64),
            save_checkpoints=d.get("save_checkpoints", False),
        )
        plan.validate()
        return plan

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "strategies": [
                {"kind": s.kind, "name": s.name, "subquery_count": s.subquery_count,
                 "hyperparameters": {f: getattr(s.hyperparameters, f) for f in HP_FIELDS}}
                for s in self.strategies
            ],
            "seeds": list(self.seeds),
            "initial_fraction": self.initial_fraction,
            "query_fraction": self.query_fraction,
            "round_count": self.round_count,
            "test_fraction": self.test_fraction,
            "noise_rate": self.noise_rate,
            "excluded_classes": list(self.excluded_classes),
            "architecture": {"conv_channels": list(self.conv_channels), "hidden": self.hidden},
            "save_checkpoints": self.save_checkpoints,
        }

    def class_sizes(self) -> list:
        if "synthetic" in self.dataset:
            syn = self.dataset["synthetic"]
            return [syn["samples_per_class"]] * syn["class_count"]
        with open(os.path.join(self.dataset["path"], "manifest.json")) as fh:
            manifest = json.load(fh)
        counts = np.bincount([s["label"] for s in manifest["samples"]],
                             minlength=manifest["class_count"])
        return counts.tolist()

    def train_size(self) -> int:
        return sum(n - round_half_up(self.test_fraction * n) for n in self.class_sizes())

    def query_size(self) -> int:
        return round_half_up(self.query_fraction * self.train_size())

    def validate(self) -> None:
        errors = []
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            errors.append(("strategies", f"strategy names must be unique, got {names}"))
        if len(set(self.seeds)) != len(self.seeds):
            errors.append(("seeds", "seeds must be unique"))
        try:
            classes = len(self.class_sizes())
            n_train = self.train_size()
        except OSError as exc:
            raise PlanError([("dataset/path", str(exc))]) from None
        n = self.query_size()
        if n == 0:
            errors.append(("query_fraction", "query size rounds to 0"))
        if round_half_up(self.initial_fraction * n_train) == 0:
            errors.append(("initial_fraction", "initial pool rounds to 0"))
        for i, s in enumerate(self.strategies):
            if s.kind == "pal" and n and n % s.subquery_count:
                errors.append((f"strategies/{i}/subquery_count",
                               f"{s.subquery_count} does not divide query size {n}"))
        if any(c >= classes for c in self.excluded_classes):
            errors.append(("excluded_classes", f"classes must be < {classes}"))
        elif len(set(self.excluded_classes)) >= classes:
            errors.append(("excluded_classes", "cannot exclude every class"))
        needed = round_half_up(self.initial_fraction * n_train) + self.round_count * n
        if needed > n_train:
            errors.append(("round_count", f"needs {needed} samples but the pool holds {n_train}"))
        if errors:
            raise PlanError(errors)

    def load_dataset(self) -> Dataset:
        if "synthetic" in self.dataset:
            syn = self.dataset["synthetic"]
            return generate_synthetic_dataset(syn["class_count"], syn["samples_per_class"],
                                              syn["image_size"], syn.get("seed", 0),
                                              syn.get("noise", 0.55))
        return load_dataset(self.dataset["path"])


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# -- experiment loop -------------------------------------------------------------

@dataclass
class SeedSetup:
    """Everything shared by all strategies for one seed."""

    train: Dataset
    test: Dataset
    oracle: Oracle
    pool: PoolState
    query_size: int
    arch: Architecture


def prepare_seed(plan: ExperimentPlan, seed: int, dataset: Optional[Dataset] = None) -> SeedSetup:
    dataset = plan.load_dataset() if dataset is None else dataset
    train, test = stratified_split(dataset, plan.test_fraction, seed)
    oracle = make_oracle(train, plan.noise_rate, seed)
    pool = make_biased_pool(train, plan.initial_fraction, plan.excluded_classes, seed, oracle)
    arch = Architecture(train.image_shape, train.class_count, plan.conv_channels, plan.hidden)
    return SeedSetup(train, test, oracle, pool, plan.query_size(), arch)


def _class_counts(labels: np.ndarray, class_count: int) -> dict:
    counts = np.bincount(labels, minlength=class_count)
    return {c: int(n) for c, n in enumerate(counts)}


def run_strategy(strategy: StrategyConfig, setup: SeedSetup, seed: int, round_count: int,
                 out_dir=None, save_checkpoints: bool = False) -> RunLog:
    """One (strategy, seed) run of ``round_count`` query rounds."""
    hp = strategy.hyperparameters
    budget = strategy.budget(setup.query_size)
    train = setup.train
    runlog = RunLog(strategy.name, seed, meta={
        "kind": strategy.kind, "init": TaskNetwork(setup.arch).descriptor()["init"],
        "query_size": setup.query_size, "subquery_count": budget.subquery_count})

    def fit_task(pool, r):
        cfg = TrainConfig.task(hp, derive_seed(seed, r, 1))
        return train_task(TaskNetwork(setup.arch), pool, train, cfg)

    pool = setup.pool
    t0 = time.perf_counter()
    task = fit_task(pool, 0)
    runlog.append(RoundRecord(0, pool.labeled_fraction, task.accuracy(setup.test),
                              wall_time=time.perf_counter() - t0))
    for r in range(1, round_count + 1):
        t0 = time.perf_counter()
        round_seed = derive_seed(seed, r, 2, hp.seed)
        if strategy.kind == "pal":
            scorer = train_scoring(ScoringNetwork(setup.arch), pool, train,
                                   TrainConfig.scoring(hp, derive_seed(seed, r, 3)))
            query = pal_select(pool, train, scorer, budget, replace(hp, seed=round_seed))
            if save_checkpoints and out_dir is not None:
                save_checkpoint(scorer, os.path.join(
                    out_dir, "checkpoints", f"{strategy.name}_seed{seed}_round{r}.ckpt"))
        elif strategy.kind == "random":
            query = random_select(pool, budget, round_seed)
        elif strategy.kind == "entropy":
            query = entropy_select(pool, train, task, budget)
        else:
            query = coreset_select(pool, train, task.embed, budget)
        pool = commit_query(pool, query.sample_ids, setup.oracle)
        task = fit_task(pool, r)
        counts = _class_counts(train.true_labels[query.sample_ids], train.class_count)
        runlog.append(RoundRecord(r, pool.labeled_fraction, task.accuracy(setup.test),
                                  query.sample_ids, counts, time.perf_counter() - t0))
        if out_dir is not None:
            stem = f"{strategy.name}_seed{seed}_round{r}"
            query.write_manifest(os.path.join(out_dir, "queries", stem + ".json"),
                                 r, strategy.name, seed)
            if query.records:
                write_score_csv(os.path.join(out_dir, "scores", stem + ".csv"),
                                ((rec, r, k) for rec, k in query.records))
    return runlog


def _run_job(plan: ExperimentPlan, seed: int, index: int, out_dir, dataset=None) -> RunLog:
    strategy = plan.strategies[index]
    try:
        setup = prepare_seed(plan, seed, dataset)
        runlog = run_strategy(strategy, setup, seed, plan.round_count, out_dir,
                              plan.save_checkpoints)
    except Exception as exc:
        log.error("run %s seed %d failed: %s", strategy.name, seed, exc)
        runlog = RunLog(strategy.name, seed, error="".join(
            traceback.format_exception_only(type(exc), exc)).strip())
    if out_dir is not None:
        runlog.to_jsonl(os.path.join(out_dir, "runlogs", f"{strategy.name}_seed{seed}.jsonl"))
    return runlog


def run_active_learning(plan: ExperimentPlan, out_dir=None, jobs: int = 1) -> dict:
    """Run every (strategy, seed) pair of ``plan``.

    Returns ``{(strategy_name, seed): RunLog}``. A failing pair is recorded in
    its log's ``error`` field and does not stop the others. With ``out_dir``
    set, run logs, query manifests, score dumps and ``summary.csv`` are
    written beneath it.
    """
    if out_dir is not None:
        for sub in ("runlogs", "queries", "scores") + (("checkpoints",) if plan.save_checkpoints else ()):
            os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    keys = [(s.name, seed, i) for seed in plan.seeds for i, s in enumerate(plan.strategies)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = {(name, seed): ex.submit(_run_job, plan, seed, i, out_dir)
                       for name, seed, i in keys}
            results = {k: f.result() for k, f in futures.items()}
    else:
        dataset = plan.load_dataset()
        results = {(name, seed): _run_job(plan, seed, i, out_dir, dataset)
                   for name, seed, i in keys}
    if out_dir is not None:
        write_summary(results, os.path.join(out_dir, "summary.csv"))
    return results


SUMMARY_COLUMNS = ("round", "strategy", "seed", "labeled_fraction", "accuracy")


def write_summary(results: dict, path) -> None:
    """One row per (query round, strategy, seed); the initial evaluation stays in the run logs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for (name, seed) in sorted(results):
            for r in results[(name, seed)].rounds:
                if r.round_index >= 1:
                    w.writerow([r.round_index, name, seed, f"{r.labeled_fraction:.6f}",
                                f"{r.task_accuracy:.6f}"])


def summarize(results: dict) -> dict:
    """Mean and standard deviation of accuracy per (strategy, round) across seeds."""
    by_key = {}
    for (name, _), runlog in results.items():
        for r in runlog.rounds:
            by_key.setdefault((name, r.round_index), []).append(r.task_accuracy)
    return {k: (float(np.mean(v)), float(np.std(v))) for k, v in sorted(by_key.items())}


def missing_class_sampling_rate(runlog: RunLog, excluded_classes) -> list:
    """Per query round, the share of queried samples whose true class was excluded."""
    excluded = {int(c) for c in excluded_classes}
    rates = []
    for r in runlog.rounds:
        total = sum(r.query_class_counts.values())
        if r.round_index == 0 or total == 0:
            continue
        rates.append(sum(n for c, n in r.query_class_counts.items() if int(c) in excluded) / total)
    return rates

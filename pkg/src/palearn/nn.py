"""Task classifier and two-headed scoring network.

Networks are treated as values: every training call builds or copies a
module and returns a new wrapper, leaving its input untouched.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .core import Dataset, Hyperparameters, PoolState
from .scoring import rotate_batch

INIT_SCHEME = "torch-default (kaiming-uniform fan-in, a=sqrt(5))"


@dataclass(frozen=True)
class Architecture:
    in_shape: tuple          # (H, W, C)
    class_count: int
    conv_channels: tuple = (16, 32)
    hidden: int = 64

    def to_dict(self) -> dict:
        return {"in_shape": list(self.in_shape), "class_count": self.class_count,
                "conv_channels": list(self.conv_channels), "hidden": self.hidden}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(tuple(d["in_shape"]), d["class_count"], tuple(d["conv_channels"]), d["hidden"])

    @classmethod
    def for_dataset(cls, dataset: Dataset, **kw) -> "Architecture":
        return cls(dataset.image_shape, dataset.class_count, **kw)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 64
    optimizer: str = "sgd"
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")

    @classmethod
    def task(cls, hp: Hyperparameters, seed: int) -> "TrainConfig":
        return cls(hp.task_lr, hp.epochs_main, hp.batch_size, hp.optimizer, seed)

    @classmethod
    def scoring(cls, hp: Hyperparameters, seed: int) -> "TrainConfig":
        return cls(hp.scoring_lr, hp.epochs_main, hp.batch_size, hp.optimizer, seed)

    @classmethod
    def finetune(cls, hp: Hyperparameters, seed: int) -> "TrainConfig":
        return cls(hp.scoring_lr, hp.epochs_finetune, hp.batch_size, hp.optimizer, seed)


class Backbone(nn.Module):
    """conv3x3-ReLU-maxpool blocks followed by one hidden dense layer."""

    def __init__(self, arch: Architecture):
        super().__init__()
        h, w, c = arch.in_shape
        layers = []
        for out in arch.conv_channels:
            layers += [nn.Conv2d(c, out, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
            c, h, w = out, h // 2, w // 2
        if h < 1:
            raise ValueError(f"image side {arch.in_shape[0]} too small for "
                             f"{len(arch.conv_channels)} pooling blocks")
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(c * h * w, arch.hidden)

    def forward(self, x):
        return F.relu(self.fc(torch.flatten(self.features(x), 1)))


class _TaskModule(nn.Module):
    def __init__(self, arch: Architecture):
        super().__init__()
        self.backbone = Backbone(arch)
        self.head = nn.Linear(arch.hidden, arch.class_count)

    def forward(self, x):
        return self.head(self.backbone(x))


class _ScoringModule(nn.Module):
    def __init__(self, arch: Architecture):
        super().__init__()
        self.backbone = Backbone(arch)
        self.ssl_head = nn.Linear(arch.hidden, 4)
        self.cls_head = nn.Linear(arch.hidden, arch.class_count)


def _build(module_cls, arch: Architecture, seed: int) -> nn.Module:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return module_cls(arch)


def _to_tensor(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.array(np.transpose(images, (0, 3, 1, 2)), dtype=np.float32,
                                     order="C"))


def _make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=cfg.momentum)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


class _Net:
    """Shared plumbing for the two network wrappers."""

    _module_cls = None

    def __init__(self, arch: Architecture, seed: int = 0, module: Optional[nn.Module] = None,
                 epochs_trained: int = 0, loss_history: Sequence = ()):
        self.arch = arch
        self.seed = seed
        self.module = module if module is not None else _build(self._module_cls, arch, seed)
        self.module.eval()
        self.epochs_trained = epochs_trained
        self.loss_history = list(loss_history)

    @property
    def class_count(self) -> int:
        return self.arch.class_count

    def _fresh(self, seed: int):
        return type(self)(self.arch, seed)

    def _inputs(self, x) -> tuple:
        x = np.asarray(x, dtype=np.float32)
        single = x.ndim == len(self.arch.in_shape)
        if single:
            x = x[None]
        if tuple(x.shape[1:]) != tuple(self.arch.in_shape):
            raise ValueError(f"input shape {x.shape[1:]} does not match {self.arch.in_shape}")
        return x, single

    def state_arrays(self) -> dict:
        return {k: v.detach().numpy().copy() for k, v in self.module.state_dict().items()}

    def descriptor(self) -> dict:
        return {"kind": type(self).__name__, "arch": self.arch.to_dict(), "seed": self.seed,
                "epochs": self.epochs_trained, "init": INIT_SCHEME}


class TaskNetwork(_Net):
    _module_cls = _TaskModule

    def predict_logits(self, x) -> np.ndarray:
        x, single = self._inputs(x)
        with torch.no_grad():
            out = self.module(_to_tensor(x)).double()
        out = out.numpy()
        return out[0] if single else out

    def predict_class_probs(self, x) -> np.ndarray:
        x, single = self._inputs(x)
        with torch.no_grad():
            p = torch.softmax(self.module(_to_tensor(x)).double(), dim=1).numpy()
        return p[0] if single else p

    def embed(self, x) -> np.ndarray:
        """Penultimate (hidden-layer) activations."""
        x, single = self._inputs(x)
        with torch.no_grad():
            e = self.module.backbone(_to_tensor(x)).double().numpy()
        return e[0] if single else e

    def accuracy(self, dataset: Dataset, labels=None) -> float:
        labels = dataset.true_labels if labels is None else np.asarray(labels)
        pred = predict_in_chunks(self.predict_class_probs, dataset.images).argmax(axis=1)
        return float(np.mean(pred == labels))


class ScoringNetwork(_Net):
    """Shared backbone with a 4-way rotation head and a class head."""

    _module_cls = _ScoringModule

    def predict_rotation_probs(self, x) -> np.ndarray:
        x, single = self._inputs(x)
        with torch.no_grad():
            z = self.module.backbone(_to_tensor(x))
            p = torch.softmax(self.module.ssl_head(z).double(), dim=1).numpy()
        return p[0] if single else p

    def predict_class_probs(self, x) -> np.ndarray:
        x, single = self._inputs(x)
        with torch.no_grad():
            z = self.module.backbone(_to_tensor(x))
            p = torch.softmax(self.module.cls_head(z).double(), dim=1).numpy()
        return p[0] if single else p

    def rotation_probs_all(self, images: np.ndarray) -> np.ndarray:
        """(n, 4, 4) array; ``[:, i]`` is the PMF for the image rotated by 90*i."""
        images, _ = self._inputs(images)
        return np.stack([predict_in_chunks(self.predict_rotation_probs, rotate_batch(images, i))
                         for i in range(4)], axis=1)


def predict_in_chunks(fn, images: np.ndarray, chunk: int = 1024) -> np.ndarray:
    return np.concatenate([fn(images[s:s + chunk]) for s in range(0, len(images), chunk)])


def _rotated_stack(x: np.ndarray):
    xs = np.concatenate([rotate_batch(x, i) for i in range(4)])
    ys = np.repeat(np.arange(4), len(x))
    return xs, ys


def _labeled_data(pool: PoolState, dataset: Dataset):
    if not pool.labeled:
        raise ValueError("labeled pool is empty")
    ids = pool.labeled_ids()
    return dataset.images[ids], pool.labeled_targets()


def train_task(net: TaskNetwork, pool: PoolState, dataset: Dataset, cfg: TrainConfig) -> TaskNetwork:
    """Fit a freshly initialised copy of ``net``'s architecture on the labeled pool."""
    x, y = _labeled_data(pool, dataset)
    out = net._fresh(cfg.seed)
    module = out.module
    opt = _make_optimizer(module.parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)
    xt, yt = _to_tensor(x), torch.from_numpy(y)
    module.train()
    for _ in range(cfg.epochs):
        total = 0.0
        for b in _batches(len(y), cfg.batch_size, rng):
            bi = torch.from_numpy(b)
            loss = F.cross_entropy(module(xt[bi]), yt[bi])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(b)
        out.loss_history.append(total / len(y))
    module.eval()
    out.epochs_trained = cfg.epochs
    return out


def train_scoring(net: ScoringNetwork, pool: PoolState, dataset: Dataset,
                  cfg: TrainConfig) -> ScoringNetwork:
    """Jointly fit both heads from a fresh initialisation.

    Each labeled image contributes one class-head term (oracle label) and four
    rotation-head terms, one per rotation index, to the batch loss.
    ``loss_history`` stores per-epoch ``(rotation_loss, class_loss)`` pairs.
    """
    x, y = _labeled_data(pool, dataset)
    out = net._fresh(cfg.seed)
    m = out.module
    opt = _make_optimizer(m.parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)
    rot_t = [_to_tensor(rotate_batch(x, i)) for i in range(4)]
    yt = torch.from_numpy(y)
    m.train()
    for _ in range(cfg.epochs):
        tot_rot = tot_cls = 0.0
        for b in _batches(len(y), cfg.batch_size, rng):
            bi = torch.from_numpy(b)
            xr = torch.cat([rot_t[i][bi] for i in range(4)])
            yr = torch.arange(4).repeat_interleave(len(b))
            z = m.backbone(xr)
            rot_loss = F.cross_entropy(m.ssl_head(z), yr)
            cls_loss = F.cross_entropy(m.cls_head(z[:len(b)]), yt[bi])
            opt.zero_grad()
            (rot_loss + cls_loss).backward()
            opt.step()
            tot_rot += rot_loss.item() * len(b)
            tot_cls += cls_loss.item() * len(b)
        out.loss_history.append((tot_rot / len(y), tot_cls / len(y)))
    m.eval()
    out.epochs_trained = cfg.epochs
    return out


def clone_ssl(net: ScoringNetwork) -> ScoringNetwork:
    """Deep, independent copy of the scoring network."""
    return ScoringNetwork(net.arch, net.seed, copy.deepcopy(net.module),
                          net.epochs_trained, net.loss_history)


def finetune_ssl(clone: ScoringNetwork, selected, dataset: Dataset,
                 cfg: TrainConfig) -> ScoringNetwork:
    """Rotation-only fine-tuning of backbone and rotation head on ``selected``.

    Consumes no labels. The class head is frozen. The argument is not modified;
    the tuned copy is returned.
    """
    ids = np.array(sorted(int(i) for i in selected), dtype=np.int64)
    if ids.size == 0:
        raise ValueError("finetune_ssl needs at least one selected sample")
    out = clone_ssl(clone)
    if cfg.epochs == 0:
        return out
    m = out.module
    params = list(m.backbone.parameters()) + list(m.ssl_head.parameters())
    opt = _make_optimizer(params, cfg)
    rng = np.random.default_rng(cfg.seed)
    rot_t = [_to_tensor(rotate_batch(dataset.images[ids], i)) for i in range(4)]
    m.train()
    for _ in range(cfg.epochs):
        total = 0.0
        for b in _batches(len(ids), cfg.batch_size, rng):
            bi = torch.from_numpy(b)
            xr = torch.cat([rot_t[i][bi] for i in range(4)])
            yr = torch.arange(4).repeat_interleave(len(b))
            loss = F.cross_entropy(m.ssl_head(m.backbone(xr)), yr)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(b)
        out.loss_history.append(total / len(ids))
    m.eval()
    out.epochs_trained += cfg.epochs
    return out


# -- checkpoints ---------------------------------------------------------------

_MAGIC = b"PALCKPT1"


def save_checkpoint(net: _Net, path) -> None:
    """Magic, uint64 header length, JSON header, then float32 LE parameter blocks."""
    state = net.module.state_dict()
    header = net.descriptor()
    header["params"] = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in state.values():
            fh.write(v.detach().numpy().astype("<f4").tobytes())


def load_checkpoint(path) -> _Net:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a palearn checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        raw = fh.read()
    cls = {"TaskNetwork": TaskNetwork, "ScoringNetwork": ScoringNetwork}[header["kind"]]
    net = cls(Architecture.from_dict(header["arch"]), header["seed"],
              epochs_trained=header["epochs"])
    state, offset = {}, 0
    for p in header["params"]:
        count = int(np.prod(p["shape"]))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(p["shape"])
        state[p["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += count * 4
    net.module.load_state_dict(state)
    return net

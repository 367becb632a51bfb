"""Confusion, diversity and combined scores.

Higher scores mean more novel, and the most novel samples are queried first.
All logs are natural logs; probabilities are clamped at ``EPS`` before a log
is taken, which caps the otherwise unbounded KL term at roughly
``|ln EPS| / C``.
"""

from __future__ import annotations

import csv
from typing import Iterable, Optional, Sequence

import numpy as np

EPS = 1e-12
PMF_TOL = 1e-6
ROTATIONS = (0, 1, 2, 3)


class Pmf:
    """A validated probability vector."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        p = np.asarray(probs, dtype=np.float64)
        _check_pmf(p)
        self.probs = p

    @classmethod
    def uniform(cls, size: int) -> "Pmf":
        if size < 1:
            raise ValueError("size must be positive")
        return cls(np.full(size, 1.0 / size))

    def __len__(self):
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __repr__(self):
        return f"Pmf({self.probs.tolist()})"


def _check_pmf(p: np.ndarray, axis: int = -1) -> None:
    if p.ndim == 0 or p.shape[axis] == 0:
        raise ValueError("PMF must be a non-empty vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("PMF entries must be finite and non-negative")
    if np.any(np.abs(p.sum(axis=axis) - 1.0) > PMF_TOL):
        raise ValueError("PMF entries must sum to 1")


def _as_probs(h) -> np.ndarray:
    return h.probs if isinstance(h, Pmf) else np.asarray(h, dtype=np.float64)


def rotate90(x: np.ndarray, i: int) -> np.ndarray:
    """Rotate an (H, W[, C]) image counter-clockwise by ``90 * i`` degrees."""
    x = np.asarray(x)
    if i not in ROTATIONS:
        raise ValueError(f"rotation index must be in {ROTATIONS}, got {i}")
    if x.ndim < 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"rotation needs a square image, got shape {x.shape}")
    return np.rot90(x, k=i, axes=(0, 1))


def rotate_batch(images: np.ndarray, i: int) -> np.ndarray:
    """Same rotation as :func:`rotate90`, applied to an (n, H, W, C) batch."""
    if i not in ROTATIONS:
        raise ValueError(f"rotation index must be in {ROTATIONS}, got {i}")
    if images.shape[1] != images.shape[2]:
        raise ValueError("rotation needs square images")
    return np.rot90(images, k=i, axes=(1, 2))


def ssl_confusion_score(rotation_probs) -> float:
    """Negative sum of the probabilities each rotation assigns to itself.

    ``rotation_probs[i]`` is the 4-way PMF predicted for the image rotated by
    ``90 * i`` degrees. Ranges from -4 (every rotation recognised) to 0.
    """
    p = np.stack([_as_probs(r) for r in rotation_probs]) if not isinstance(
        rotation_probs, np.ndarray) else np.asarray(rotation_probs, dtype=np.float64)
    if p.shape != (4, 4):
        raise ValueError(f"expected four 4-way PMFs, got shape {p.shape}")
    _check_pmf(p)
    return -float(p[0, 0] + p[1, 1] + p[2, 2] + p[3, 3])


def ssl_confusion_scores(rotation_probs: np.ndarray) -> np.ndarray:
    """Vectorised :func:`ssl_confusion_score` over an (n, 4, 4) array."""
    p = np.asarray(rotation_probs, dtype=np.float64)
    if p.ndim != 3 or p.shape[1:] != (4, 4):
        raise ValueError(f"expected shape (n, 4, 4), got {p.shape}")
    _check_pmf(p)
    return -(p[:, 0, 0] + p[:, 1, 1] + p[:, 2, 2] + p[:, 3, 3])


diversity_component = ssl_confusion_score
diversity_components = ssl_confusion_scores


def classification_confusion_score(h) -> float:
    """``-KL(U || h)`` with U uniform over the classes; 0 iff h is uniform."""
    p = _as_probs(h)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("classification PMF needs at least two classes")
    return float(classification_confusion_scores(p[None, :])[0])


def classification_confusion_scores(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise ValueError(f"expected shape (n, C) with C >= 2, got {p.shape}")
    _check_pmf(p)
    c = p.shape[1]
    kl = np.sum(np.log((1.0 / c) / np.maximum(p, EPS)), axis=1) / c
    # KL of an exactly uniform row can come out as -1e-17; it is 0 by definition.
    return -np.maximum(kl, 0.0)


def hybrid_score(s_ssl, s_cls, lambda1: float):
    if lambda1 < 0:
        raise ValueError("lambda1 must be non-negative")
    return s_ssl + lambda1 * s_cls


def combined_score(s_ssl, s_cls, s_div, lambda1: float, lambda2: float):
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("lambda1 and lambda2 must be non-negative")
    return s_ssl + lambda1 * s_cls + lambda2 * s_div


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) along the last axis with 0 ln 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def entropy_variant_score(s_ssl: float, h, lambda1: float) -> float:
    """Bounded alternative to the hybrid score: ``s_ssl + lambda1 * H(h)``."""
    p = _as_probs(h)
    _check_pmf(p)
    if lambda1 < 0:
        raise ValueError("lambda1 must be non-negative")
    return s_ssl + lambda1 * float(entropy(p))


# -- score dumps ---------------------------------------------------------------

SCORE_COLUMNS = ("sample_id", "s_ssl", "s_cls", "s_div", "s_combined", "round", "subquery")


def write_score_csv(path, rows: Iterable[tuple]) -> None:
    """Rows are ``(ScoreRecord, round, subquery)`` triples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for rec, rnd, sub in rows:
            w.writerow([
                rec.sample, repr(rec.s_ssl), repr(rec.s_cls),
                "" if rec.s_div is None else repr(rec.s_div),
                repr(rec.s_combined), rnd, sub,
            ])


class ScoreFileError(ValueError):
    pass


def read_score_csv(path) -> list:
    """Parse a score dump into dicts; malformed rows raise with their row number."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SCORE_COLUMNS:
            raise ScoreFileError(f"{path}: row 1: bad header {header}")
        for rowno, row in enumerate(reader, start=2):
            if len(row) != len(SCORE_COLUMNS):
                raise ScoreFileError(f"{path}: row {rowno}: expected {len(SCORE_COLUMNS)} fields")
            try:
                out.append({
                    "sample_id": int(row[0]),
                    "s_ssl": float(row[1]),
                    "s_cls": float(row[2]),
                    "s_div": float(row[3]) if row[3] else None,
                    "s_combined": float(row[4]),
                    "round": int(row[5]),
                    "subquery": int(row[6]),
                })
            except ValueError as exc:
                raise ScoreFileError(f"{path}: row {rowno}: {exc}") from None
    return out

"""Score-component correlations, the KL-versus-entropy overshadow probe and
the optimal SSL/classification trade-off.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .scoring import classification_confusion_score, entropy_variant_score, hybrid_score

GRID_STEP = 1e-4
MAX_PROBE_K = 12


class DegenerateError(ValueError):
    """Input has zero variance or too few points for a correlation."""


@dataclass(frozen=True)
class CorrelationReport:
    pearson: float
    spearman: float
    n: int


@dataclass(frozen=True)
class AlphaResult:
    alpha_star: float
    correlation_at_star: float
    grid_argmax: float
    grid_max: float


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D vectors of equal length")
    if x.size < 3:
        raise DegenerateError("need at least 3 points")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise DegenerateError("correlation undefined for a constant vector")
    r = np.dot(dx, dy) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(x, y)
    return pearson(rankdata(x), rankdata(y))


def component_correlations(scores: Sequence) -> CorrelationReport:
    """Correlation between the SSL and classification components of ScoreRecords."""
    if len(scores) < 3:
        raise DegenerateError("need at least 3 score records")
    s = np.array([r.s_ssl for r in scores])
    c = np.array([r.s_cls for r in scores])
    return CorrelationReport(pearson(s, c), spearman(s, c), len(scores))


def standardize(x) -> np.ndarray:
    """Zero mean, unit population variance."""
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if sd == 0:
        raise DegenerateError("cannot standardize a constant vector")
    return (x - x.mean()) / sd


@dataclass(frozen=True)
class StandardizedScoreTriple:
    """Standardized true score ``u``, SSL score ``v``, class score ``w``."""

    cov_uv: float
    cov_uw: float
    cov_vw: float
    u: np.ndarray = None
    v: np.ndarray = None
    w: np.ndarray = None

    @classmethod
    def from_vectors(cls, u, v, w) -> "StandardizedScoreTriple":
        u, v, w = standardize(u), standardize(v), standardize(w)
        if not (u.shape == v.shape == w.shape):
            raise ValueError("u, v, w must have equal length")
        cov = lambda a, b: float(np.mean(a * b))
        return cls(cov(u, v), cov(u, w), cov(v, w), u, v, w)


def hybrid_correlation(alpha, cov_uv: float, cov_uw: float):
    """``E[u s]`` for ``s = alpha v + sqrt(1 - alpha^2) w``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return alpha * cov_uv + np.sqrt(1.0 - alpha ** 2) * cov_uw


def optimal_alpha(triple: StandardizedScoreTriple, grid_step: float = GRID_STEP) -> AlphaResult:
    """Closed-form maximiser ``alpha* = cov_uv / sqrt(cov_uv^2 + cov_uw^2)``,
    reported next to a brute-force grid search over [0, 1]."""
    a, b = triple.cov_uv, triple.cov_uw
    if a <= 0 or b <= 0:
        raise ValueError("optimal trade-off requires positive covariances with the true score")
    alpha = a / math.hypot(a, b)
    grid = np.linspace(0.0, 1.0, int(round(1.0 / grid_step)) + 1)
    values = hybrid_correlation(grid, a, b)
    j = int(np.argmax(values))
    return AlphaResult(alpha, float(hybrid_correlation(alpha, a, b)), float(grid[j]),
                       float(values[j]))


def overshadow_probe(lambda1: float = 1.0, k_range=range(1, MAX_PROBE_K + 1),
                     s_ssl: float = -2.0) -> list:
    """Rows ``(k, hybrid, entropy_variant)`` for binary PMFs (1 - 10^-k, 10^-k).

    The hybrid column falls without bound as the prediction sharpens, the
    entropy variant stays within ``lambda1 * ln 2`` of ``s_ssl``.
    """
    rows = []
    for k in k_range:
        if not 1 <= k <= MAX_PROBE_K:
            raise ValueError(f"k must be in 1..{MAX_PROBE_K} (probability clamp)")
        h = np.array([1.0 - 10.0 ** -k, 10.0 ** -k])
        rows.append((k, hybrid_score(s_ssl, classification_confusion_score(h), lambda1),
                     entropy_variant_score(s_ssl, h, lambda1)))
    return rows


REFERENCE_COVARIANCES = ((0.3, 0.4), (0.42, 0.44), (0.49, 0.50), (0.63, 0.57), (0.5, 0.5))


def diagnostics_report(score_tables: dict, lambda1: float = 1.0) -> dict:
    """JSON-ready report.

    ``score_tables`` maps ``(strategy, seed, round)`` to parsed score rows;
    correlations use the first sub-query's rows, which cover all of D_U.
    """
    correlations = []
    for (strategy, seed, rnd), rows in sorted(score_tables.items()):
        first = [r for r in rows if r["subquery"] == 0]
        entry = {"strategy": strategy, "seed": seed, "round": rnd, "n": len(first)}
        try:
            entry["pearson"] = pearson([r["s_ssl"] for r in first], [r["s_cls"] for r in first])
            entry["spearman"] = spearman([r["s_ssl"] for r in first], [r["s_cls"] for r in first])
        except DegenerateError as exc:
            entry["error"] = str(exc)
        correlations.append(entry)
    report = {
        "overshadow": [{"k": k, "hybrid": h, "entropy_variant": e}
                       for k, h, e in overshadow_probe(lambda1)],
        "alpha": [{"cov_uv": a, "cov_uw": b,
                   **asdict(optimal_alpha(StandardizedScoreTriple(a, b, 0.0)))}
                  for a, b in REFERENCE_COVARIANCES],
    }
    if correlations:
        report["correlations"] = correlations
    return report

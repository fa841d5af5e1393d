"""Recovery metrics, leakage metrics, and the offload crossover model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, MetricUndefinedError
from .numerics import Assignment, as_matrix, hungarian

__all__ = [
    "MatchResult",
    "CosineStats",
    "ComplexityModel",
    "match_rows",
    "cosine_stats",
    "gram_error",
    "covariance_leak",
    "participation_ratio",
    "crossover_length",
]


@dataclass
class MatchResult:
    """Row pairing between truth and estimates, with per-pair cosines.

    pairs[k] = (truth_row, estimate_row); cosines[k] = |cos| of that pair;
    signs[k] flips the estimate onto the truth direction (+1 when the raw
    cosine is zero).
    """

    assignment: Assignment
    cosines: np.ndarray
    signs: np.ndarray

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return self.assignment.pairs


@dataclass
class CosineStats:
    median: float
    p95: float


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    out = m / safe
    out[norms[:, 0] == 0] = 0.0  # zero rows get cosine 0 against everything
    return out


def match_rows(truth, estimates) -> MatchResult:
    """Optimal one-to-one pairing of estimate rows onto truth rows.

    Cost of pairing truth i with estimate j is 1 - |cos(t_i, e_j)|, solved
    to a minimum-cost assignment over min(r, c) pairs.  Zero-norm rows are
    given cosine 0 against everything rather than NaN.
    """
    t = as_matrix(truth, "truth")
    e = as_matrix(estimates, "estimates")
    if t.shape[1] != e.shape[1]:
        raise DimensionError(
            f"feature dims differ: truth {t.shape}, estimates {e.shape}"
        )
    cos = _unit_rows(t) @ _unit_rows(e).T
    assignment = hungarian(1.0 - np.abs(cos))
    idx = np.array(assignment.pairs, dtype=np.int64).reshape(-1, 2)
    raw = cos[idx[:, 0], idx[:, 1]]
    signs = np.where(raw < 0, -1.0, 1.0)
    return MatchResult(assignment=assignment, cosines=np.abs(raw), signs=signs)


def cosine_stats(cosines) -> CosineStats:
    """Median and 95th percentile, linear interpolation (inclusive)."""
    v = np.asarray(cosines, dtype=np.float64)
    if v.size == 0:
        raise MetricUndefinedError("cosine_stats of an empty list")
    return CosineStats(
        median=float(np.percentile(v, 50, method="linear")),
        p95=float(np.percentile(v, 95, method="linear")),
    )


def gram_error(estimates, truth) -> float:
    """Relative Frobenius distance between row Gram matrices.

    ||E E^T - T T^T||_F / ||T T^T||_F over the matched row subsets.  Scale
    errors and geometry errors both show up here; a recovery that is random
    with truth-matched row norms lands near sqrt(2).
    """
    e = as_matrix(estimates, "estimates")
    t = as_matrix(truth, "truth")
    if e.shape != t.shape:
        raise DimensionError(f"shape mismatch: {e.shape} vs {t.shape}")
    gt = t @ t.T
    denom = np.linalg.norm(gt)
    if denom == 0.0:
        raise MetricUndefinedError("truth Gram has zero norm")
    return float(np.linalg.norm(e @ e.T - gt) / denom)


def covariance_leak(u, h) -> float:
    """Relative error between feature Grams: ||U^T U - H^T H||_F / ||H^T H||_F.

    Orthogonal mixing leaves this at rounding level; that is exactly the
    leak the shield rows and non-orthogonal mixing are meant to disturb.
    """
    um = as_matrix(u, "u")
    hm = as_matrix(h, "h")
    if um.shape[1] != hm.shape[1]:
        raise DimensionError(f"feature dims differ: {um.shape} vs {hm.shape}")
    gh = hm.T @ hm
    denom = np.linalg.norm(gh)
    if denom == 0.0:
        raise MetricUndefinedError("H^T H has zero norm")
    return float(np.linalg.norm(um.T @ um - gh) / denom)


def participation_ratio(h) -> float:
    """Effective dimensionality (sum lambda)^2 / sum lambda^2 of the feature
    covariance of mean-centered rows."""
    m = as_matrix(h, "h")
    if m.shape[0] < 2:
        raise DimensionError("participation_ratio needs at least 2 rows")
    centered = m - m.mean(axis=0, keepdims=True)
    s = np.linalg.svd(centered, compute_uv=False)
    lam = s * s
    total = lam.sum()
    if total == 0.0:
        raise MetricUndefinedError("zero covariance: all rows identical")
    return float(total * total / np.square(lam).sum())


@dataclass
class ComplexityModel:
    """Per-token multiply-add counts for one transformer layer.

    d: model width, d_ffn: feed-forward width, h: attention heads.  Weight
    GEMMs (the offloadable part) cost 4*d^2 for the four attention
    projections plus 3*d*d_ffn for the gated FFN.  The attention core (the
    part that stays on the trusted side) costs 2*d per token of context.
    """

    d: int
    d_ffn: int
    h: int

    def __post_init__(self):
        if self.d < 1 or self.d_ffn < 1 or self.h < 1:
            raise DimensionError("d, d_ffn, h must all be >= 1")
        if self.d % self.h != 0:
            raise DimensionError(f"h={self.h} must divide d={self.d}")

    @property
    def projection_madds(self) -> int:
        return 4 * self.d * self.d

    @property
    def ffn_madds(self) -> int:
        return 3 * self.d * self.d_ffn

    @property
    def attention_madds_per_ctx(self) -> int:
        return 2 * self.d


def _round_3_significant(x: int) -> int:
    """Round a positive integer to 3 significant figures, half away from zero."""
    if x < 1000:
        return x
    digits = len(str(x))
    mag = 10 ** (digits - 3)
    return (x + mag // 2) // mag * mag


def crossover_length(model: ComplexityModel) -> int:
    """Context length where attention-core cost matches the weight GEMMs.

    Weight-GEMM multiply-adds grow with d and d_ffn but not with context;
    the attention core grows linearly at 2*d per context token.  The
    numerator is rounded to 3 significant figures so printed lengths agree
    with the headline complexity numbers they are derived from.
    """
    total = _round_3_significant(model.projection_madds + model.ffn_madds)
    return total // model.attention_madds_per_ctx

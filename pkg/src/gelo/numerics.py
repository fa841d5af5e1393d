"""Dense linear-algebra primitives used by the mixing protocol and attacks.

Everything here operates on float64 numpy arrays.  The three design rules:

1. Samplers are pure functions of (shape, parameters, seed) so that every
   experiment is replayable from a single master seed.
2. Inverses are never formed explicitly; unmixing goes through a
   factorization-based solve or a transpose.
3. The assignment solver breaks ties deterministically (lowest row index,
   then lowest column index) so matched-row reports are stable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditioningError,
    DimensionError,
    ParameterError,
    SingularMatrixError,
)
from .seeds import rng_from

__all__ = [
    "DEFAULT_KAPPA_MAX",
    "MixingMatrix",
    "EigDecomposition",
    "Assignment",
    "sample_orthogonal",
    "sample_invertible",
    "condition_number",
    "solve",
    "eigh",
    "hungarian",
]

DEFAULT_KAPPA_MAX = 100.0

# Fraction shaved off kappa_max when synthesizing singular values, so the
# realized condition number stays strictly below the configured bound.
_KAPPA_MARGIN = 0.01


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and convert input to a finite, non-empty float64 2-D array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.size == 0:
        raise DimensionError(f"{name} must be non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ParameterError(f"{name} contains non-finite entries")
    return m


@dataclass
class MixingMatrix:
    """A sampled batch-mixing matrix with cached metadata.

    kind is "orthogonal" (inverse = transpose) or "general" (inverse via
    solve).  condition is known by construction, not re-estimated.
    """

    matrix: np.ndarray
    kind: str
    seed: int
    condition: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass
class EigDecomposition:
    """Eigenvalues (descending, clamped at zero) and matching eigenvectors."""

    eigenvalues: np.ndarray  # shape (n,), descending
    eigenvectors: np.ndarray  # shape (n, n), column i pairs with value i


@dataclass
class Assignment:
    """One-to-one row/column pairing of minimal total cost.

    pairs is sorted by row index and has min(r, c) entries.  Among equal-cost
    assignments the lexicographically smallest pair list wins.
    """

    pairs: list[tuple[int, int]] = field(default_factory=list)
    total_cost: float = 0.0

    def col_of(self, row: int) -> int | None:
        for i, j in self.pairs:
            if i == row:
                return j
        return None


def sample_orthogonal(n: int, seed: int) -> MixingMatrix:
    """Draw an n x n orthogonal matrix from the rotation-invariant ensemble.

    QR of a square Gaussian matrix, with Q's columns sign-fixed so the R
    diagonal is non-negative; without the sign fix the distribution is not
    uniform over the orthogonal group.
    """
    if n < 1:
        raise DimensionError(f"n must be >= 1, got {n}")
    rng = rng_from(seed)
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs  # scales columns
    return MixingMatrix(matrix=q, kind="orthogonal", seed=int(seed), condition=1.0)


def sample_invertible(
    n: int, kappa_max: float = DEFAULT_KAPPA_MAX, seed: int = 0
) -> MixingMatrix:
    """Draw an invertible matrix with condition number strictly below kappa_max.

    Built as Q1 @ diag(sigma) @ Q2 with independent orthogonal factors and
    singular values log-uniform in [1, kappa_max * (1 - margin)].  The
    realized condition number is known exactly from the sampled sigmas.
    """
    if n < 1:
        raise DimensionError(f"n must be >= 1, got {n}")
    if not np.isfinite(kappa_max) or kappa_max < 1.0:
        raise ParameterError(f"kappa_max must be finite and >= 1, got {kappa_max}")
    rng = rng_from(seed)
    g1 = rng.standard_normal((n, n))
    g2 = rng.standard_normal((n, n))
    hi = max(1.0, kappa_max * (1.0 - _KAPPA_MARGIN))
    sigma = np.exp(rng.uniform(0.0, np.log(hi), size=n))
    q1, r1 = np.linalg.qr(g1)
    s1 = np.sign(np.diag(r1))
    s1[s1 == 0] = 1.0
    q2, r2 = np.linalg.qr(g2)
    s2 = np.sign(np.diag(r2))
    s2[s2 == 0] = 1.0
    a = ((q1 * s1) * sigma) @ (q2 * s2)
    cond = float(sigma.max() / sigma.min())
    return MixingMatrix(matrix=a, kind="general", seed=int(seed), condition=cond)


def condition_number(m) -> float:
    """Two-norm condition number via singular values; +inf when singular."""
    a = as_matrix(m, "m")
    s = np.linalg.svd(a, compute_uv=False)
    smin = s[-1]
    if smin == 0.0:
        return float("inf")
    return float(s[0] / smin)


def solve(a, y) -> np.ndarray:
    """Solve a @ x = y by LU factorization (never via an explicit inverse)."""
    am = as_matrix(a, "a")
    ym = as_matrix(y, "y")
    if am.shape[0] != am.shape[1]:
        raise DimensionError(f"a must be square, got {am.shape}")
    if ym.shape[0] != am.shape[0]:
        raise DimensionError(
            f"row mismatch: a is {am.shape}, y is {ym.shape}"
        )
    try:
        return np.linalg.solve(am, ym)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc


def eigh(m) -> EigDecomposition:
    """Symmetric eigendecomposition, eigenvalues descending.

    Intended for covariance/Gram inputs: tiny negative eigenvalues produced
    by rounding are clamped to zero.  Asymmetry beyond 1e-9 relative to the
    input norm is rejected rather than silently symmetrized.
    """
    a = as_matrix(m, "m")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"m must be square, got {a.shape}")
    norm = np.linalg.norm(a)
    asym = np.linalg.norm(a - a.T)
    if asym > 1e-9 * max(1.0, norm):
        raise ParameterError(
            f"m is not symmetric: relative asymmetry {asym / max(norm, 1e-300):.3g}"
        )
    w, v = np.linalg.eigh(a)
    order = np.argsort(w)[::-1]
    w = w[order]
    v = v[:, order]
    w = np.maximum(w, 0.0)
    return EigDecomposition(eigenvalues=w, eigenvectors=v)


# ---------------------------------------------------------------------------
# Assignment problem
# ---------------------------------------------------------------------------


def _lap_square(cost: np.ndarray):
    """Minimum-cost perfect matching on a square matrix, with potentials.

    Augmenting-path algorithm with dual potentials (u, v).  Returns
    (col_of_row, u, v) where cost[i, j] - u[i] - v[j] >= 0 for all edges and
    equality holds on matched edges.  Ties in the column scan resolve to the
    lowest column index.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    # p[j] = 1-based row matched to column j; column 0 is the virtual source.
    p = np.zeros(n + 1, dtype=np.int64)
    inf = np.inf
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        way = np.zeros(n + 1, dtype=np.int64)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            mslice = minv[1:]
            improved = free & (cur < mslice)
            idx = np.nonzero(improved)[0]
            mslice[idx] = cur[idx]
            way[idx + 1] = j0
            free_idx = np.nonzero(free)[0]
            jrel = free_idx[np.argmin(mslice[free_idx])]
            delta = mslice[jrel]
            used_cols = np.nonzero(used)[0]
            u[p[used_cols]] += delta
            v[used_cols] -= delta
            mslice[free_idx] -= delta
            j0 = jrel + 1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _lap_total(cost: np.ndarray) -> float:
    """Optimal assignment cost of a rectangular matrix (matches min(r, c))."""
    r, c = cost.shape
    if r == 0 or c == 0:
        return 0.0
    m = max(r, c)
    sq = np.zeros((m, m))
    sq[:r, :c] = cost
    col_of_row, _, _ = _lap_square(sq)
    return float(sq[np.arange(m), col_of_row].sum())


def hungarian(cost) -> Assignment:
    """Minimum-total-cost row/column pairing with deterministic tie-breaking.

    Matches min(r, c) pairs.  Among all optimal assignments, returns the one
    whose pair list (sorted by row) is lexicographically smallest, i.e. ties
    break toward the lowest row index, then the lowest column index.  The
    tie-break pass is free when the optimum is unique: it only re-solves
    sub-problems when a genuinely tied edge is encountered.
    """
    a = as_matrix(cost, "cost")
    r, c = a.shape
    m = max(r, c)
    sq = np.zeros((m, m))
    sq[:r, :c] = a
    col_of_row, u, v = _lap_square(sq)

    tol = 1e-9 * (1.0 + float(np.abs(a).max()))
    avail_cols = np.ones(m, dtype=bool)
    removed_rows: set[int] = set()
    pairs: list[tuple[int, int]] = []
    match = col_of_row.copy()

    def residual_total(skip_row: int, skip_col: int) -> float:
        rows = [x for x in range(m) if x not in removed_rows and x != skip_row]
        cols = np.nonzero(avail_cols)[0]
        cols = cols[cols != skip_col]
        if not rows or cols.size == 0:
            return 0.0
        return _lap_total(sq[np.ix_(rows, cols)])

    budget = float(sq[np.arange(m), match].sum())
    for i in range(r):
        reduced = sq[i] - u[i] - v
        candidates = np.nonzero(avail_cols & (reduced <= tol))[0]
        chosen = None
        for j in candidates:
            if j == match[i]:
                chosen = int(j)
                break
            t = float(sq[i, j]) + residual_total(i, int(j))
            if abs(t - budget) <= tol * m:
                chosen = int(j)
                break
        if chosen is None:  # matched edge is always tight; defensive only
            chosen = int(match[i])
        if chosen < c:
            pairs.append((i, chosen))
        removed_rows.add(i)
        avail_cols[chosen] = False
        budget -= float(sq[i, chosen])
        if chosen != match[i]:
            # A tie was taken; recompute matching and potentials for the rest.
            rows = [x for x in range(m) if x not in removed_rows]
            cols = np.nonzero(avail_cols)[0]
            if rows and cols.size:
                sub = sq[np.ix_(rows, cols)]
                sub_match, sub_u, sub_v = _lap_square(sub)
                for xi, x in enumerate(rows):
                    match[x] = cols[sub_match[xi]]
                    u[x] = sub_u[xi]
                for xi, x in enumerate(cols):
                    v[x] = sub_v[xi]
                budget = float(sub[np.arange(len(rows)), sub_match].sum())

    total = float(sum(a[i, j] for i, j in pairs))
    return Assignment(pairs=pairs, total_cost=total)

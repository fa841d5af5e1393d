"""Adversary toolkit for mixed-batch recovery.

Implements the anchor-based pipeline (ridge estimation of known mixing
columns, three residualization schemes, ZCA whitening with PCA clipping,
blind source separation, back-projection) and single-batch BSS attacks.
All separation algorithms are implemented here directly: FastICA
(symmetric fixed point), FOBI (fourth-moment eigendecomposition), JADE
(joint diagonalization of cumulant eigen-slices), and JD (joint
diagonalization of quadratically weighted covariance slices).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    DimensionError,
    EmptyResidualError,
    InsufficientUnknownsError,
    ParameterError,
)
from .metrics import cosine_stats, gram_error, match_rows
from .numerics import Assignment, as_matrix, eigh, sample_orthogonal
from .protocol import ShieldConfig, mix, pad_shields
from .seeds import derive_seed, rng_from
from .synthdata import HiddenStatePrior, gen_hidden_states

__all__ = [
    "AttackConfig",
    "RecoveryResult",
    "WhitenerState",
    "estimate_anchor_mixing",
    "residualize",
    "whiten_reduce",
    "run_bss",
    "backproject",
    "anchor_attack",
    "bss_attack",
    "cell_seed",
    "run_cell",
    "SWEEP_COLUMNS",
]

RESIDUAL_METHODS = ("subtraction", "projection", "constrained")
BSS_METHODS = ("fastica", "fobi", "jade", "jd")

# full cumulant eigen-slice JADE is O(r^4) memory; above this row count we
# fall back to diagonal cumulant slices, which joint-diagonalize the same
# structure at O(r^3)
_JADE_FULL_MAX_R = 36
_JADE_FALLBACK_SLICES = 32
_JD_SLICES = 16

SWEEP_COLUMNS = [
    "n",
    "d",
    "k",
    "method",
    "bss",
    "shield_scale",
    "seed",
    "median_cos",
    "p95_cos",
    "gram_error",
    "converged",
]


@dataclass(frozen=True)
class AttackConfig:
    """Knobs of the recovery pipeline."""

    method: str = "subtraction"
    bss: str = "fastica"
    lambda_reg: Optional[float] = None  # default: 1e-3 * trace(G)/k at use site
    r: Optional[int] = None  # reduced row dimension, default n - k - 1
    ica_tol: float = 1e-5
    ica_max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.method not in RESIDUAL_METHODS:
            raise ParameterError(f"method must be one of {RESIDUAL_METHODS}")
        if self.bss not in BSS_METHODS:
            raise ParameterError(f"bss must be one of {BSS_METHODS}")
        if self.lambda_reg is not None and self.lambda_reg <= 0:
            raise ParameterError(f"lambda_reg must be > 0, got {self.lambda_reg}")
        if self.r is not None and self.r < 1:
            raise ParameterError(f"r must be >= 1, got {self.r}")
        if self.ica_tol <= 0:
            raise ParameterError(f"ica_tol must be > 0, got {self.ica_tol}")
        if self.ica_max_iter < 1:
            raise ParameterError(f"ica_max_iter must be >= 1, got {self.ica_max_iter}")


@dataclass(frozen=True)
class WhitenerState:
    """Eigenstructure captured during whitening, consumed by backproject."""

    v_lam: np.ndarray  # m x m eigenvectors, variance descending
    lam: np.ndarray  # m clamped eigenvalues
    u_r: np.ndarray  # m x r top eigenvector columns
    warning: bool  # r exceeded the numerical rank


@dataclass(frozen=True)
class RecoveryResult:
    """Outcome of one attack: estimates, their pairing to truth, and stats."""

    estimates: np.ndarray
    pairing: Assignment
    signs: np.ndarray
    cosines: np.ndarray
    summary: dict
    converged: bool

    def __post_init__(self):
        if self.cosines.size and float(np.abs(self.cosines).max()) > 1 + 1e-9:
            raise ParameterError("cosines must lie in [-1, 1]")


def _default_ridge(gram: np.ndarray, lambda_reg: Optional[float]) -> float:
    if lambda_reg is not None:
        return lambda_reg
    k = gram.shape[0]
    lam = 1e-3 * float(np.trace(gram)) / k
    return lam if lam > 0 else 1e-12


def estimate_anchor_mixing(
    u: np.ndarray, h_k: np.ndarray, lambda_reg: Optional[float] = None
) -> np.ndarray:
    """Ridge estimate of the mixing columns for known anchor rows.

    A_K = U H_K^T (H_K H_K^T + lambda I)^{-1}, computed via a symmetric
    solve rather than an explicit inverse.
    """
    u = as_matrix(u, "u")
    h_k = np.asarray(h_k, dtype=np.float64)
    if h_k.ndim != 2 or h_k.shape[0] == 0:
        raise ParameterError(
            "h_k needs at least one anchor row; use bss_attack when none are known"
        )
    h_k = as_matrix(h_k, "h_k")
    if u.shape[1] != h_k.shape[1]:
        raise DimensionError(
            f"u and h_k disagree on d: {u.shape[1]} != {h_k.shape[1]}"
        )
    k = h_k.shape[0]
    gram = h_k @ h_k.T
    lam = _default_ridge(gram, lambda_reg)
    lhs = gram + lam * np.eye(k)
    return np.linalg.solve(lhs, h_k @ u.T).T


def residualize(
    u: np.ndarray,
    a_k: np.ndarray,
    h_k: np.ndarray,
    method: str,
    lambda_reg: Optional[float] = None,
    seed: int = 0,
):
    """Remove estimated anchor contributions from the mixed batch.

    subtraction: U - A_K H_K.
    projection: (I - P_A) U with P_A = A_K (A_K^T A_K + lambda I)^{-1} A_K^T.
    constrained: rotate into an orthonormal basis [Q, Q_perp] where Q spans
    the anchor columns (numerical rank k_eff at 1e-8 * sigma_max) and return
    the complement rows Q_perp^T U together with the full basis.
    """
    u = as_matrix(u, "u")
    a_k = as_matrix(a_k, "a_k")
    h_k = as_matrix(h_k, "h_k")
    n = u.shape[0]
    k = a_k.shape[1]
    if a_k.shape[0] != n:
        raise DimensionError(f"a_k rows {a_k.shape[0]} != u rows {n}")
    if h_k.shape[0] != k:
        raise DimensionError(f"h_k rows {h_k.shape[0]} != a_k cols {k}")

    if method == "subtraction":
        return u - a_k @ h_k, None, k

    if method == "projection":
        gram = a_k.T @ a_k
        lam = _default_ridge(gram, lambda_reg)
        coeff = np.linalg.solve(gram + lam * np.eye(k), a_k.T @ u)
        return u - a_k @ coeff, None, k

    if method == "constrained":
        u_svd, sigma, _ = np.linalg.svd(a_k, full_matrices=False)
        if sigma.size == 0 or sigma[0] <= 0:
            k_eff = 0
        else:
            k_eff = int(np.sum(sigma > 1e-8 * sigma[0]))
        if k_eff >= n:
            raise EmptyResidualError(
                f"anchor span fills the batch: k_eff={k_eff} of n={n}"
            )
        q = u_svd[:, :k_eff]
        r_mat = rng_from(seed).standard_normal((n, n - k_eff))
        q_perp, _ = np.linalg.qr(r_mat - q @ (q.T @ r_mat))
        basis = np.hstack([q, q_perp])
        return q_perp.T @ u, basis, k_eff

    raise ParameterError(f"method must be one of {RESIDUAL_METHODS}, got {method!r}")


def whiten_reduce(u_res: np.ndarray, r: int):
    """ZCA-whiten the residual rows and clip to the top-r row directions.

    (U_res U_res^T)/d = V Lambda V^T; W = V Lambda^{-1/2} V^T; Z = W U_res;
    Z_r = U_r^T Z with U_r the r largest-variance eigenvector columns.
    Eigenvalues below 1e-10 * lambda_max are clamped; asking for more
    directions than the numerical rank sets the warning flag.
    """
    u_res = as_matrix(u_res, "u_res")
    m, d = u_res.shape
    if not 1 <= r <= m:
        raise ParameterError(f"r must satisfy 1 <= r <= {m}, got {r}")
    cov = u_res @ u_res.T / d
    decomp = eigh(cov)
    values, vectors = decomp.eigenvalues, decomp.eigenvectors
    if values[0] <= 0:
        lam = np.ones(m)
        vectors = np.eye(m)
        warning = True
        w = np.eye(m)
    else:
        floor = 1e-10 * values[0]
        rank = int(np.sum(values > floor))
        lam = np.maximum(values, floor)
        warning = r > rank
        w = (vectors * lam**-0.5) @ vectors.T
    z = w @ u_res
    u_r = vectors[:, :r]
    z_r = u_r.T @ z
    return z_r, WhitenerState(v_lam=vectors, lam=lam, u_r=u_r, warning=warning)


# ---------------------------------------------------------------------------
# blind source separation (all on whitened z: rows = channels, cols = samples)
# ---------------------------------------------------------------------------


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    # W <- (W W^T)^{-1/2} W
    decomp = eigh(w @ w.T)
    values = np.maximum(decomp.eigenvalues, 1e-18)
    vectors = decomp.eigenvectors
    return (vectors * values**-0.5) @ vectors.T @ w


def _fastica(z: np.ndarray, tol: float, max_iter: int, seed: int):
    r, d = z.shape
    rng = rng_from(seed)
    w = _sym_decorrelate(rng.standard_normal((r, r)))
    for _ in range(max_iter):
        y = w @ z
        g = np.tanh(y)
        g_prime_mean = (1.0 - g * g).mean(axis=1)
        w_new = _sym_decorrelate(g @ z.T / d - g_prime_mean[:, None] * w)
        lim = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0)))
        w = w_new
        if lim < tol:
            return w, True
    return w, False


def _fobi(z: np.ndarray):
    # eigendecompose M = E[ ||z||^2 z z^T ]; requires distinct kurtoses
    d = z.shape[1]
    weights = np.sum(z * z, axis=0)
    m = (z * weights) @ z.T / d
    return eigh((m + m.T) / 2).eigenvectors.T, True


def _joint_diagonalize(mats: np.ndarray, tol: float = 1e-8, max_sweeps: int = 100):
    """Orthogonal V minimizing total off-diagonal energy of V^T M_k V.

    Jacobi sweeps over index pairs; the rotation angle per pair is
    theta = atan2(toff, ton + sqrt(ton^2 + toff^2)) / 2.
    """
    a = np.array(mats, dtype=np.float64, copy=True)
    r = a.shape[1]
    v = np.eye(r)
    if r == 1:
        return v, True
    for _ in range(max_sweeps):
        rotated = False
        for p in range(r - 1):
            for q in range(p + 1, r):
                hvec = a[:, p, p] - a[:, q, q]
                gvec = a[:, p, q] + a[:, q, p]
                ton = float(hvec @ hvec - gvec @ gvec)
                toff = float(2.0 * (hvec @ gvec))
                theta = 0.5 * math.atan2(toff, ton + math.hypot(ton, toff))
                s = math.sin(theta)
                if abs(s) <= tol:
                    continue
                rotated = True
                c = math.cos(theta)
                col_p = a[:, :, p].copy()
                col_q = a[:, :, q].copy()
                a[:, :, p] = c * col_p + s * col_q
                a[:, :, q] = -s * col_p + c * col_q
                row_p = a[:, p, :].copy()
                row_q = a[:, q, :].copy()
                a[:, p, :] = c * row_p + s * row_q
                a[:, q, :] = -s * row_p + c * row_q
                v_p = v[:, p].copy()
                v_q = v[:, q].copy()
                v[:, p] = c * v_p + s * v_q
                v[:, q] = -s * v_p + c * v_q
        if not rotated:
            return v, True
    return v, False


def _cumulant_eigen_slices(z: np.ndarray, count: int) -> np.ndarray:
    """Top eigen-matrices of the fourth-order cumulant, eigenvalue-weighted."""
    r, d = z.shape
    pairs = np.einsum("it,jt->ijt", z, z).reshape(r * r, d)
    big = pairs @ pairs.T / d
    eye = np.eye(r)
    vec_eye = eye.reshape(-1)
    big -= np.outer(vec_eye, vec_eye)
    big -= np.eye(r * r)
    commutation = np.zeros((r * r, r * r))
    idx = np.arange(r * r).reshape(r, r)
    commutation[idx.reshape(-1), idx.T.reshape(-1)] = 1.0
    big -= commutation
    big = (big + big.T) / 2
    values, vectors = np.linalg.eigh(big)
    order = np.argsort(-np.abs(values))[:count]
    slices = []
    for j in order:
        m = vectors[:, j].reshape(r, r) * values[j]
        slices.append((m + m.T) / 2)
    return np.array(slices)


def _diagonal_cumulant_slices(z: np.ndarray, count: int) -> np.ndarray:
    # C_j[a, b] = E[z_j^2 z_a z_b] - delta_ab - 2 delta_aj delta_bj
    r, d = z.shape
    slices = []
    for j in range(min(count, r)):
        m = (z * z[j] ** 2) @ z.T / d - np.eye(r)
        m[j, j] -= 2.0
        slices.append((m + m.T) / 2)
    return np.array(slices)


def _jade(z: np.ndarray):
    r = z.shape[0]
    if r <= _JADE_FULL_MAX_R:
        slices = _cumulant_eigen_slices(z, count=r)
    else:
        slices = _diagonal_cumulant_slices(z, count=_JADE_FALLBACK_SLICES)
    v, converged = _joint_diagonalize(slices)
    return v.T, converged


def _jd(z: np.ndarray):
    # covariance slices weighted by z_j^2 over the first few coordinates
    r, d = z.shape
    slices = []
    for j in range(min(_JD_SLICES, r)):
        m = (z * z[j] ** 2) @ z.T / d
        slices.append((m + m.T) / 2)
    v, converged = _joint_diagonalize(np.array(slices))
    return v.T, converged


def run_bss(z_r: np.ndarray, bss: str, cfg: AttackConfig):
    """Separate whitened rows; returns (w_r, s_r, converged).

    w_r is orthogonal in the whitened space and s_r = w_r @ z_r. A
    non-converged solver still returns its current iterate, flagged.
    """
    z_r = as_matrix(z_r, "z_r")
    if bss == "fastica":
        w_r, converged = _fastica(z_r, cfg.ica_tol, cfg.ica_max_iter, cfg.seed)
    elif bss == "fobi":
        w_r, converged = _fobi(z_r)
    elif bss == "jade":
        w_r, converged = _jade(z_r)
    elif bss == "jd":
        w_r, converged = _jd(z_r)
    else:
        raise ParameterError(f"bss must be one of {BSS_METHODS}, got {bss!r}")
    return w_r, w_r @ z_r, converged


def backproject(
    w_r: np.ndarray, state: WhitenerState, u_for_lift: np.ndarray
) -> np.ndarray:
    """Lift whitened-space components back to ambient rows.

    R_full = U_r W_r U_r^T + (I - U_r U_r^T); W^{-1} = sqrt(d) V Lambda^{1/2} V^T;
    A_hat = W^{-1} R_full^T; X_hat = A_hat^T U.
    """
    w_r = as_matrix(w_r, "w_r")
    u_for_lift = as_matrix(u_for_lift, "u_for_lift")
    m = state.v_lam.shape[0]
    r = state.u_r.shape[1]
    if w_r.shape != (r, r):
        raise DimensionError(f"w_r must be {r}x{r}, got {w_r.shape}")
    if u_for_lift.shape[0] != m:
        raise DimensionError(f"u_for_lift rows {u_for_lift.shape[0]} != {m}")
    d = u_for_lift.shape[1]
    u_r = state.u_r
    r_full = u_r @ w_r @ u_r.T + (np.eye(m) - u_r @ u_r.T)
    w_inv = math.sqrt(d) * (state.v_lam * state.lam**0.5) @ state.v_lam.T
    a_hat = w_inv @ r_full.T
    return a_hat.T @ u_for_lift


# ---------------------------------------------------------------------------
# end-to-end attacks
# ---------------------------------------------------------------------------


def anchor_attack(
    u: np.ndarray, h_true: np.ndarray, anchor_idx, cfg: AttackConfig
) -> RecoveryResult:
    """Full pipeline: ridge anchors, residualize, whiten, separate, lift.

    h_true is the evaluation oracle; the attack itself sees only u and the
    rows named by anchor_idx. Recovered rows are matched one-to-one against
    the non-anchor truth rows by absolute cosine. With no anchors the
    estimation and residualization stages are skipped entirely, so every
    residual method degenerates to the same single-batch BSS attack.
    """
    u = as_matrix(u, "u")
    h_true = as_matrix(h_true, "h_true")
    if u.shape[1] != h_true.shape[1]:
        raise DimensionError(
            f"u and h_true disagree on d: {u.shape[1]} != {h_true.shape[1]}"
        )
    n = u.shape[0]
    anchor_idx = sorted(int(i) for i in anchor_idx)
    k = len(anchor_idx)
    if len(set(anchor_idx)) != k:
        raise ParameterError("anchor_idx contains duplicates")
    if k and (anchor_idx[0] < 0 or anchor_idx[-1] >= h_true.shape[0]):
        raise ParameterError("anchor_idx out of range")
    if k >= n - 1:
        raise InsufficientUnknownsError(
            f"k={k} anchors leave fewer than 2 unknown rows of n={n}"
        )

    if k == 0:
        u_res = u
    else:
        h_k = h_true[anchor_idx]
        a_k = estimate_anchor_mixing(u, h_k, cfg.lambda_reg)
        u_res, _, _ = residualize(
            u, a_k, h_k, cfg.method, cfg.lambda_reg, seed=derive_seed(cfg.seed, 17)
        )

    r = cfg.r if cfg.r is not None else min(n - k - 1, u_res.shape[0])
    z_r, state = whiten_reduce(u_res, r)
    w_r, _, converged = run_bss(z_r, cfg.bss, cfg)
    x_hat = backproject(w_r, state, u_res)

    keep = np.ones(h_true.shape[0], dtype=bool)
    keep[anchor_idx] = False
    truth = h_true[keep]
    matched = match_rows(truth, x_hat)
    stats = cosine_stats(matched.cosines)
    t_sub = truth[[i for i, _ in matched.assignment.pairs]]
    e_sub = x_hat[[j for _, j in matched.assignment.pairs]]
    # BSS leaves per-row scale unidentifiable, so the Gram comparison uses
    # estimates rescaled to their matched truth norms (direction-only error)
    t_norms = np.linalg.norm(t_sub, axis=1)
    e_norms = np.linalg.norm(e_sub, axis=1)
    safe = np.where(e_norms > 0, e_norms, 1.0)
    e_scaled = e_sub * (np.where(e_norms > 0, t_norms, 0.0) / safe)[:, None]
    return RecoveryResult(
        estimates=x_hat,
        pairing=matched.assignment,
        signs=matched.signs,
        cosines=matched.cosines,
        summary={
            "median_cos": stats.median,
            "p95_cos": stats.p95,
            "gram_error": gram_error(t_sub, e_scaled),
        },
        converged=converged,
    )


def bss_attack(u: np.ndarray, h_true: np.ndarray, cfg: AttackConfig) -> RecoveryResult:
    """Single-batch attack with no anchor knowledge (r defaults to n - 1)."""
    return anchor_attack(u, h_true, [], cfg)


# ---------------------------------------------------------------------------
# sweep engine
# ---------------------------------------------------------------------------

_BSS_IDS = {name: i for i, name in enumerate(BSS_METHODS)}


def cell_seed(
    master_seed: int, n: int, d: int, k: int, bss: str, shield_scale: float, rep: int
) -> int:
    """Per-cell seed; the residual method is deliberately excluded so k=0
    cells share inputs (and therefore results) across methods."""
    return derive_seed(
        master_seed, n, d, k, _BSS_IDS[bss], int(round(shield_scale * 1000)), rep
    )


def run_cell(
    n: int,
    d: int,
    k: int,
    method: str,
    bss: str,
    shield_scale: float,
    seed: int,
    prior: Optional[HiddenStatePrior] = None,
    cfg: Optional[AttackConfig] = None,
    shield_fraction: float = 0.05,
) -> dict:
    """One sweep cell: generate, shield, mix, attack, summarize.

    Returns a row dict matching SWEEP_COLUMNS plus an "error" key; an
    infeasible cell reports NaN metrics with the error message set.
    """
    row = {
        "n": n,
        "d": d,
        "k": k,
        "method": method,
        "bss": bss,
        "shield_scale": shield_scale,
        "seed": seed,
        "median_cos": math.nan,
        "p95_cos": math.nan,
        "gram_error": math.nan,
        "converged": False,
        "error": "",
    }
    try:
        if not 0 <= k <= n:
            raise InsufficientUnknownsError(f"k={k} outside [0, n={n}]")
        if prior is None:
            prior = HiddenStatePrior(d=d, r_eff=min(16, d))
        prior = replace(prior, d=d, seed=derive_seed(seed, 0))
        batch = gen_hidden_states(n, prior)
        if shield_scale > 0:
            padded = pad_shields(
                batch,
                ShieldConfig(
                    fraction=shield_fraction,
                    scale=shield_scale,
                    seed=derive_seed(seed, 2),
                ),
            )
        else:
            padded = batch
        a = sample_orthogonal(padded.n, seed=derive_seed(seed, 1))
        u = mix(a, padded).u
        anchors = []
        if k > 0:
            picker = rng_from(derive_seed(seed, 4))
            anchors = sorted(picker.choice(n, size=k, replace=False).tolist())
        base = cfg if cfg is not None else AttackConfig()
        base = replace(base, method=method, bss=bss, seed=derive_seed(seed, 3))
        result = anchor_attack(u, batch.h, anchors, base)
        row.update(
            median_cos=result.summary["median_cos"],
            p95_cos=result.summary["p95_cos"],
            gram_error=result.summary["gram_error"],
            converged=result.converged,
        )
    except (InsufficientUnknownsError, EmptyResidualError, ParameterError) as exc:
        row["error"] = str(exc)
    return row

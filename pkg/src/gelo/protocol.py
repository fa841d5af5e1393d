"""The trusted-side mixing protocol and its batching-time defenses.

A batch of hidden rows H (n x d) never leaves the trusted boundary in the
clear.  Per batch, a fresh invertible A is sampled, U = A @ H is shipped to
the untrusted GEMM helper, and the reply Y = U @ W is unmixed back to
H @ W.  Orthogonal A makes unmixing a transpose; general A with a bounded
condition number trades a small precision loss for breaking the Gram
identity U^T U = H^T H that orthogonal mixing preserves.

Defenses that act on batch composition rather than on A:

- shield padding: a small fraction of high-norm Gaussian rows is appended
  before mixing, drowning the Gram / spectrum statistics an adversary can
  read off U; the trusted side strips them after unmixing.
- token-flooding detection: a near-duplicate submission flood shifts the
  token histogram away from the serving baseline; KL divergence beyond a
  threshold flags the batch and proposes decoy tokens to mix in.
- user interleaving: rows from concurrent users are round-robin interleaved
  so batch position leaks nothing about request boundaries.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditioningError,
    DimensionError,
    ParameterError,
)
from .numerics import (
    DEFAULT_KAPPA_MAX,
    MixingMatrix,
    as_matrix,
    sample_invertible,
    sample_orthogonal,
    solve,
)
from .seeds import derive_seed, rng_from

__all__ = [
    "HiddenBatch",
    "ObfuscatedBatch",
    "ShieldConfig",
    "FloodReport",
    "InterleaveResult",
    "LayerPolicy",
    "MixingSession",
    "mix",
    "unmix",
    "pad_shields",
    "strip_shields",
    "detect_flooding",
    "interleave_users",
    "deinterleave",
]

_batch_counter = itertools.count(1)


@dataclass
class HiddenBatch:
    """n hidden rows of width d, with optional token ids and shield mask.

    token_ids entries may be None (shield rows carry no token).  shield_mask
    marks rows that are padding, not user data.
    """

    h: np.ndarray
    token_ids: list[int | None] | None = None
    shield_mask: np.ndarray | None = None

    def __post_init__(self):
        self.h = as_matrix(self.h, "h")
        if self.token_ids is not None and len(self.token_ids) != self.n:
            raise DimensionError(
                f"token_ids has {len(self.token_ids)} entries for {self.n} rows"
            )
        if self.shield_mask is not None:
            self.shield_mask = np.asarray(self.shield_mask, dtype=bool)
            if self.shield_mask.shape != (self.n,):
                raise DimensionError("shield_mask must have one entry per row")

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def d(self) -> int:
        return self.h.shape[1]


@dataclass
class ObfuscatedBatch:
    """Mixed rows as they appear outside the trusted boundary."""

    u: np.ndarray
    batch_id: int
    dtype: str = "f64"  # wire encoding; in-library math stays float64

    @property
    def n(self) -> int:
        return self.u.shape[0]


@dataclass
class ShieldConfig:
    """Padding policy: `fraction` of the output rows are shields, each an
    i.i.d. Gaussian row scaled to `scale` times the mean data row norm."""

    fraction: float = 0.05
    scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ParameterError(f"fraction must be in [0, 1), got {self.fraction}")
        if self.scale < 0.0:
            raise ParameterError(f"scale must be >= 0, got {self.scale}")


@dataclass
class FloodReport:
    flagged: bool
    divergence: float
    offending_tokens: list[tuple[int, float]] = field(default_factory=list)
    injected: int = 0
    injected_tokens: list[int] = field(default_factory=list)


@dataclass
class InterleaveResult:
    """Round-robin merged batch plus the bookkeeping to undo it.

    source_index[t] is the row index in the user-concatenated order that
    landed at interleaved position t; user_of_row[t] is which user it came
    from.  deinterleave() inverts the shuffle.
    """

    batch: HiddenBatch
    source_index: np.ndarray
    user_of_row: np.ndarray


def mix(a: MixingMatrix, batch: HiddenBatch, batch_id: int | None = None) -> ObfuscatedBatch:
    """Left-multiply the batch by the mixing matrix: U = A @ H."""
    if a.n != batch.n:
        raise DimensionError(
            f"mixing matrix is {a.n}x{a.n} but batch has {batch.n} rows"
        )
    u = a.matrix @ batch.h
    if batch_id is None:
        batch_id = next(_batch_counter)
    return ObfuscatedBatch(u=u, batch_id=int(batch_id))


def unmix(
    a: MixingMatrix, y, max_condition: float | None = DEFAULT_KAPPA_MAX
) -> np.ndarray:
    """Invert the batch mixing on a reply: returns A^-1 @ Y.

    Orthogonal matrices unmix by transpose; general ones by a factorized
    solve.  A matrix at or beyond max_condition is refused outright rather
    than amplifying noise into the result.
    """
    ym = as_matrix(y, "y")
    if a.matrix.shape[0] != ym.shape[0]:
        raise DimensionError(
            f"mixing matrix is {a.n}x{a.n} but reply has {ym.shape[0]} rows"
        )
    if max_condition is not None and a.condition >= max_condition:
        raise ConditioningError(a.condition, max_condition)
    if a.kind == "orthogonal":
        return a.matrix.T @ ym
    return solve(a.matrix, ym)


def shield_count(n_data: int, fraction: float) -> int:
    """Shield rows needed so shields are `fraction` of the padded batch.

    Solves k = fraction * (n_data + k) with the result rounded half-up.
    """
    if fraction == 0.0:
        return 0
    n_final = math.floor(n_data / (1.0 - fraction) + 0.5)
    return n_final - n_data


def pad_shields(batch: HiddenBatch, cfg: ShieldConfig) -> HiddenBatch:
    """Append high-norm Gaussian shield rows to the batch.

    Every shield row is rescaled to exactly cfg.scale times the mean data
    row norm, so the planted rows dominate the batch Gram by construction.
    Shield rows carry no token id and are flagged in shield_mask.
    """
    k = shield_count(batch.n, cfg.fraction)
    data_mask = np.zeros(batch.n, dtype=bool)
    if batch.shield_mask is not None and batch.shield_mask.any():
        raise ParameterError("batch already contains shield rows")
    if k == 0:
        return HiddenBatch(
            h=batch.h.copy(),
            token_ids=list(batch.token_ids) if batch.token_ids is not None else None,
            shield_mask=data_mask,
        )
    rng = rng_from(cfg.seed)
    g = rng.standard_normal((k, batch.d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    target = cfg.scale * float(np.linalg.norm(batch.h, axis=1).mean())
    shields = g / norms * target
    h = np.vstack([batch.h, shields])
    mask = np.concatenate([data_mask, np.ones(k, dtype=bool)])
    tokens = None
    if batch.token_ids is not None:
        tokens = list(batch.token_ids) + [None] * k
    return HiddenBatch(h=h, token_ids=tokens, shield_mask=mask)


def strip_shields(m, shield_mask) -> np.ndarray:
    """Drop shield rows from a matrix using the mask recorded at padding."""
    mm = as_matrix(m, "m")
    mask = np.asarray(shield_mask, dtype=bool)
    if mask.shape != (mm.shape[0],):
        raise DimensionError("shield_mask must have one entry per row")
    return mm[~mask]


def detect_flooding(
    token_ids,
    baseline: dict[int, float],
    threshold: float = 1.0,
    seed: int = 0,
) -> FloodReport:
    """Compare the batch token histogram against a serving baseline.

    Computes KL(empirical || baseline) with the baseline smoothed by
    epsilon = 1e-6 over the union support, so tokens outside the baseline
    stay finite.  A divergence above `threshold` (nats) flags the batch; the
    report then proposes ceil(0.1 * n) decoy tokens drawn uniformly from the
    baseline support for the caller to mix into the batch.
    """
    tokens = [int(t) for t in token_ids]
    if not tokens:
        raise ParameterError("token_ids must be non-empty")
    if not baseline:
        raise ParameterError("baseline must be non-empty")
    if threshold <= 0:
        raise ParameterError(f"threshold must be positive, got {threshold}")
    eps = 1e-6
    counts: dict[int, int] = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    n = len(tokens)
    support = set(baseline) | set(counts)
    z = 1.0 + eps * len(support)

    def q_smooth(t: int) -> float:
        return (baseline.get(t, 0.0) + eps) / z

    divergence = 0.0
    excess: list[tuple[float, int, float]] = []
    for t, c in counts.items():
        p = c / n
        q = q_smooth(t)
        divergence += p * math.log(p / q)
        if p > q:
            excess.append((p - q, t, p))
    flagged = divergence > threshold
    offending: list[tuple[int, float]] = []
    injected = 0
    injected_tokens: list[int] = []
    if flagged:
        excess.sort(key=lambda e: (-e[0], e[1]))
        offending = [(t, p) for _, t, p in excess[:10]]
        injected = math.ceil(0.1 * n)
        pool = sorted(baseline)
        rng = rng_from(seed)
        injected_tokens = [int(pool[i]) for i in rng.integers(0, len(pool), injected)]
    return FloodReport(
        flagged=flagged,
        divergence=float(divergence),
        offending_tokens=offending,
        injected=injected,
        injected_tokens=injected_tokens,
    )


def interleave_users(batches: list[HiddenBatch]) -> InterleaveResult:
    """Round-robin rows from several users into one batch.

    Pass order: row 0 of each user in argument order, then row 1 of each
    user that still has one, and so on; users simply drop out when
    exhausted.  The result records enough to restore per-user order.
    """
    if not batches:
        raise ParameterError("need at least one user batch")
    d = batches[0].d
    for b in batches:
        if b.d != d:
            raise DimensionError("all user batches must share feature width")
    offsets = np.cumsum([0] + [b.n for b in batches])
    order: list[int] = []
    users: list[int] = []
    max_rows = max(b.n for b in batches)
    for rnd in range(max_rows):
        for uid, b in enumerate(batches):
            if rnd < b.n:
                order.append(int(offsets[uid]) + rnd)
                users.append(uid)
    source_index = np.array(order, dtype=np.int64)
    h = np.vstack([b.h for b in batches])[source_index]
    tokens = None
    if all(b.token_ids is not None for b in batches):
        flat: list[int | None] = []
        for b in batches:
            flat.extend(b.token_ids)  # type: ignore[arg-type]
        tokens = [flat[i] for i in source_index]
    return InterleaveResult(
        batch=HiddenBatch(h=h, token_ids=tokens),
        source_index=source_index,
        user_of_row=np.array(users, dtype=np.int64),
    )


def deinterleave(m, source_index) -> np.ndarray:
    """Restore user-concatenated row order after interleave_users."""
    mm = as_matrix(m, "m")
    src = np.asarray(source_index, dtype=np.int64)
    if src.shape != (mm.shape[0],):
        raise DimensionError("source_index must have one entry per row")
    out = np.empty_like(mm)
    out[src] = mm
    return out


@dataclass
class LayerPolicy:
    """Which layers are offloaded at all.

    The first layers and the last one stay on the trusted side: their
    states sit closest to token embeddings and logits, where inversion is
    cheapest for an adversary.
    """

    skip_first: tuple[int, ...] = (0, 1)
    skip_last: bool = True

    def should_offload(self, layer: int, num_layers: int) -> bool:
        if layer < 0 or layer >= num_layers:
            raise ParameterError(f"layer {layer} outside [0, {num_layers})")
        if layer in self.skip_first:
            return False
        if self.skip_last and layer == num_layers - 1:
            return False
        return True


class MixingSession:
    """Derives a fresh mixing matrix (and shield seed) per batch.

    All per-batch randomness hangs off (master_seed, batch counter); no
    mixing matrix or seed is ever reused across batches.  seeds_used exists
    so tests can audit freshness.
    """

    def __init__(
        self,
        master_seed: int,
        kind: str = "orthogonal",
        kappa_max: float = DEFAULT_KAPPA_MAX,
    ):
        if kind not in ("orthogonal", "general"):
            raise ParameterError(f"unknown mixing kind: {kind!r}")
        self.master_seed = int(master_seed)
        self.kind = kind
        self.kappa_max = float(kappa_max)
        self.seeds_used: list[int] = []
        self._counter = 0

    def next_batch_id(self) -> int:
        self._counter += 1
        return self._counter

    def sample(self, n: int, batch_id: int) -> MixingMatrix:
        seed = derive_seed(self.master_seed, 0, batch_id)
        self.seeds_used.append(seed)
        if self.kind == "orthogonal":
            return sample_orthogonal(n, seed)
        return sample_invertible(n, kappa_max=self.kappa_max, seed=seed)

    def shield_seed(self, batch_id: int) -> int:
        return derive_seed(self.master_seed, 1, batch_id)

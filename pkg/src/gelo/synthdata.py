"""Synthetic hidden-state and token-stream generators.

Hidden states are drawn from a low-dimensional factor model with a
calibrated participation ratio and a narrow norm shell, so recovery
experiments run without a real model. Token streams with controlled
special-token and repeat rates feed the duplicate-rate analyzer.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .protocol import HiddenBatch
from .seeds import rng_from

__all__ = [
    "HiddenStatePrior",
    "TokenStreamSpec",
    "gen_hidden_states",
    "gen_token_stream",
    "duplicate_report",
    "save_dataset",
    "load_dataset",
    "save_token_stream",
    "load_token_stream",
]

# Population PR is calibrated slightly under the target so the spectrum
# genuinely decays (a flat spectrum is the only way to hit r_eff exactly).
_PR_CALIBRATION = 0.98

_DATASET_MAGIC = b"GELD"
_DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sBBHII")  # magic, version, dtype, reserved, n, d
_DTYPE_CODES = {0: np.float32, 1: np.float64}
_DTYPE_IDS = {"f32": 0, "f64": 1}


@dataclass(frozen=True)
class HiddenStatePrior:
    """Statistical prior for synthetic hidden states."""

    d: int = 256
    r_eff: int = 16
    radius: float = 24.0
    norm_cv: float = 0.039
    heavy_tail: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ParameterError(f"d must be >= 1, got {self.d}")
        if not 1 <= self.r_eff <= self.d:
            raise ParameterError(
                f"r_eff must satisfy 1 <= r_eff <= d, got r_eff={self.r_eff} d={self.d}"
            )
        if self.radius <= 0:
            raise ParameterError(f"radius must be > 0, got {self.radius}")
        if self.norm_cv < 0:
            raise ParameterError(f"norm_cv must be >= 0, got {self.norm_cv}")
        if self.heavy_tail < 0:
            raise ParameterError(f"heavy_tail must be >= 0, got {self.heavy_tail}")


@dataclass(frozen=True)
class TokenStreamSpec:
    """Parameters of the synthetic token stream generator."""

    vocab_size: int
    length: int
    special_token_ids: frozenset = field(default_factory=frozenset)
    special_rate: float = 0.0
    repeat_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ParameterError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.length < 1:
            raise ParameterError(f"length must be >= 1, got {self.length}")
        for name in ("special_rate", "repeat_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ParameterError(f"{name} must be in [0, 1], got {rate}")
        specials = frozenset(self.special_token_ids)
        object.__setattr__(self, "special_token_ids", specials)
        for t in specials:
            if not 0 <= t < self.vocab_size:
                raise ParameterError(f"special token {t} outside vocab")
        if self.special_rate > 0 and not specials:
            raise ParameterError("special_rate > 0 requires special_token_ids")


def _spectrum_pr(gamma: float, r: int) -> float:
    # PR of the covariance spectrum (gamma^(2k))_k: (sum)^2 / sum of squares.
    k = np.arange(r)
    lam2 = gamma ** (2 * k)
    return float(lam2.sum() ** 2 / (lam2 ** 2).sum())


def _calibrate_spectrum(r: int, target_pr: float) -> np.ndarray:
    """Geometric spectrum gamma^k whose covariance PR equals target_pr."""
    if r == 1:
        return np.ones(1)
    lo, hi = 0.0, 1.0  # PR is monotone increasing in gamma on (0, 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _spectrum_pr(mid, r) < target_pr:
            lo = mid
        else:
            hi = mid
    gamma = 0.5 * (lo + hi)
    return gamma ** np.arange(r)


def _gg_factors(rng: np.random.Generator, shape, beta: float) -> np.ndarray:
    """Unit-variance generalized-Gaussian samples with shape parameter beta.

    beta=2 is Gaussian; beta<2 is super-Gaussian (heavier tails).
    |x|^beta ~ Gamma(1/beta), so |x| = G^(1/beta) with a random sign.
    """
    g = rng.gamma(1.0 / beta, 1.0, size=shape)
    signs = rng.integers(0, 2, size=shape) * 2 - 1
    x = signs * g ** (1.0 / beta)
    # E[x^2] = Gamma(3/beta) / Gamma(1/beta) for the unit-scale density
    var = math.gamma(3.0 / beta) / math.gamma(1.0 / beta)
    return x / math.sqrt(var)


def gen_hidden_states(n: int, prior: HiddenStatePrior) -> HiddenBatch:
    """Sample n rows as x = V (lambda * z), rescaled onto the norm shell.

    V is a per-seed orthonormal d x r_eff basis; lambda decays geometrically,
    calibrated so the population participation ratio matches r_eff; z are
    i.i.d. unit-variance factors, Gaussian at heavy_tail=0 and increasingly
    super-Gaussian as heavy_tail grows.
    """
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    rng = rng_from(prior.seed)

    q, r_mat = np.linalg.qr(rng.standard_normal((prior.d, prior.r_eff)))
    v = q * np.sign(np.diag(r_mat))

    lam = _calibrate_spectrum(prior.r_eff, _PR_CALIBRATION * prior.r_eff)
    beta = 2.0 / (1.0 + prior.heavy_tail)
    z = _gg_factors(rng, (n, prior.r_eff), beta)

    x = (z * lam) @ v.T

    g = rng.standard_normal(n)
    target = prior.radius * np.maximum(1.0 + prior.norm_cv * g, 1e-3)
    norms = np.linalg.norm(x, axis=1)
    nz = norms > 0
    x[nz] *= (target[nz] / norms[nz])[:, None]
    return HiddenBatch(h=x)


def gen_token_stream(spec: TokenStreamSpec) -> list[int]:
    """Emit tokens with configured special-token and history-repeat rates."""
    rng = rng_from(spec.seed)
    specials = sorted(spec.special_token_ids)
    rolls = rng.random((spec.length, 2))
    fresh = rng.integers(0, spec.vocab_size, size=spec.length)
    out: list[int] = []
    for i in range(spec.length):
        if specials and rolls[i, 0] < spec.special_rate:
            out.append(specials[int(rng.integers(0, len(specials)))])
        elif out and rolls[i, 1] < spec.repeat_rate:
            out.append(out[int(rng.integers(0, len(out)))])
        else:
            out.append(int(fresh[i]))
    return out


def duplicate_report(tokens, special_ids=frozenset(), top=5):
    """Duplicate-rate summary of a token stream.

    An item is duplicated when its value occurs at least twice, so
    rate = (total - singletons) / total. filtered_rate applies the same
    count after removing special_ids; top lists the most frequent
    non-special tokens, count descending with ties broken by token id.
    """
    tokens = list(tokens)
    if not tokens:
        raise ParameterError("token stream is empty")
    special_ids = frozenset(special_ids)

    def rate(stream):
        if not stream:
            return 0.0
        counts = Counter(stream)
        singletons = sum(1 for c in counts.values() if c == 1)
        return (len(stream) - singletons) / len(stream)

    filtered = [t for t in tokens if t not in special_ids]
    ranked = sorted(Counter(filtered).items(), key=lambda kv: (-kv[1], kv[0]))
    return rate(tokens), rate(filtered), ranked[:top]


def save_dataset(path, h: np.ndarray, dtype: str = "f64") -> None:
    """Write a matrix to the flat binary dataset format."""
    if dtype not in _DTYPE_IDS:
        raise ParameterError(f"dtype must be f32 or f64, got {dtype!r}")
    h = np.asarray(h)
    if h.ndim != 2 or h.size == 0:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {h.shape}")
    code = _DTYPE_IDS[dtype]
    payload = np.ascontiguousarray(h, dtype=_DTYPE_CODES[code])
    header = _DATASET_HEADER.pack(
        _DATASET_MAGIC, _DATASET_VERSION, code, 0, h.shape[0], h.shape[1]
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.astype(payload.dtype.newbyteorder("<")).tobytes())


def load_dataset(path) -> np.ndarray:
    """Read a matrix written by save_dataset."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _DATASET_HEADER.size:
        raise ParameterError(f"dataset file truncated: {len(raw)} bytes")
    magic, version, code, _, n, d = _DATASET_HEADER.unpack_from(raw)
    if magic != _DATASET_MAGIC:
        raise ParameterError(f"bad dataset magic {magic!r}")
    if version != _DATASET_VERSION:
        raise ParameterError(f"unsupported dataset version {version}")
    if code not in _DTYPE_CODES:
        raise ParameterError(f"unknown dtype code {code}")
    np_dtype = np.dtype(_DTYPE_CODES[code]).newbyteorder("<")
    expected = _DATASET_HEADER.size + n * d * np_dtype.itemsize
    if len(raw) != expected:
        raise ParameterError(f"dataset size mismatch: {len(raw)} != {expected}")
    flat = np.frombuffer(raw, dtype=np_dtype, offset=_DATASET_HEADER.size)
    return flat.reshape(n, d).astype(_DTYPE_CODES[code])


def save_token_stream(path, tokens) -> None:
    with open(path, "w", encoding="ascii") as f:
        for t in tokens:
            f.write(f"{int(t)}\n")


def load_token_stream(path) -> list[int]:
    with open(path, "r", encoding="ascii") as f:
        return [int(line) for line in f if line.strip()]

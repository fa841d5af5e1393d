"""Tests for mixing, shield padding, flooding detection, and interleaving."""

import math

import numpy as np
import pytest

from gelo import protocol
from gelo.errors import ConditioningError, DimensionError, ParameterError
from gelo.numerics import MixingMatrix, sample_invertible, sample_orthogonal
from gelo.protocol import (
    HiddenBatch,
    LayerPolicy,
    MixingSession,
    ShieldConfig,
    deinterleave,
    detect_flooding,
    interleave_users,
    mix,
    pad_shields,
    shield_count,
    strip_shields,
    unmix,
)


def batch_of(rng, n, d):
    return HiddenBatch(h=rng.standard_normal((n, d)))


# ---------------------------------------------------------------------------
# mix / unmix
# ---------------------------------------------------------------------------


def test_mix_identity_matrix():
    rng = np.random.default_rng(0)
    b = batch_of(rng, 6, 4)
    ident = MixingMatrix(matrix=np.eye(6), kind="orthogonal", seed=0, condition=1.0)
    out = mix(ident, b)
    assert np.array_equal(out.u, b.h)
    assert out.n == b.n


def test_mix_permutation_matrix():
    rng = np.random.default_rng(1)
    b = batch_of(rng, 4, 3)
    p = np.eye(4)[[2, 0, 3, 1]]
    pm = MixingMatrix(matrix=p, kind="orthogonal", seed=0, condition=1.0)
    out = mix(pm, b)
    assert np.array_equal(out.u, b.h[[2, 0, 3, 1]])


def test_mix_fresh_batch_ids():
    rng = np.random.default_rng(2)
    b = batch_of(rng, 3, 3)
    ident = MixingMatrix(matrix=np.eye(3), kind="orthogonal", seed=0, condition=1.0)
    ids = {mix(ident, b).batch_id for _ in range(10)}
    assert len(ids) == 10


def test_mix_dimension_mismatch():
    rng = np.random.default_rng(3)
    b = batch_of(rng, 5, 3)
    a = sample_orthogonal(4, seed=0)
    with pytest.raises(DimensionError):
        mix(a, b)


def test_unmix_orthogonal_roundtrip():
    rng = np.random.default_rng(4)
    b = batch_of(rng, 64, 32)
    a = sample_orthogonal(64, seed=9)
    u = mix(a, b)
    h2 = unmix(a, u.u)
    assert np.linalg.norm(h2 - b.h) / np.linalg.norm(b.h) <= 1e-10


def test_unmix_general_after_gemm():
    rng = np.random.default_rng(5)
    b = batch_of(rng, 48, 24)
    w = rng.standard_normal((24, 16))
    a = sample_invertible(48, kappa_max=100.0, seed=10)
    u = mix(a, b)
    y = u.u @ w
    q = unmix(a, y)
    ref = b.h @ w
    assert np.linalg.norm(q - ref) / np.linalg.norm(ref) <= 1e-8


def test_unmix_refuses_ill_conditioned():
    bad = MixingMatrix(
        matrix=np.diag([1.0, 1e-4]), kind="general", seed=0, condition=1e4
    )
    with pytest.raises(ConditioningError):
        unmix(bad, np.ones((2, 2)), max_condition=100.0)
    # explicit opt-out skips the check
    unmix(bad, np.ones((2, 2)), max_condition=None)


# ---------------------------------------------------------------------------
# shields
# ---------------------------------------------------------------------------


def test_shield_count_examples():
    assert shield_count(243, 0.05) == 13  # 243 data + 13 shields = 256 rows
    assert shield_count(100, 0.0) == 0
    assert shield_count(243, 0.05) + 243 == 256


def test_pad_shields_fraction_zero():
    rng = np.random.default_rng(6)
    b = batch_of(rng, 10, 4)
    out = pad_shields(b, ShieldConfig(fraction=0.0, scale=10.0, seed=1))
    assert np.array_equal(out.h, b.h)
    assert not out.shield_mask.any()


def test_pad_shields_counts_and_mask():
    rng = np.random.default_rng(7)
    b = batch_of(rng, 243, 16)
    out = pad_shields(b, ShieldConfig(fraction=0.05, scale=10.0, seed=2))
    assert out.n == 256
    assert out.shield_mask.sum() == 13
    assert not out.shield_mask[:243].any()
    assert out.shield_mask[243:].all()


def test_pad_shields_norms_exact():
    rng = np.random.default_rng(8)
    b = batch_of(rng, 100, 32)
    cfg = ShieldConfig(fraction=0.05, scale=7.0, seed=3)
    out = pad_shields(b, cfg)
    mean_norm = np.linalg.norm(b.h, axis=1).mean()
    target = 7.0 * mean_norm
    shield_norms = np.linalg.norm(out.h[out.shield_mask], axis=1)
    assert np.all(shield_norms >= 0.999 * target)
    assert np.all(shield_norms <= 1.001 * target)


def test_pad_shields_token_ids_none_for_shields():
    rng = np.random.default_rng(9)
    b = HiddenBatch(h=rng.standard_normal((20, 8)), token_ids=list(range(20)))
    out = pad_shields(b, ShieldConfig(fraction=0.1, scale=4.0, seed=4))
    k = int(out.shield_mask.sum())
    assert out.token_ids[:20] == list(range(20))
    assert all(t is None for t in out.token_ids[20:])
    assert len(out.token_ids) == 20 + k


def test_pad_shields_deterministic():
    rng = np.random.default_rng(10)
    b = batch_of(rng, 50, 8)
    cfg = ShieldConfig(fraction=0.05, scale=10.0, seed=77)
    a = pad_shields(b, cfg)
    c = pad_shields(b, cfg)
    assert np.array_equal(a.h, c.h)


def test_pad_shields_rejects_double_padding():
    rng = np.random.default_rng(11)
    b = batch_of(rng, 30, 8)
    cfg = ShieldConfig(fraction=0.1, scale=5.0, seed=5)
    once = pad_shields(b, cfg)
    with pytest.raises(ParameterError):
        pad_shields(once, cfg)


def test_gram_sum_identity_under_orthogonal_mixing():
    # U^T U = H^T H + S^T S when [H; S] is mixed orthogonally.
    rng = np.random.default_rng(12)
    b = batch_of(rng, 60, 24)
    padded = pad_shields(b, ShieldConfig(fraction=0.05, scale=10.0, seed=6))
    a = sample_orthogonal(padded.n, seed=7)
    u = mix(a, padded).u
    s = padded.h[padded.shield_mask]
    lhs = u.T @ u
    rhs = b.h.T @ b.h + s.T @ s
    rel = np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)
    assert rel <= 1e-9


def test_strip_shields_roundtrip():
    rng = np.random.default_rng(13)
    b = batch_of(rng, 40, 12)
    padded = pad_shields(b, ShieldConfig(fraction=0.05, scale=10.0, seed=8))
    assert np.array_equal(strip_shields(padded.h, padded.shield_mask), b.h)


def test_mix_unmix_strip_end_to_end():
    rng = np.random.default_rng(14)
    b = batch_of(rng, 96, 32)
    w = rng.standard_normal((32, 8))
    padded = pad_shields(b, ShieldConfig(fraction=0.05, scale=10.0, seed=9))
    a = sample_orthogonal(padded.n, seed=10)
    u = mix(a, padded)
    y = u.u @ w
    q = unmix(a, y)
    got = strip_shields(q, padded.shield_mask)
    ref = b.h @ w
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) <= 1e-10


# ---------------------------------------------------------------------------
# flooding detection
# ---------------------------------------------------------------------------


def test_flooding_matching_baseline_not_flagged():
    baseline = {i: 1.0 / 100 for i in range(100)}
    tokens = list(range(100))
    rep = detect_flooding(tokens, baseline, threshold=1.0)
    assert not rep.flagged
    assert rep.divergence == pytest.approx(0.0, abs=1e-2)
    assert rep.injected == 0
    assert rep.offending_tokens == []


def test_flooding_half_mass_on_one_token():
    baseline = {i: 1.0 / 1000 for i in range(1000)}
    tokens = [0] * 500 + list(range(1, 501))
    rep = detect_flooding(tokens, baseline, threshold=1.0, seed=5)
    assert rep.flagged
    # dominant term: 0.5 * ln(0.5 / 0.001) ~ 3.1
    assert rep.divergence == pytest.approx(3.1, abs=0.1)
    assert rep.injected == math.ceil(0.1 * len(tokens))
    assert len(rep.injected_tokens) == rep.injected
    assert all(t in baseline for t in rep.injected_tokens)
    assert rep.offending_tokens[0][0] == 0
    assert rep.offending_tokens[0][1] == pytest.approx(0.5)


def test_flooding_divergence_monotone_in_concentration():
    baseline = {i: 1.0 / 200 for i in range(200)}
    divs = []
    for conc in [0.2, 0.4, 0.6, 0.8]:
        n = 200
        hot = int(conc * n)
        tokens = [0] * hot + list(range(1, n - hot + 1))
        divs.append(detect_flooding(tokens, baseline, threshold=1e9).divergence)
    assert all(b > a for a, b in zip(divs, divs[1:]))


def test_flooding_out_of_baseline_token_finite():
    baseline = {i: 0.5 for i in range(2)}
    rep = detect_flooding([999] * 10, baseline, threshold=1.0)
    assert np.isfinite(rep.divergence)
    assert rep.flagged


def test_flooding_validation():
    with pytest.raises(ParameterError):
        detect_flooding([], {0: 1.0})
    with pytest.raises(ParameterError):
        detect_flooding([1], {})
    with pytest.raises(ParameterError):
        detect_flooding([1], {0: 1.0}, threshold=0.0)


# ---------------------------------------------------------------------------
# interleaving
# ---------------------------------------------------------------------------


def test_interleave_round_robin_order():
    u0 = HiddenBatch(h=np.array([[0.0], [1.0]]), token_ids=[100, 101])
    u1 = HiddenBatch(h=np.array([[10.0], [11.0], [12.0]]), token_ids=[200, 201, 202])
    res = interleave_users([u0, u1])
    assert res.batch.h[:, 0].tolist() == [0.0, 10.0, 1.0, 11.0, 12.0]
    assert res.user_of_row.tolist() == [0, 1, 0, 1, 1]
    assert res.batch.token_ids == [100, 200, 101, 201, 202]


def test_interleave_single_user_identity():
    rng = np.random.default_rng(15)
    b = batch_of(rng, 7, 3)
    res = interleave_users([b])
    assert np.array_equal(res.batch.h, b.h)
    assert np.array_equal(res.source_index, np.arange(7))


def test_deinterleave_roundtrip():
    rng = np.random.default_rng(16)
    users = [batch_of(rng, n, 5) for n in (3, 1, 4, 2)]
    res = interleave_users(users)
    concat = np.vstack([b.h for b in users])
    assert np.array_equal(deinterleave(res.batch.h, res.source_index), concat)


def test_interleave_validation():
    with pytest.raises(ParameterError):
        interleave_users([])
    a = HiddenBatch(h=np.ones((2, 3)))
    b = HiddenBatch(h=np.ones((2, 4)))
    with pytest.raises(DimensionError):
        interleave_users([a, b])


# ---------------------------------------------------------------------------
# layer policy / session freshness
# ---------------------------------------------------------------------------


def test_layer_policy_defaults():
    pol = LayerPolicy()
    offloaded = [pol.should_offload(i, 32) for i in range(32)]
    assert offloaded[0] is False and offloaded[1] is False
    assert offloaded[31] is False
    assert all(offloaded[2:31])


def test_layer_policy_bounds():
    with pytest.raises(ParameterError):
        LayerPolicy().should_offload(32, 32)


def test_session_never_reuses_seeds_or_matrices():
    sess = MixingSession(master_seed=1234, kind="orthogonal")
    mats = []
    for _ in range(50):
        bid = sess.next_batch_id()
        mats.append(sess.sample(8, bid))
    assert len(set(sess.seeds_used)) == 50
    for i in range(1, 50):
        assert mats[i] is not mats[i - 1]
        assert not np.array_equal(mats[i].matrix, mats[i - 1].matrix)


def test_session_general_respects_kappa():
    sess = MixingSession(master_seed=99, kind="general", kappa_max=50.0)
    for _ in range(10):
        m = sess.sample(16, sess.next_batch_id())
        assert m.condition < 50.0


def test_session_rejects_unknown_kind():
    with pytest.raises(ParameterError):
        MixingSession(master_seed=0, kind="diagonal")

"""Tests for synthetic hidden-state and token-stream generation."""

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gelo.errors import ParameterError
from gelo.metrics import participation_ratio
from gelo.synthdata import (
    HiddenStatePrior,
    TokenStreamSpec,
    duplicate_report,
    gen_hidden_states,
    gen_token_stream,
    load_dataset,
    load_token_stream,
    save_dataset,
    save_token_stream,
)


# ---------------------------------------------------------------------------
# hidden states
# ---------------------------------------------------------------------------


def test_prior_validation():
    with pytest.raises(ParameterError):
        HiddenStatePrior(d=16, r_eff=17)
    with pytest.raises(ParameterError):
        HiddenStatePrior(d=16, r_eff=0)
    with pytest.raises(ParameterError):
        HiddenStatePrior(radius=0.0)
    with pytest.raises(ParameterError):
        HiddenStatePrior(norm_cv=-0.1)
    with pytest.raises(ParameterError):
        HiddenStatePrior(heavy_tail=-1.0)
    with pytest.raises(ParameterError):
        gen_hidden_states(1, HiddenStatePrior())


def test_isotropic_limit_pr_near_d():
    prior = HiddenStatePrior(d=64, r_eff=64, radius=8.0, norm_cv=0.0, heavy_tail=0.0, seed=3)
    b = gen_hidden_states(4096, prior)
    pr = participation_ratio(b.h)
    assert abs(pr - 64) / 64 <= 0.10


def test_rank_one_limit_pr_near_one():
    prior = HiddenStatePrior(d=32, r_eff=1, radius=5.0, norm_cv=0.0, heavy_tail=0.0, seed=4)
    b = gen_hidden_states(512, prior)
    pr = participation_ratio(b.h)
    assert abs(pr - 1.0) <= 0.10


def test_desk_default_norm_shell_and_pr():
    prior = HiddenStatePrior(seed=11)
    b = gen_hidden_states(512, prior)
    norms = np.linalg.norm(b.h, axis=1)
    assert abs(norms.mean() - 24.0) / 24.0 <= 0.02
    cv = norms.std() / norms.mean()
    assert cv <= 0.05
    pr = participation_ratio(b.h)
    assert abs(pr - 16) / 16 <= 0.10


def test_pr_calibration_across_priors():
    rng = np.random.default_rng(7)
    d = 64
    for i in range(20):
        r_eff = int(rng.integers(4, d // 2 + 1))
        prior = HiddenStatePrior(
            d=d, r_eff=r_eff, radius=10.0, norm_cv=0.039, heavy_tail=0.5, seed=100 + i
        )
        b = gen_hidden_states(8 * d, prior)
        pr = participation_ratio(b.h)
        assert abs(pr - r_eff) / r_eff <= 0.10, (r_eff, pr)


def test_generator_deterministic():
    prior = HiddenStatePrior(seed=21)
    a = gen_hidden_states(64, prior)
    b = gen_hidden_states(64, prior)
    assert np.array_equal(a.h, b.h)
    c = gen_hidden_states(64, HiddenStatePrior(seed=22))
    assert not np.array_equal(a.h, c.h)


def test_heavy_tail_increases_kurtosis():
    # mean kurtosis over the top principal directions exposes the factor law;
    # the norm shell biases both settings equally so only the gap is asserted
    def mean_kurtosis(heavy_tail, seed):
        prior = HiddenStatePrior(
            d=64, r_eff=16, radius=10.0, norm_cv=0.039, heavy_tail=heavy_tail, seed=seed
        )
        b = gen_hidden_states(20000, prior)
        u, s, vt = np.linalg.svd(b.h, full_matrices=False)
        f = b.h @ vt[:8].T
        f = f / f.std(axis=0)
        return float(((f**4).mean(axis=0) - 3.0).mean())

    gaussian = mean_kurtosis(0.0, 31)
    heavy = mean_kurtosis(1.5, 31)
    assert heavy > gaussian + 0.5


def test_factor_law_matches_analytic_kurtosis():
    from gelo.synthdata import _gg_factors

    rng = np.random.default_rng(5)
    for beta in (2.0, 4.0 / 3.0, 1.0):
        x = _gg_factors(rng, 200_000, beta)
        assert abs(float((x**2).mean()) - 1.0) <= 0.02
        expected = (
            math.gamma(5.0 / beta) * math.gamma(1.0 / beta) / math.gamma(3.0 / beta) ** 2
            - 3.0
        )
        assert abs(float((x**4).mean()) - 3.0 - expected) <= 0.15 * (1 + abs(expected))


# ---------------------------------------------------------------------------
# token streams
# ---------------------------------------------------------------------------


def test_stream_spec_validation():
    with pytest.raises(ParameterError):
        TokenStreamSpec(vocab_size=0, length=10)
    with pytest.raises(ParameterError):
        TokenStreamSpec(vocab_size=10, length=0)
    with pytest.raises(ParameterError):
        TokenStreamSpec(vocab_size=10, length=5, special_rate=1.5)
    with pytest.raises(ParameterError):
        TokenStreamSpec(
            vocab_size=10, length=5, special_token_ids=frozenset({11}), special_rate=0.1
        )
    with pytest.raises(ParameterError):
        TokenStreamSpec(vocab_size=10, length=5, special_rate=0.1)


def test_stream_deterministic():
    spec = TokenStreamSpec(vocab_size=1000, length=500, seed=9)
    assert gen_token_stream(spec) == gen_token_stream(spec)


def test_stream_huge_vocab_nearly_duplicate_free():
    spec = TokenStreamSpec(vocab_size=10**7, length=2000, seed=10)
    toks = gen_token_stream(spec)
    overall, _, _ = duplicate_report(toks)
    assert overall <= 0.01


def test_stream_special_rate_drives_duplicate_rate():
    spec = TokenStreamSpec(
        vocab_size=10**7,
        length=100_000,
        special_token_ids=frozenset({0, 1}),
        special_rate=0.16,
        seed=12,
    )
    toks = gen_token_stream(spec)
    overall, filtered, top = duplicate_report(toks, special_ids={0, 1})
    assert abs(overall - 0.16) <= 0.02
    assert filtered < overall
    assert all(t not in (0, 1) for t, _ in top)


def test_stream_repeat_rate_produces_duplicates():
    spec = TokenStreamSpec(vocab_size=10**7, length=20_000, repeat_rate=0.3, seed=13)
    toks = gen_token_stream(spec)
    overall, _, _ = duplicate_report(toks)
    assert overall >= 0.25


# ---------------------------------------------------------------------------
# duplicate report
# ---------------------------------------------------------------------------


def test_duplicate_report_examples():
    overall, filtered, top = duplicate_report([7, 7, 7, 9])
    assert overall == pytest.approx(0.75)
    assert filtered == pytest.approx(0.75)
    assert top == [(7, 3), (9, 1)]

    overall, filtered, top = duplicate_report([1, 2, 3, 4])
    assert overall == 0.0 and filtered == 0.0


def test_duplicate_report_specials_filtered():
    tokens = [0, 0, 0, 5, 6, 6]
    overall, filtered, top = duplicate_report(tokens, special_ids={0})
    assert overall == pytest.approx(5 / 6)  # only 5 is a singleton
    assert filtered == pytest.approx(2 / 3)  # [5, 6, 6]
    assert top == [(6, 2), (5, 1)]


def test_duplicate_report_tie_break_by_token_id():
    _, _, top = duplicate_report([3, 3, 1, 1, 2], top=3)
    assert top == [(1, 2), (3, 2), (2, 1)]


def test_duplicate_report_empty_errors():
    with pytest.raises(ParameterError):
        duplicate_report([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=12), min_size=1, max_size=60))
def test_duplicate_report_matches_counting_oracle(tokens):
    counts = Counter(tokens)
    expected = sum(c for c in counts.values() if c >= 2) / len(tokens)
    overall, _, _ = duplicate_report(tokens)
    assert overall == pytest.approx(expected)


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------


def test_dataset_roundtrip_f64(tmp_path):
    rng = np.random.default_rng(14)
    h = rng.standard_normal((37, 11))
    p = tmp_path / "d.geld"
    save_dataset(p, h, dtype="f64")
    out = load_dataset(p)
    assert out.dtype == np.float64
    assert np.array_equal(out, h)


def test_dataset_roundtrip_f32(tmp_path):
    rng = np.random.default_rng(15)
    h = rng.standard_normal((8, 5))
    p = tmp_path / "d32.geld"
    save_dataset(p, h, dtype="f32")
    out = load_dataset(p)
    assert out.dtype == np.float32
    assert np.allclose(out, h, atol=1e-6)


def test_dataset_bytes_deterministic(tmp_path):
    h = gen_hidden_states(32, HiddenStatePrior(seed=5)).h
    p1, p2 = tmp_path / "a.geld", tmp_path / "b.geld"
    save_dataset(p1, h)
    save_dataset(p2, h)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes()[:4] == b"GELD"


def test_dataset_rejects_corrupt(tmp_path):
    p = tmp_path / "bad.geld"
    p.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(ParameterError):
        load_dataset(p)
    p.write_bytes(b"GE")
    with pytest.raises(ParameterError):
        load_dataset(p)
    save_dataset(p, np.ones((2, 2)))
    data = p.read_bytes()
    p.write_bytes(data[:-8])  # truncate payload
    with pytest.raises(ParameterError):
        load_dataset(p)


def test_token_stream_file_roundtrip(tmp_path):
    toks = [5, 0, 99, 12, 12]
    p = tmp_path / "toks.txt"
    save_token_stream(p, toks)
    assert load_token_stream(p) == toks

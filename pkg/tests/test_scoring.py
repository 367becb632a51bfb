import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from palearn.scoring import (EPS, Pmf, ScoreFileError, classification_confusion_score,
                             classification_confusion_scores, combined_score,
                             diversity_component, entropy_variant_score, hybrid_score,
                             read_score_csv, rotate90, rotate_batch, ssl_confusion_score,
                             ssl_confusion_scores, write_score_csv)
from palearn.core import ScoreRecord


def kl_uniform_oracle(h):
    """-KL(U || h) at 50 digits, clamping like the implementation."""
    mpmath.mp.dps = 50
    c = len(h)
    return float(-sum(mpmath.mpf(1) / c * mpmath.log((mpmath.mpf(1) / c) / max(mpmath.mpf(p), EPS))
                      for p in h))


def test_pmf_uniform_exact():
    for c in (2, 3, 4, 7, 10):
        assert np.all(Pmf.uniform(c).probs == 1.0 / c)


def test_pmf_rejects_bad_input():
    for bad in ([0.5, 0.6], [1.2, -0.2], [], [np.nan, 1.0]):
        with pytest.raises(ValueError):
            Pmf(bad)


# rotation

def test_rotate_identity_and_group():
    x = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(rotate90(x, 0), x)
    y = x
    for _ in range(4):
        y = rotate90(y, 1)
    assert np.array_equal(y, x)


def test_rotate_direction_counter_clockwise():
    a, b, c, d = 1, 2, 3, 4
    assert rotate90(np.array([[a, b], [c, d]]), 1).tolist() == [[b, d], [a, c]]


def test_rotate_rejects_non_square():
    with pytest.raises(ValueError):
        rotate90(np.zeros((2, 3)), 1)
    with pytest.raises(ValueError):
        rotate90(np.zeros((2, 2)), 4)


def test_batch_rotation_matches_single():
    rng = np.random.default_rng(0)
    batch = rng.random((5, 6, 6, 2))
    for i in range(4):
        rb = rotate_batch(batch, i)
        for k in range(5):
            assert np.array_equal(rb[k], rotate90(batch[k], i))


# S_S and S_D

def test_ssl_score_all_correct_is_minus_four():
    assert ssl_confusion_score(np.eye(4)) == -4.0


def test_ssl_score_uniform():
    assert ssl_confusion_score(np.full((4, 4), 0.25)) == -1.0


def test_ssl_score_diagonal_sum():
    diag = [0.7, 0.1, 0.6, 0.2]
    p = np.empty((4, 4))
    for i, d in enumerate(diag):
        p[i] = (1 - d) / 3
        p[i, i] = d
    assert ssl_confusion_score(p) == pytest.approx(-1.6, abs=1e-12)


def test_ssl_score_rejects_malformed():
    with pytest.raises(ValueError):
        ssl_confusion_score(np.ones((4, 4)))
    with pytest.raises(ValueError):
        ssl_confusion_score(np.full((3, 4), 0.25))


def test_diversity_component_shares_arithmetic():
    assert diversity_component(np.eye(4)) == -4.0
    assert diversity_component(np.full((4, 4), 0.25)) == -1.0


# S_C

def test_cls_score_uniform_is_zero():
    for c in (2, 3, 5, 10):
        assert classification_confusion_score(Pmf.uniform(c)) == 0.0


def test_cls_score_binary_values():
    # direct evaluation of 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1), negated
    expected = -(0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1))
    assert expected == pytest.approx(-0.5108, abs=1e-4)
    assert classification_confusion_score([0.9, 0.1]) == pytest.approx(expected, abs=1e-12)
    sharp = classification_confusion_score([1 - 1e-6, 1e-6])
    assert sharp == pytest.approx(kl_uniform_oracle([1 - 1e-6, 1e-6]), abs=1e-9)
    assert sharp == pytest.approx(-6.21, abs=5e-3)


def test_cls_score_clamps_zero_probability():
    assert classification_confusion_score([1.0, 0.0]) == pytest.approx(
        -0.5 * math.log(0.5) - 0.5 * math.log(0.5 / EPS))


def test_cls_score_requires_two_classes():
    with pytest.raises(ValueError):
        classification_confusion_score([1.0])


pmfs = arrays(np.float64, st.integers(2, 8), elements=st.floats(0, 1)).filter(
    lambda a: a.sum() > 1e-3).map(lambda a: a / a.sum())


@settings(max_examples=200, deadline=None)
@given(pmfs)
def test_cls_score_nonpositive_and_matches_oracle(h):
    s = classification_confusion_score(h)
    assert s <= 0
    assert s == pytest.approx(kl_uniform_oracle(h), abs=1e-9)


# combinations

def test_hybrid_examples():
    assert hybrid_score(-1.0, -0.5108, 1.0) == pytest.approx(-1.5108)
    assert hybrid_score(-2.5, -7.0, 0.0) == -2.5
    assert hybrid_score(-4.0, 0.0, 3.0) == -4.0
    with pytest.raises(ValueError):
        hybrid_score(-1, -1, -0.1)


def test_combined_examples():
    assert combined_score(-1, -2, -3, 1, 1) == -6
    assert combined_score(-1.3, -0.7, -2.2, 0.5, 0.0) == hybrid_score(-1.3, -0.7, 0.5)
    assert combined_score(-1.3, -0.7, -2.2, 0.0, 0.0) == -1.3


def test_entropy_variant_examples():
    assert entropy_variant_score(-2.0, [0.5, 0.5], 0.7) == pytest.approx(-2.0 + 0.7 * math.log(2))
    assert entropy_variant_score(-2.0, [1.0, 0.0], 1.0) == -2.0
    p = 1e-4
    h = -(1 - p) * math.log(1 - p) - p * math.log(p)
    assert entropy_variant_score(-2.0, [1 - p, p], 1.0) == pytest.approx(-2.0 + h, abs=1e-12)
    assert entropy_variant_score(-2.0, [1 - p, p], 1.0) == pytest.approx(-1.999, abs=5e-5)


@settings(max_examples=200, deadline=None)
@given(pmfs, st.floats(-4, 0), st.floats(0, 5))
def test_entropy_variant_bounded(h, s_ssl, lam):
    v = entropy_variant_score(s_ssl, h, lam)
    assert abs(v - s_ssl) <= lam * math.log(len(h)) + 1e-12


def test_kl_unbounded_while_entropy_bounded():
    prev = 0.0
    for k in range(1, 13):
        h = [1 - 10.0 ** -k, 10.0 ** -k]
        s = classification_confusion_score(h)
        assert s < prev
        prev = s
        assert abs(entropy_variant_score(-2.0, h, 1.0) + 2.0) <= math.log(2)


def test_kl_slope_approaches_half_ln10():
    s = [classification_confusion_score([1 - 10.0 ** -k, 10.0 ** -k]) for k in range(1, 13)]
    for k in range(6, 12):
        step = s[k - 1] - s[k]
        assert step == pytest.approx(math.log(10) / 2, rel=0.05)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 4, 4), elements=st.floats(0.01, 1)))
def test_ssl_range(raw):
    p = raw / raw.sum(axis=2, keepdims=True)
    s = ssl_confusion_scores(p)
    assert np.all(s >= -4) and np.all(s <= 0)


def test_argmax_invariant_to_shift():
    from palearn.selection import top_by_score
    rng = np.random.default_rng(1)
    ids = np.arange(50)
    s = rng.normal(size=50)
    assert np.array_equal(top_by_score(ids, s, 10), top_by_score(ids, s + 3.25, 10))


def test_vectorised_matches_scalar():
    rng = np.random.default_rng(2)
    h = rng.dirichlet(np.ones(5), size=20)
    np.testing.assert_array_equal(classification_confusion_scores(h),
                                  [classification_confusion_score(r) for r in h])


def test_score_csv_roundtrip_and_errors(tmp_path):
    recs = [(ScoreRecord(3, -1.25, -0.5, None, -1.75), 1, 0),
            (ScoreRecord(4, -2.0, -0.1, -3.0, -5.1), 1, 1)]
    path = tmp_path / "s.csv"
    write_score_csv(path, recs)
    rows = read_score_csv(path)
    assert rows[0]["s_div"] is None and rows[1]["s_div"] == -3.0
    assert rows[1]["s_combined"] == -5.1 and rows[1]["subquery"] == 1
    lines = path.read_text().splitlines()
    lines[2] = "4,oops,-0.1,-3.0,-5.1,1,1"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ScoreFileError, match="row 3"):
        read_score_csv(path)

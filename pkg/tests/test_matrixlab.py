import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from orbent.matrixlab import (
    MatrixTuple,
    NormCapExceeded,
    NormDidNotConverge,
    RngStream,
    SemicircleLaw,
    alphabet_matrices,
    evaluate_trace,
    operator_norm,
    quantile_diagonal,
    sample_gue,
    sample_haar_unitary,
    trace_all,
    trace_word,
)
from orbent.ncwords import SELFADJOINT, UNITARY, StarWord, VariableSignature, enumerate_words, parse_word
from orbent.targets import SpectralMeasure


def haar_batch(N, count, seed=0):
    rng = RngStream(seed, 1)
    return [sample_haar_unitary(N, rng.child(t)) for t in range(count)]


# ---------------------------------------------------------------- streams


def test_stream_reproducible_and_independent():
    a = RngStream(5).child(3).generator().standard_normal(4)
    b = RngStream(5).child(3).generator().standard_normal(4)
    c = RngStream(5).child(4).generator().standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(RngStream(5, 1).generator().random(3), RngStream(5, 2).generator().random(3))


# ---------------------------------------------------------------- Haar


def test_haar_u1_uniform_phase():
    angles = np.array([np.angle(u[0, 0]) for u in haar_batch(1, 4000)])
    assert stats.kstest((angles + np.pi) / (2 * np.pi), "uniform").pvalue > 1e-3


def test_haar_u2_character_moments():
    # E|Tr U|^2 = 1, E|Tr U|^4 = 2, E Tr U = 0 on U(2); all from integrating the Weyl density
    us = haar_batch(2, 20000, seed=3)
    tr = np.array([np.trace(u) for u in us])
    assert abs(np.mean(tr)) < 0.05
    assert abs(np.mean(np.abs(tr) ** 2) - 1) < 0.05
    assert abs(np.mean(np.abs(tr) ** 4) - 2) < 0.15


def test_haar_is_unitary():
    for u in haar_batch(17, 5):
        assert np.linalg.norm(u.conj().T @ u - np.eye(17)) < 1e-12


def test_haar_normalized_trace_second_moment():
    N, count = 32, 10000
    vals = np.array([abs(np.trace(u) / N) ** 2 for u in haar_batch(N, count, seed=7)])
    se = vals.std(ddof=1) / math.sqrt(count)
    assert abs(vals.mean() - 1 / N**2) < 3 * se


def test_haar_powers_vanish():
    N, count = 32, 2000
    us = haar_batch(N, count, seed=9)
    for k in (1, 2, 3):
        vals = np.array([np.trace(np.linalg.matrix_power(u, k)) / N for u in us])
        se = np.sqrt(np.mean(np.abs(vals) ** 2) / count)
        assert abs(vals.mean()) < 4 * se


def test_haar_conjugation_invariance():
    # U V0 U* with fixed V0 has the spectrum of V0, so its power traces are those of V0
    v0 = quantile_diagonal(SpectralMeasure.roots_of_unity(4), 16)
    u = sample_haar_unitary(16, RngStream(2))
    w = u @ v0 @ u.conj().T
    for k in range(1, 5):
        assert abs(np.trace(np.linalg.matrix_power(w, k)) - np.trace(np.linalg.matrix_power(v0, k))) < 1e-10


# ---------------------------------------------------------------- GUE


def test_gue_moments():
    A = sample_gue(128, RngStream(1))
    assert np.allclose(A, A.conj().T)
    assert abs(np.trace(A @ A).real / 128 - 1) < 0.05
    B = sample_gue(256, RngStream(2))
    assert abs(np.trace(np.linalg.matrix_power(B, 4)).real / 256 - 2) < 0.1


def test_gue_trace_mean():
    N, count = 64, 100
    vals = [np.trace(sample_gue(N, RngStream(4).child(t))).real / N for t in range(count)]
    assert abs(np.mean(vals)) <= 3 / math.sqrt(N * N * count)


# ---------------------------------------------------------------- quantiles


def test_quantile_roots_exact():
    for m, q in [(3, 4), (5, 2)]:
        V = quantile_diagonal(SpectralMeasure.roots_of_unity(m), m * q)
        for k in range(-7, 8):
            expect = 1.0 if k % m == 0 else 0.0
            assert abs(np.trace(np.linalg.matrix_power(V, k)) / (m * q) - expect) < 1e-12


def test_quantile_point_mass_identity():
    assert np.allclose(quantile_diagonal(SpectralMeasure.point_mass(0.0), 7), np.eye(7))


def test_quantile_haar_bound():
    N = 64
    V = quantile_diagonal(SpectralMeasure.haar(), N)
    for k in range(1, 7):
        assert abs(np.trace(np.linalg.matrix_power(V, k)) / N) <= 2 / N


def test_semicircle_quantile_moments_converge_like_one_over_n():
    law = SemicircleLaw()
    Ns = [32, 64, 128, 256]
    errs = []
    for N in Ns:
        d = np.diagonal(quantile_diagonal(law, N)).real
        errs.append(max(abs(np.mean(d**k) - law.moment(k)) for k in (2, 4, 6)))
    slope = np.polyfit(np.log(Ns), np.log(errs), 1)[0]
    assert slope < -0.9


def test_semicircle_cdf_quantile_inverse():
    law = SemicircleLaw()
    p = np.linspace(0.01, 0.99, 9)
    assert np.allclose(law.cdf(law.quantile(p)), p, atol=1e-12)


# ---------------------------------------------------------------- norms


def test_operator_norm_examples():
    assert operator_norm(np.eye(9)) == 1.0
    assert operator_norm(np.diag([3.0, -1.0])) == 3.0
    assert abs(operator_norm(sample_gue(256, RngStream(3))) - 2) < 0.2


def test_operator_norm_nondiagonal_matches_svd():
    g = np.random.default_rng(0)
    a = g.standard_normal((20, 20)) + 1j * g.standard_normal((20, 20))
    assert abs(operator_norm(a) - np.linalg.svd(a, compute_uv=False)[0]) < 1e-6 * np.linalg.svd(a, compute_uv=False)[0]


def test_operator_norm_nonconvergence_reports_estimate():
    # two nearly equal top singular values: power iteration barely moves
    a = np.array([[0.0, 1.0], [1.0, 0.0]]) + np.diag([1e-7, 0])
    with pytest.raises(NormDidNotConverge) as exc:
        operator_norm(a, rtol=1e-12, max_iter=3)
    assert exc.value.estimate > 0


# ---------------------------------------------------------------- tuples


def test_tuple_validation():
    with pytest.raises(ValueError, match="self-adjoint"):
        MatrixTuple.selfadjoint(np.array([[0, 1], [0, 0]], dtype=complex))
    with pytest.raises(ValueError, match="unitary"):
        MatrixTuple.unitary(2 * np.eye(2))
    with pytest.raises(NormCapExceeded):
        MatrixTuple.selfadjoint(np.diag([3.0, 0.0]), norm_cap=2.0)
    assert MatrixTuple.selfadjoint(np.diag([2.0, 0.0]), norm_cap=2.0).N == 2


def test_tuple_binary_roundtrip():
    T = MatrixTuple(np.stack([sample_gue(5, RngStream(1)), sample_haar_unitary(5, RngStream(2))]), (SELFADJOINT, UNITARY), 7.5)
    back = MatrixTuple.from_bytes(T.to_bytes())
    assert back.kinds == T.kinds and back.norm_cap == 7.5
    assert np.array_equal(back.mats, T.mats)
    with pytest.raises(ValueError):
        MatrixTuple.from_bytes(b"junk" * 8)


# ---------------------------------------------------------------- traces

SIG = VariableSignature.of(("x", SELFADJOINT), ("u", UNITARY))


def test_trace_examples():
    T = MatrixTuple.selfadjoint(np.diag([1.0, -1.0]))
    x = VariableSignature.of(("x", SELFADJOINT))
    assert evaluate_trace(StarWord(), T) == 1
    assert evaluate_trace(parse_word("x x", x), T) == 1
    assert evaluate_trace(parse_word("x", x), T) == 0


def test_trace_uxux_asymptotically_free():
    N = 512
    T = MatrixTuple(np.stack([sample_gue(N, RngStream(1)), sample_haar_unitary(N, RngStream(2))]), (SELFADJOINT, UNITARY))
    assert abs(evaluate_trace(parse_word("u x u* x", SIG), T)) < 0.05


def _random_tuple(seed, N=6):
    return MatrixTuple(np.stack([sample_gue(N, RngStream(seed)), sample_haar_unitary(N, RngStream(seed, 1))]), (SELFADJOINT, UNITARY))


def test_trace_all_matches_word_by_word():
    T = _random_tuple(3)
    words = enumerate_words(SIG, 4)
    fast = trace_all(alphabet_matrices(SIG.alphabet(), list(T.mats)), 4)
    slow = np.array([evaluate_trace(w, T) for w in words])
    assert np.max(np.abs(fast - slow)) < 1e-12


def test_conjugation_invariance_all_words():
    T = _random_tuple(4)
    W = sample_haar_unitary(6, RngStream(9))
    letters = alphabet_matrices(SIG.alphabet(), list(T.mats))
    conj = alphabet_matrices(SIG.alphabet(), list(T.conjugate_by(W).mats))
    assert np.max(np.abs(trace_all(letters, 6) - trace_all(conj, 6))) < 1e-10


def test_conj_argument():
    T = _random_tuple(5)
    W = sample_haar_unitary(6, RngStream(8))
    w = parse_word("x u x u*", SIG)
    assert abs(evaluate_trace(w, T, conj=[W, None]) - trace_word(w.letters, [W @ T[0] @ W.conj().T, T[1]])) < 1e-12
    with pytest.raises(ValueError):
        evaluate_trace(w, T, conj=[W])


word_letters = st.lists(st.tuples(st.integers(0, 1), st.booleans()), min_size=1, max_size=6)


@given(word_letters, st.integers(0, 50))
def test_adjoint_conjugates_trace(letters, seed):
    T = _random_tuple(seed, 4)
    w = StarWord.build(letters, SIG)
    assert abs(evaluate_trace(w.adjoint(), T) - np.conj(evaluate_trace(w, T))) < 1e-10


@given(word_letters, st.integers(0, 50), st.integers(0, 5))
def test_trace_cyclic(letters, seed, k):
    T = _random_tuple(seed, 4)
    w = StarWord.build(letters, SIG)
    assert abs(evaluate_trace(w.rotate(k), T) - evaluate_trace(w, T)) < 1e-10


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        trace_word(((0, False), (1, False)), [np.eye(2), np.eye(3)])

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbent.ncwords import (
    SELFADJOINT,
    UNITARY,
    StarWord,
    VariableSignature,
    canonical_rotation,
    conjugation_expand,
    count_words,
    enumerate_words,
    free_reduce,
    linear_reduce,
    parse_word,
)

X1 = VariableSignature.of(("x", SELFADJOINT))
U1 = VariableSignature.of(("u", UNITARY))
X2 = VariableSignature.of(("x", SELFADJOINT, 2))
MIXED = VariableSignature.of(("x", SELFADJOINT, 2), ("v", UNITARY, 2))


def fmt(words, sig):
    return [w.format(sig) for w in words]


def test_one_selfadjoint_slot():
    assert fmt(enumerate_words(X1, 2), X1) == ["x", "x x"]


def test_one_unitary_slot():
    assert fmt(enumerate_words(U1, 2), U1) == ["u", "u*", "u u", "u u*", "u* u", "u* u*"]


def test_two_selfadjoint_count():
    words = enumerate_words(X2, 3)
    assert len(words) == 14
    assert len(set(words)) == 14


def test_empty_signature_and_degree_zero():
    assert enumerate_words(VariableSignature(), 3) == []
    assert enumerate_words(MIXED, 0) == []
    with pytest.raises(ValueError):
        enumerate_words(MIXED, -1)


def _recursive_count(k: int, d: int) -> int:
    return 0 if d == 0 else k**d + _recursive_count(k, d - 1)


@pytest.mark.parametrize("d", range(5))
def test_count_matches_recursive_counter(d):
    k = len(MIXED.alphabet())
    assert len(enumerate_words(MIXED, d)) == _recursive_count(k, d) == count_words(MIXED, d)


def test_graded_lex_order():
    words = enumerate_words(MIXED, 3)
    degrees = [w.degree for w in words]
    assert degrees == sorted(degrees)
    alpha = MIXED.alphabet()
    for d in (1, 2, 3):
        same = [tuple(alpha.index(l) for l in w.letters) for w in words if w.degree == d]
        assert same == sorted(same)


def test_closed_under_adjoint():
    words = set(enumerate_words(MIXED, 4))
    assert all(w.adjoint() in words for w in words)


def test_star_normalized_on_selfadjoint():
    w = parse_word("x1* v1*", MIXED)
    assert w.letters == ((0, False), (2, True))
    assert w.adjoint().format(MIXED) == "v1 x1"


def test_parse_roundtrip_and_errors():
    w = parse_word("v1 x2 v1* x1", MIXED)
    assert w.format(MIXED) == "v1 x2 v1* x1"
    assert MIXED.word("v2").degree == 1
    with pytest.raises(ValueError, match="unknown letter"):
        parse_word("y", MIXED)
    with pytest.raises(ValueError):
        StarWord.build([(9, False)], MIXED)


def test_duplicate_labels_rejected():
    with pytest.raises(ValueError):
        VariableSignature.of(("x", SELFADJOINT), ("x", UNITARY))
    with pytest.raises(ValueError):
        VariableSignature.of(("x", "hermitian"))


# conjugated alphabet y1, y2 | base x, v1, v2
CONJ = VariableSignature.of(("y", SELFADJOINT, 2))
BASE = VariableSignature.of(("x", SELFADJOINT), ("v", UNITARY, 2))
MAP = {0: (1, 0), 1: (2, 0)}


def test_expand_single():
    y = StarWord.build([(0, False)], CONJ)
    assert conjugation_expand(y, MAP, BASE).format(BASE) == "v1 x v1*"


def test_expand_square_no_simplification():
    yy = StarWord.build([(0, False), (0, False)], CONJ)
    assert conjugation_expand(yy, MAP, BASE).format(BASE) == "v1 x v1* v1 x v1*"


def test_expand_two_groups():
    w = StarWord.build([(0, False), (1, False)], CONJ)
    assert conjugation_expand(w, MAP, BASE).format(BASE) == "v1 x v1* v2 x v2*"


def test_expand_unknown_slot():
    w = StarWord.build([(1, False)], CONJ)
    with pytest.raises(KeyError, match="unknown conjugated variable"):
        conjugation_expand(w, {0: (1, 0)}, BASE, copy={})


letters = st.lists(st.tuples(st.integers(0, 1), st.booleans()), max_size=5)


@given(letters, letters)
def test_expand_multiplicative(a, b):
    w1, w2 = StarWord.build(a, CONJ), StarWord.build(b, CONJ)
    lhs = conjugation_expand(w1 * w2, MAP, BASE)
    rhs = conjugation_expand(w1, MAP, BASE) * conjugation_expand(w2, MAP, BASE)
    assert lhs.letters == rhs.letters


@given(letters)
def test_expand_degree(a):
    w = StarWord.build(a, CONJ)
    assert conjugation_expand(w, MAP, BASE).degree == 3 * w.degree


mixed_letters = st.lists(st.tuples(st.integers(0, 3), st.booleans()), max_size=8)


@given(mixed_letters)
def test_free_reduce_idempotent_and_rotation_canonical(a):
    w = StarWord.build(a, MIXED)
    r = free_reduce(w.letters, MIXED.kinds)
    assert free_reduce(r, MIXED.kinds) == r
    assert len(r) <= len(w.letters)
    c = canonical_rotation(r)
    for k in range(len(r)):
        assert canonical_rotation(r[k:] + r[:k]) == c


def test_linear_reduce_cancels_only_unitaries():
    kinds = MIXED.kinds
    assert linear_reduce(((2, False), (2, True)), kinds) == ()
    assert linear_reduce(((0, False), (0, False)), kinds) == ((0, False), (0, False))
    assert free_reduce(((2, False), (0, False), (2, True)), kinds) == ((0, False),)


def test_rotation():
    w = parse_word("x1 x2 v1", MIXED)
    assert w.rotate(1).format(MIXED) == "x2 v1 x1"
    assert w.rotate(3) == w
    assert list(itertools.islice(enumerate_words(U1, 1), 2)) == [StarWord(((0, False),)), StarWord(((0, True),))]

"""Noncommutative *-monomials over a declared family of indeterminates.

A word is a tuple of letters ``(slot, starred)``.  Slots are flat integer
indices into a :class:`VariableSignature`; a signature groups slots under
labels (``x``, ``v``, ``y1`` ...) and tags each slot as self-adjoint or
unitary.  Stars on self-adjoint slots are erased at construction, nothing
else is simplified symbolically.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

SELFADJOINT = "selfadjoint"
UNITARY = "unitary"
KINDS = (SELFADJOINT, UNITARY)

Letter = tuple[int, bool]


@dataclass(frozen=True)
class VariableGroup:
    label: str
    kinds: tuple[str, ...]

    def __post_init__(self):
        if not self.kinds:
            raise ValueError(f"group {self.label!r} has arity 0")
        for k in self.kinds:
            if k not in KINDS:
                raise ValueError(f"unknown slot kind {k!r} in group {self.label!r}")

    @property
    def arity(self) -> int:
        return len(self.kinds)


@dataclass(frozen=True)
class VariableSignature:
    """Ordered variable groups; slot indices run over all groups in order."""

    groups: tuple[VariableGroup, ...] = ()

    def __post_init__(self):
        labels = [g.label for g in self.groups]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate group labels in {labels}")

    @classmethod
    def of(cls, *specs: tuple[str, Sequence[str] | str, int] | tuple[str, str]) -> "VariableSignature":
        """Build from ``(label, kind[, arity])`` tuples.

        >>> VariableSignature.of(("x", "selfadjoint", 2), ("v", "unitary")).size
        3
        """
        groups = []
        for spec in specs:
            label, kind = spec[0], spec[1]
            arity = spec[2] if len(spec) > 2 else 1
            kinds = (kind,) * arity if isinstance(kind, str) else tuple(kind)
            groups.append(VariableGroup(label, kinds))
        return cls(tuple(groups))

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(k for g in self.groups for k in g.kinds)

    @property
    def size(self) -> int:
        return sum(g.arity for g in self.groups)

    def offset(self, label: str) -> int:
        off = 0
        for g in self.groups:
            if g.label == label:
                return off
            off += g.arity
        raise KeyError(label)

    def group(self, label: str) -> VariableGroup:
        for g in self.groups:
            if g.label == label:
                return g
        raise KeyError(label)

    def slot_names(self) -> list[str]:
        names = []
        for g in self.groups:
            if g.arity == 1:
                names.append(g.label)
            else:
                names.extend(f"{g.label}{j + 1}" for j in range(g.arity))
        return names

    def is_unitary(self, slot: int) -> bool:
        return self.kinds[slot] == UNITARY

    def alphabet(self) -> list[Letter]:
        """Letters available at each word position, in graded-lex order."""
        out: list[Letter] = []
        for slot, kind in enumerate(self.kinds):
            out.append((slot, False))
            if kind == UNITARY:
                out.append((slot, True))
        return out

    def concat(self, other: "VariableSignature") -> "VariableSignature":
        return VariableSignature(self.groups + other.groups)

    def word(self, text: str) -> "StarWord":
        return parse_word(text, self)


@dataclass(frozen=True, order=True)
class StarWord:
    letters: tuple[Letter, ...] = ()
    kinds: tuple[str, ...] = field(default=(), compare=False, repr=False)

    @classmethod
    def build(cls, letters: Iterable[Letter], sig: VariableSignature) -> "StarWord":
        kinds = sig.kinds
        out = []
        for slot, star in letters:
            if not 0 <= slot < len(kinds):
                raise ValueError(f"slot {slot} not declared in signature of size {len(kinds)}")
            out.append((slot, bool(star) and kinds[slot] == UNITARY))
        return cls(tuple(out), kinds)

    @property
    def degree(self) -> int:
        return len(self.letters)

    def __len__(self) -> int:
        return len(self.letters)

    def __mul__(self, other: "StarWord") -> "StarWord":
        return StarWord(self.letters + other.letters, self.kinds or other.kinds)

    def adjoint(self) -> "StarWord":
        letters = tuple(
            (s, (not st) if self._unitary(s) else False) for s, st in reversed(self.letters)
        )
        return StarWord(letters, self.kinds)

    def rotate(self, k: int) -> "StarWord":
        if not self.letters:
            return self
        k %= len(self.letters)
        return StarWord(self.letters[k:] + self.letters[:k], self.kinds)

    def _unitary(self, slot: int) -> bool:
        # words built without a signature carry no kinds; treat starred letters as unitary
        if self.kinds:
            return self.kinds[slot] == UNITARY
        return True

    def format(self, sig: VariableSignature) -> str:
        names = sig.slot_names()
        return " ".join(names[s] + ("*" if st else "") for s, st in self.letters)


EMPTY = StarWord()


def parse_word(text: str, sig: VariableSignature) -> StarWord:
    """Parse whitespace-separated letters such as ``"v1 x2 v1* x1"``."""
    index = {name: i for i, name in enumerate(sig.slot_names())}
    letters = []
    for tok in text.split():
        star = tok.endswith("*")
        name = tok[:-1] if star else tok
        if name not in index:
            raise ValueError(f"unknown letter {tok!r}; declared: {sorted(index)}")
        letters.append((index[name], star))
    return StarWord.build(letters, sig)


def enumerate_words(sig: VariableSignature, max_degree: int) -> list[StarWord]:
    """All normalized words of degree 1..max_degree in graded-lex order."""
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    alphabet = sig.alphabet()
    kinds = sig.kinds
    words = []
    for d in range(1, max_degree + 1):
        for letters in itertools.product(alphabet, repeat=d):
            words.append(StarWord(letters, kinds))
    return words


def count_words(sig: VariableSignature, max_degree: int) -> int:
    k = len(sig.alphabet())
    return sum(k**d for d in range(1, max_degree + 1))


def conjugation_expand(
    word: StarWord,
    mapping: Mapping[int, tuple[int, int]],
    base: VariableSignature,
    copy: Mapping[int, int] | None = None,
) -> StarWord:
    """Rewrite conjugated letters ``y -> u x u*`` over the base alphabet.

    ``mapping`` sends a conjugated slot to ``(unitary_slot, base_slot)``.
    Other letters are copied: through ``copy`` (input slot -> base slot)
    when given, otherwise unchanged for slots below ``base.size``.
    """
    out: list[Letter] = []
    for slot, star in word.letters:
        if slot in mapping:
            u, x = mapping[slot]
            # (u x u*)* = u x* u*
            out.extend([(u, False), (x, star and base.is_unitary(x)), (u, True)])
        elif copy is not None and slot in copy:
            out.append((copy[slot], star))
        elif copy is None and slot < base.size:
            out.append((slot, star))
        else:
            raise KeyError(f"unknown conjugated variable: slot {slot}")
    return StarWord.build(out, base)


def linear_reduce(letters: Sequence[Letter], kinds: Sequence[str]) -> tuple[Letter, ...]:
    """Cancel adjacent ``u u*`` / ``u* u`` pairs of unitary letters."""
    stack: list[Letter] = []
    for s, st in letters:
        if stack and kinds[s] == UNITARY and stack[-1][0] == s and stack[-1][1] != st:
            stack.pop()
        else:
            stack.append((s, st))
    return tuple(stack)


def free_reduce(letters: Sequence[Letter], kinds: Sequence[str]) -> tuple[Letter, ...]:
    """Cancel adjacent ``u u*`` / ``u* u`` pairs, including cyclically.

    Valid under any tracial state since ``U U* = I``; used only to key
    memo tables, never to change the formal word set.
    """
    stack = linear_reduce(letters, kinds)
    # cyclic cancellation
    lo, hi = 0, len(stack) - 1
    while hi > lo:
        (s1, t1), (s2, t2) = stack[lo], stack[hi]
        if s1 == s2 and t1 != t2 and kinds[s1] == UNITARY:
            lo += 1
            hi -= 1
        else:
            break
    return tuple(stack[lo : hi + 1])


def canonical_rotation(letters: tuple) -> tuple:
    """Lexicographically least cyclic rotation."""
    if len(letters) < 2:
        return letters
    return min(letters[k:] + letters[:k] for k in range(len(letters)))

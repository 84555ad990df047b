"""Target moment oracles: semicircular families, spectral measures on the
circle, empirical matrix distributions, and reduced free products of them.
"""

from __future__ import annotations

import bisect
import functools
import json
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .matrixlab import MatrixTuple, trace_word
from .ncwords import (
    SELFADJOINT,
    UNITARY,
    Letter,
    StarWord,
    VariableGroup,
    VariableSignature,
    canonical_rotation,
    conjugation_expand,
    enumerate_words,
    free_reduce,
    linear_reduce,
)

TWO_PI = 2.0 * math.pi
MASS_TOL = 1e-12
DEFAULT_DEGREE_CAP = 12


class DegreeCapExceeded(ValueError):
    pass


# --------------------------------------------------------------------------
# spectral measures on the unit circle


@dataclass(frozen=True)
class SpectralMeasure:
    """Probability measure on the unit circle: atoms plus a cell density.

    ``grid[c]`` is the mass carried by the cell ``[2 pi c / G, 2 pi (c+1) / G)``
    and is spread uniformly in angle over that cell.  Atoms stay symbolic, so
    "has an atom" is decided exactly.
    """

    atoms: tuple[tuple[float, float], ...] = ()
    grid: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        atoms = tuple(sorted((float(a) % TWO_PI, float(m)) for a, m in self.atoms))
        for _, m in atoms:
            if not m > 0:
                raise ValueError(f"atom masses must be > 0, got {m}")
        angles = [a for a, _ in atoms]
        if len(set(angles)) != len(angles):
            raise ValueError("atom angles must be distinct")
        grid = np.asarray(self.grid, dtype=float).ravel()
        if np.any(grid < 0):
            raise ValueError("cell masses must be nonnegative")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "grid", grid)
        if abs(self.total_mass - 1.0) > MASS_TOL:
            raise ValueError(f"measure is not normalized: total mass {self.total_mass!r}")

    # constructors --------------------------------------------------------

    @classmethod
    def haar(cls, cells: int = 4096) -> "SpectralMeasure":
        return cls(grid=np.full(cells, 1.0 / cells))

    @classmethod
    def roots_of_unity(cls, m: int) -> "SpectralMeasure":
        return cls(atoms=tuple((TWO_PI * a / m, 1.0 / m) for a in range(m)))

    @classmethod
    def point_mass(cls, angle: float = 0.0) -> "SpectralMeasure":
        return cls(atoms=((angle, 1.0),))

    @classmethod
    def from_density(cls, density: Callable[[np.ndarray], np.ndarray], cells: int = 4096, order: int = 8) -> "SpectralMeasure":
        """Discretize a density in the angle (w.r.t. d theta); renormalized."""
        x, w = np.polynomial.legendre.leggauss(order)
        h = TWO_PI / cells
        left = np.arange(cells) * h
        pts = left[:, None] + (x[None, :] + 1.0) * (h / 2)
        mass = (np.asarray(density(pts), dtype=float) * w[None, :]).sum(axis=1) * (h / 2)
        if np.any(mass < 0):
            raise ValueError("density must be nonnegative")
        return cls(grid=mass / mass.sum())

    @classmethod
    def from_json(cls, obj: dict | str) -> "SpectralMeasure":
        if isinstance(obj, str):
            obj = json.loads(obj)
        grid = np.asarray(obj.get("grid", []), dtype=float)
        cells = int(obj.get("cells", len(grid)))
        if len(grid) != cells:
            raise ValueError(f"grid has {len(grid)} entries but cells={cells}")
        return cls(atoms=tuple(tuple(a) for a in obj.get("atoms", [])), grid=grid)

    def to_json(self) -> dict:
        return {
            "atoms": [[a, m] for a, m in self.atoms],
            "grid": self.grid.tolist(),
            "cells": self.cells,
        }

    # queries -------------------------------------------------------------

    @property
    def cells(self) -> int:
        return len(self.grid)

    @property
    def total_mass(self) -> float:
        return math.fsum(m for _, m in self.atoms) + math.fsum(self.grid)

    @property
    def has_atoms(self) -> bool:
        return bool(self.atoms)

    def rotated(self, cell_shift: int) -> "SpectralMeasure":
        """Rotate by ``cell_shift`` grid cells (atoms move by the same angle)."""
        if not self.cells:
            raise ValueError("rotation by cells needs a grid")
        shift = TWO_PI * cell_shift / self.cells
        return SpectralMeasure(
            atoms=tuple((a + shift, m) for a, m in self.atoms),
            grid=np.roll(self.grid, cell_shift),
        )

    def coarsened(self, factor: int) -> "SpectralMeasure":
        if self.cells % factor:
            raise ValueError(f"{self.cells} cells not divisible by {factor}")
        return SpectralMeasure(self.atoms, self.grid.reshape(-1, factor).sum(axis=1))

    def moment(self, k: int) -> complex:
        return measure_moment(self, k)

    def angle_quantile(self, p) -> np.ndarray:
        """Generalized inverse of the angle CDF on ``[0, 2 pi)``."""
        pieces = []  # (start angle, is_atom, mass, width)
        h = TWO_PI / self.cells if self.cells else 0.0
        for a, m in self.atoms:
            pieces.append((a, 0, m, 0.0))
        for c, m in enumerate(self.grid):
            if m > 0:
                pieces.append((c * h, 1, float(m), h))
        # an atom sitting on a cell's left edge comes first
        pieces.sort(key=lambda t: (t[0], t[1]))
        cum = np.cumsum([t[2] for t in pieces])
        p = np.atleast_1d(np.asarray(p, dtype=float))
        out = np.empty_like(p)
        for i, q in enumerate(p):
            j = min(bisect.bisect_left(cum, q), len(pieces) - 1)
            start, is_cell, mass, width = pieces[j]
            if is_cell:
                prev = cum[j - 1] if j else 0.0
                out[i] = start + width * min(max((q - prev) / mass, 0.0), 1.0)
            else:
                out[i] = start
        return out


def measure_moment(mu: SpectralMeasure, k: int) -> complex:
    """``integral zeta^k d mu``; grid cells are integrated exactly."""
    k = int(k)
    if k == 0:
        return 1.0 + 0j
    val = sum(m * complex(math.cos(k * a), math.sin(k * a)) for a, m in mu.atoms)
    if mu.cells:
        G = mu.cells
        h = TWO_PI / G
        phases = np.exp(1j * k * h * np.arange(G))
        cell_factor = (np.exp(1j * k * h) - 1.0) / (1j * k * h)
        val += complex(np.dot(mu.grid, phases) * cell_factor)
    return complex(val)


# --------------------------------------------------------------------------
# oracles


class MomentOracle:
    """Memoized tracial state on words over ``signature``.

    Lookups are keyed by the cyclically reduced, least-rotation form of the
    word, which is value-preserving for any tracial state.  ``raw`` bypasses
    both normalization and the memo.
    """

    def __init__(
        self,
        signature: VariableSignature,
        fn: Callable[[StarWord], complex],
        exactness: str = "exact",
        norm_bounds: Sequence[float] | None = None,
    ):
        if exactness not in ("exact", "quadrature", "empirical"):
            raise ValueError(f"unknown exactness tag {exactness!r}")
        self.signature = signature
        self.fn = fn
        self.exactness = exactness
        self.norm_bounds = tuple(norm_bounds) if norm_bounds is not None else (math.inf,) * signature.size
        self._kinds = signature.kinds
        self._memo: dict[tuple, complex] = {}
        self._vectors: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def key(self, letters: Sequence[Letter]) -> tuple:
        return canonical_rotation(free_reduce(letters, self._kinds))

    def __call__(self, word: StarWord) -> complex:
        key = self.key(word.letters)
        if not key:
            return 1.0 + 0j
        with self._lock:
            hit = self._memo.get(key)
        if hit is not None:
            return hit
        val = complex(self.fn(StarWord(key, self._kinds)))
        with self._lock:
            self._memo.setdefault(key, val)
        return val

    def vector(self, max_degree: int) -> np.ndarray:
        """Values on ``enumerate_words(signature, max_degree)``, cached."""
        with self._lock:
            hit = self._vectors.get(max_degree)
        if hit is None:
            hit = np.array([self(w) for w in enumerate_words(self.signature, max_degree)], dtype=complex)
            with self._lock:
                self._vectors[max_degree] = hit
        return hit

    def raw(self, word: StarWord) -> complex:
        if not word.letters:
            return 1.0 + 0j
        return complex(self.fn(word))

    def word(self, text: str) -> StarWord:
        return self.signature.word(text)


@functools.lru_cache(maxsize=None)
def _nc_pairings(colors: tuple) -> int:
    n = len(colors)
    if n == 0:
        return 1
    if n % 2:
        return 0
    total = 0
    first = colors[0]
    for j in range(1, n, 2):
        if colors[j] == first:
            inner = _nc_pairings(colors[1:j])
            if inner:
                total += inner * _nc_pairings(colors[j + 1 :])
    return total


def semicircular_moment(word: StarWord | Sequence[int]) -> float:
    """Number of colour-respecting noncrossing pairings of the letters."""
    if isinstance(word, StarWord):
        colors = tuple(s for s, _ in word.letters)
    else:
        colors = tuple(word)
    return float(_nc_pairings(colors))


def semicircular_oracle(r: int = 1, label: str = "x") -> MomentOracle:
    """Standard free semicircular family of ``r`` variables, ``tau(x_j^2) = 1``."""
    sig = VariableSignature((VariableGroup(label, (SELFADJOINT,) * r),))
    return MomentOracle(sig, semicircular_moment, "exact", (2.0,) * r)


def measure_oracle(mu: SpectralMeasure, label: str = "v") -> MomentOracle:
    """Single unitary with spectral distribution ``mu``."""
    sig = VariableSignature((VariableGroup(label, (UNITARY,)),))

    def fn(word: StarWord) -> complex:
        k = sum(-1 if st else 1 for _, st in word.letters)
        return measure_moment(mu, k)

    tag = "quadrature" if mu.cells else "exact"
    return MomentOracle(sig, fn, tag, (1.0,))


def empirical_oracle(T: MatrixTuple, label: str = "a") -> MomentOracle:
    """Normalized-trace distribution of a concrete matrix tuple."""
    sig = VariableSignature((VariableGroup(label, tuple(T.kinds)),))
    mats = list(T.mats)
    R = T.max_norm() if len(T) else 0.0

    def fn(word: StarWord) -> complex:
        return trace_word(word.letters, mats)

    return MomentOracle(sig, fn, "empirical", (R,) * len(T))


class FreeProduct:
    """Reduced free product of tracial oracles.

    Evaluates by the centering recursion: with alternating blocks
    ``a_1 ... a_k`` and ``c_j = phi(a_j)``, freeness forces
    ``phi(prod (a_j - c_j)) = 0``; expanding expresses ``phi(a_1...a_k)``
    through strictly shorter words.  Cost is exponential in the number of
    non-centred blocks, so words are capped at ``max_degree`` letters.
    """

    def __init__(self, factors: Sequence[MomentOracle], max_degree: int = DEFAULT_DEGREE_CAP, labels: Sequence[str] | None = None):
        if not factors:
            raise ValueError("need at least one factor")
        self.factors = list(factors)
        self.max_degree = max_degree
        groups = []
        seen: set[str] = set()
        self._slot_map: list[tuple[int, int]] = []
        for i, f in enumerate(self.factors):
            for g in f.signature.groups:
                lab = g.label if labels is None else f"{labels[i]}"
                if labels is not None and len(f.signature.groups) > 1:
                    lab = f"{labels[i]}_{g.label}"
                if lab in seen:
                    lab = f"{lab}_{i}"
                seen.add(lab)
                groups.append(VariableGroup(lab, g.kinds))
            for local in range(f.signature.size):
                self._slot_map.append((i, local))
        self.signature = VariableSignature(tuple(groups))
        self._offsets = []
        off = 0
        for f in self.factors:
            self._offsets.append(off)
            off += f.signature.size
        self._memo: dict[tuple, complex] = {}
        self._lock = threading.Lock()

    def color(self, word: StarWord) -> list[tuple[int, Letter]]:
        out = []
        for s, st in word.letters:
            i, local = self._slot_map[s]
            out.append((i, (local, st)))
        return out

    def moment(self, colored: Sequence[tuple[int, Letter]]) -> complex:
        """``phi`` of a word given as ``(factor index, local letter)`` pairs."""
        if len(colored) > self.max_degree:
            raise DegreeCapExceeded(
                f"word degree {len(colored)} exceeds free-product degree cap {self.max_degree}"
            )
        blocks: list[tuple[int, tuple]] = []
        for i, letter in colored:
            if not 0 <= i < len(self.factors):
                raise ValueError(f"factor index {i} out of range")
            if blocks and blocks[-1][0] == i:
                blocks[-1] = (i, blocks[-1][1] + (letter,))
            else:
                blocks.append((i, (letter,)))
        return self._phi(tuple(blocks))

    def __call__(self, word: StarWord) -> complex:
        return self.moment(self.color(word))

    def oracle(self) -> MomentOracle:
        tags = {f.exactness for f in self.factors}
        tag = "empirical" if "empirical" in tags else "quadrature" if "quadrature" in tags else "exact"
        bounds = tuple(b for f in self.factors for b in f.norm_bounds)
        return MomentOracle(self.signature, self, tag, bounds)

    def _factor_value(self, block: tuple[int, tuple]) -> complex:
        i, letters = block
        f = self.factors[i]
        return f(StarWord(letters, f.signature.kinds))

    def _normalize(self, blocks: Sequence[tuple[int, tuple]]) -> tuple:
        out: list[tuple[int, tuple]] = []
        for i, letters in blocks:
            if out and out[-1][0] == i:
                letters = out[-1][1] + letters
                out.pop()
            letters = linear_reduce(letters, self.factors[i].signature.kinds)
            if not letters:
                continue
            if out and out[-1][0] == i:
                prev = out.pop()
                letters = linear_reduce(prev[1] + letters, self.factors[i].signature.kinds)
                if not letters:
                    continue
            out.append((i, letters))
        # traciality: a word whose ends share a colour is a rotation of a shorter block word
        while len(out) > 1 and out[0][0] == out[-1][0]:
            i = out[0][0]
            merged = linear_reduce(out[-1][1] + out[0][1], self.factors[i].signature.kinds)
            out = out[1:-1]
            if merged:
                out = [(i, merged)] + out
            out = list(self._normalize(out)) if out else out
        return tuple(out)

    def _phi(self, blocks: tuple) -> complex:
        blocks = self._normalize(blocks)
        if not blocks:
            return 1.0 + 0j
        if len(blocks) == 1:
            return self._factor_value(blocks[0])
        key = canonical_rotation(blocks)
        with self._lock:
            hit = self._memo.get(key)
        if hit is not None:
            return hit
        k = len(key)
        c = [self._factor_value(b) for b in key]
        nz = [j for j in range(k) if c[j] != 0]
        total = 0j
        # exclusion sets E: nonempty subsets of the non-centred positions
        for mask in range(1, 1 << len(nz)):
            coeff = 1.0 + 0j
            excluded = set()
            for bit, j in enumerate(nz):
                if mask >> bit & 1:
                    coeff *= -c[j]
                    excluded.add(j)
            rest = tuple(key[j] for j in range(k) if j not in excluded)
            total += coeff * self._phi(rest)
        val = -total
        with self._lock:
            self._memo.setdefault(key, val)
        return val


def free_product_moment(
    factors: Sequence[MomentOracle],
    word: Sequence[tuple[int, Letter]],
    max_degree: int = DEFAULT_DEGREE_CAP,
) -> complex:
    return FreeProduct(factors, max_degree).moment(word)


def free_family_oracle(factors: Sequence[MomentOracle], labels: Sequence[str] | None = None, max_degree: int = DEFAULT_DEGREE_CAP) -> MomentOracle:
    return FreeProduct(factors, max_degree, labels).oracle()


@dataclass
class ConjugatedFamily:
    """Alphabet ``(v_1 X v_1*, ..., v_n X v_n*, X, v)`` and its expansion maps."""

    signature: VariableSignature
    base: VariableSignature
    mapping: dict[int, tuple[int, int]]
    copy: dict[int, int]
    r: int
    n: int

    @classmethod
    def build(cls, x_sig: VariableSignature, n: int) -> "ConjugatedFamily":
        kinds = x_sig.kinds
        r = len(kinds)
        if any(k != SELFADJOINT for k in kinds):
            raise ValueError("conjugated family needs a self-adjoint X")
        groups = [VariableGroup(f"y{i + 1}" if n > 1 else "y", kinds) for i in range(n)]
        groups.append(VariableGroup("x", kinds))
        if n:
            groups.append(VariableGroup("v", (UNITARY,) * n))
        sig = VariableSignature(tuple(groups))
        base_groups = [VariableGroup("x", kinds)]
        if n:
            base_groups.append(VariableGroup("v", (UNITARY,) * n))
        base = VariableSignature(tuple(base_groups))
        mapping = {}
        for i in range(n):
            for j in range(r):
                mapping[i * r + j] = (r + i, j)
        copy = {n * r + j: j for j in range(r)}
        for i in range(n):
            copy[n * r + r + i] = r + i
        return cls(sig, base, mapping, copy, r, n)

    def expand(self, word: StarWord) -> StarWord:
        return conjugation_expand(word, self.mapping, self.base, self.copy)

    def without_v(self) -> VariableSignature:
        return VariableSignature(tuple(g for g in self.signature.groups if g.label != "v"))


def conjugated_family_oracle(
    x_oracle: MomentOracle,
    v_measures: Sequence[SpectralMeasure],
    n: int | None = None,
    max_degree: int = DEFAULT_DEGREE_CAP,
    include_v: bool = True,
) -> MomentOracle:
    """Joint law of ``(v_i X v_i*)_i, X, v`` with ``X, v_1, ..., v_n`` free.

    The returned oracle carries the alphabet ``y1..yn, x, v`` (``y`` when
    ``n == 1``); each word is conjugation-expanded and evaluated in the
    free product of ``X`` and the ``v_i``.  With ``include_v=False`` the
    ``v`` letters are dropped from the alphabet.
    """
    n = len(v_measures) if n is None else n
    if n < 1 or n != len(v_measures):
        raise ValueError(f"need n >= 1 matching {len(v_measures)} measures, got n={n}")
    fam = ConjugatedFamily.build(x_oracle.signature, n)
    # the cap applies to input words; expansion triples conjugated letters
    fp = FreeProduct([x_oracle] + [measure_oracle(mu) for mu in v_measures], 3 * max_degree)

    def fn(word: StarWord) -> complex:
        if word.degree > max_degree:
            raise DegreeCapExceeded(f"word degree {word.degree} exceeds degree cap {max_degree}")
        return fp(fam.expand(word))

    tag = "quadrature" if any(mu.cells for mu in v_measures) else x_oracle.exactness
    bounds = tuple(x_oracle.norm_bounds) * (n + 1)
    sig = fam.signature
    if include_v:
        bounds += (1.0,) * n
    else:
        sig = fam.without_v()
    oracle = MomentOracle(sig, fn, tag, bounds)
    oracle.family = fam
    return oracle

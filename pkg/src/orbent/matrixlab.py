"""Matrix tuples, random ensembles and normalized-trace evaluation of words."""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .ncwords import SELFADJOINT, UNITARY, KINDS, Letter, StarWord

SA_TOL = 1e-10
UNITARY_TOL = 1e-8
NORM_TOL = 1e-8


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream addressed by ``(seed, stream_id, *path)``.

    Streams with distinct ids are statistically independent; identical ids
    reproduce identical draws no matter which thread consumes them.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def child(self, i: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + (int(i),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(int(self.stream_id),) + self.path,
        )
        return np.random.default_rng(ss)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


class NormCapExceeded(ValueError):
    pass


@dataclass
class MatrixTuple:
    """Slots of N x N complex matrices tagged self-adjoint or unitary.

    A finite ``norm_cap`` is enforced by rejection: construction raises
    :class:`NormCapExceeded` instead of clipping.
    """

    mats: np.ndarray
    kinds: tuple[str, ...]
    norm_cap: float = math.inf
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        mats = np.asarray(self.mats, dtype=complex)
        if mats.ndim == 2:
            mats = mats[None]
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError(f"expected (k, N, N) stack, got shape {mats.shape}")
        self.mats = mats
        self.kinds = tuple(self.kinds)
        if len(self.kinds) != mats.shape[0]:
            raise ValueError(f"{len(self.kinds)} kinds for {mats.shape[0]} slots")
        for k in self.kinds:
            if k not in KINDS:
                raise ValueError(f"unknown slot kind {k!r}")
        if self.check:
            self.validate()

    @classmethod
    def selfadjoint(cls, *mats, norm_cap=math.inf) -> "MatrixTuple":
        return cls(np.stack(mats), (SELFADJOINT,) * len(mats), norm_cap)

    @classmethod
    def unitary(cls, *mats) -> "MatrixTuple":
        return cls(np.stack(mats), (UNITARY,) * len(mats))

    @property
    def N(self) -> int:
        return self.mats.shape[1]

    def __len__(self) -> int:
        return self.mats.shape[0]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.mats[i]

    def validate(self) -> None:
        eye = np.eye(self.N)
        for i, (a, kind) in enumerate(zip(self.mats, self.kinds)):
            if kind == SELFADJOINT:
                scale = max(np.linalg.norm(a), 1.0)
                if np.linalg.norm(a - a.conj().T) > SA_TOL * scale:
                    raise ValueError(f"slot {i} is not self-adjoint")
            elif np.linalg.norm(a.conj().T @ a - eye, 2) > UNITARY_TOL:
                raise ValueError(f"slot {i} is not unitary")
        if math.isfinite(self.norm_cap):
            for i, a in enumerate(self.mats):
                nrm = operator_norm(a)
                if nrm > self.norm_cap + NORM_TOL:
                    raise NormCapExceeded(f"slot {i} has norm {nrm:.6g} > cap {self.norm_cap}")

    def max_norm(self) -> float:
        return max((operator_norm(a) for a in self.mats), default=0.0)

    def conjugate_by(self, u: np.ndarray) -> "MatrixTuple":
        mats = u[None] @ self.mats @ u.conj().T[None]
        return MatrixTuple(mats, self.kinds, self.norm_cap, check=False)

    # binary container: magic, N, slot count, kind bytes, row-major complex128 payload
    _MAGIC = b"ORBMT1\0\0"

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(self._MAGIC)
        buf.write(struct.pack("<qqd", self.N, len(self), self.norm_cap))
        buf.write(bytes(1 if k == UNITARY else 0 for k in self.kinds))
        buf.write(np.ascontiguousarray(self.mats, dtype="<c16").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "MatrixTuple":
        if data[:8] != cls._MAGIC:
            raise ValueError("not a matrix tuple container")
        n, k, cap = struct.unpack_from("<qqd", data, 8)
        off = 8 + struct.calcsize("<qqd")
        kinds = tuple(UNITARY if b else SELFADJOINT for b in data[off : off + k])
        off += k
        mats = np.frombuffer(data, dtype="<c16", count=k * n * n, offset=off).reshape(k, n, n)
        return cls(mats.copy(), kinds, cap, check=False)


def sample_haar_unitary(N: int, rng) -> np.ndarray:
    """Haar unitary via QR of a complex Ginibre matrix with phase correction."""
    if N < 1:
        raise ValueError("N must be >= 1")
    g = _as_generator(rng)
    z = (g.standard_normal((N, N)) + 1j * g.standard_normal((N, N))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    # without this the law of q depends on the QR sign convention and is not Haar
    return q * (d / np.abs(d))[None, :]


def sample_gue(N: int, rng) -> np.ndarray:
    """GUE matrix normalized so that ``tr_N(A^2) -> 1``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    g = _as_generator(rng)
    z = (g.standard_normal((N, N)) + 1j * g.standard_normal((N, N))) / math.sqrt(2.0)
    h = (z + z.conj().T) / math.sqrt(2.0)
    return h / math.sqrt(N)


class LineMeasure(Protocol):
    def quantile(self, p: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class SemicircleLaw:
    """Semicircle law of variance ``radius**2 / 4`` centred at 0."""

    radius: float = 2.0

    def cdf(self, x):
        t = np.clip(np.asarray(x, dtype=float) / self.radius, -1.0, 1.0)
        return 0.5 + (t * np.sqrt(1 - t * t) + np.arcsin(t)) / math.pi

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        lo = np.full_like(p, -self.radius)
        hi = np.full_like(p, self.radius)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def moment(self, k: int) -> float:
        if k % 2:
            return 0.0
        return math.comb(k, k // 2) / (k // 2 + 1) * (self.radius / 2) ** k


def quantile_diagonal(mu, N: int) -> np.ndarray:
    """Diagonal matrix of midpoint quantiles ``(j - 1/2)/N`` of ``mu``.

    Circle measures (anything with ``angle_quantile``) give unitary
    ``diag(exp(i theta_j))``; line measures give real diagonals.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    p = (np.arange(N) + 0.5) / N
    if hasattr(mu, "angle_quantile"):
        return np.diag(np.exp(1j * mu.angle_quantile(p)))
    return np.diag(np.asarray(mu.quantile(p), dtype=float)).astype(complex)


class NormDidNotConverge(ArithmeticError):
    def __init__(self, estimate: float):
        super().__init__(f"power iteration did not converge; best estimate {estimate!r}")
        self.estimate = estimate


def operator_norm(a: np.ndarray, rtol: float = 1e-6, max_iter: int = 500) -> float:
    """Largest singular value by power iteration on ``A* A``.

    Deterministic start vector; raises :class:`NormDidNotConverge` carrying
    the best estimate after ``max_iter`` steps.
    """
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    if np.allclose(a, np.diag(np.diagonal(a)), rtol=0, atol=0):
        return float(np.max(np.abs(np.diagonal(a))))
    n = a.shape[1]
    x = np.ones(n, dtype=complex) + 1j * np.linspace(0.1, 1.0, n)
    x /= np.linalg.norm(x)
    est = 0.0
    ah = a.conj().T
    for _ in range(max_iter):
        ax = a @ x
        new = float(np.linalg.norm(ax))
        if new == 0.0:
            return 0.0
        if abs(new - est) <= 1e-3 * rtol * new:
            return new
        est = new
        y = ah @ ax
        x = y / np.linalg.norm(y)
    raise NormDidNotConverge(est)


def _letter_matrix(letter: Letter, mats: Sequence[np.ndarray], cache: dict) -> np.ndarray:
    m = cache.get(letter)
    if m is None:
        slot, star = letter
        m = mats[slot].conj().T if star else mats[slot]
        cache[letter] = m
    return m


def _resolve_slots(T: MatrixTuple, conj) -> list[np.ndarray]:
    if conj is None:
        return list(T.mats)
    if len(conj) != len(T):
        raise ValueError(f"conjugation list has {len(conj)} entries for {len(T)} slots")
    out = []
    for a, u in zip(T.mats, conj):
        if u is None:
            out.append(a)
        else:
            if u.shape != a.shape:
                raise ValueError("dimension mismatch between unitary and slot")
            out.append(u @ a @ u.conj().T)
    return out


def evaluate_trace(word: StarWord, T: MatrixTuple, conj=None) -> complex:
    """Normalized trace ``tr_N`` of the word evaluated on ``T``.

    ``conj`` optionally assigns a unitary (or ``None``) to every slot; such
    slots are evaluated as ``U A U*``.
    """
    mats = _resolve_slots(T, conj)
    return trace_word(word.letters, mats)


def trace_word(letters: Sequence[Letter], mats: Sequence[np.ndarray]) -> complex:
    if not letters:
        return 1.0 + 0j
    n = mats[0].shape[0]
    for slot, _ in letters:
        if not 0 <= slot < len(mats):
            raise ValueError(f"slot {slot} not covered by tuple of {len(mats)} slots")
        if mats[slot].shape != (n, n):
            raise ValueError("dimension mismatch")
    cache: dict = {}
    if len(letters) == 1:
        return complex(np.trace(_letter_matrix(letters[0], mats, cache))) / n
    prod = _letter_matrix(letters[0], mats, cache)
    for letter in letters[1:-1]:
        prod = prod @ _letter_matrix(letter, mats, cache)
    last = _letter_matrix(letters[-1], mats, cache)
    return complex(np.sum(prod * last.T)) / n


def trace_all(letter_mats: Sequence[np.ndarray], max_degree: int) -> np.ndarray:
    """Traces of every word of degree 1..max_degree over the given letters.

    Output order matches :func:`~orbent.ncwords.enumerate_words` when
    ``letter_mats`` follows ``signature.alphabet()``.  Depth-first over the
    word trie: one matrix product per interior node, only the current path
    is held in memory.
    """
    k = len(letter_mats)
    if k == 0 or max_degree < 1:
        return np.empty(0, dtype=complex)
    n = letter_mats[0].shape[0]
    offsets = [0]
    for d in range(1, max_degree + 1):
        offsets.append(offsets[-1] + k**d)
    out = np.empty(offsets[-1], dtype=complex)
    transposed = [m.T for m in letter_mats]

    def visit(prod, depth, lex):
        # prod is the product of a word of length depth with lex rank `lex`
        base = offsets[depth] + lex * k
        if depth + 1 == max_degree:
            for j in range(k):
                out[base + j] = np.sum(prod * transposed[j]) / n
            return
        for j in range(k):
            nxt = prod @ letter_mats[j]
            out[base + j] = np.trace(nxt) / n
            visit(nxt, depth + 1, lex * k + j)

    for j in range(k):
        out[j] = np.trace(letter_mats[j]) / n
        if max_degree > 1:
            visit(letter_mats[j], 1, j)
    return out


def alphabet_matrices(alphabet: Sequence[Letter], mats: Sequence[np.ndarray]) -> list[np.ndarray]:
    cache: dict = {}
    return [_letter_matrix(letter, mats, cache) for letter in alphabet]

"""Membership predicates for matricial / orbital / unitary microstate sets,
the (m, eps)-freeness predicate, and Monte-Carlo Haar volume estimates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .matrixlab import (
    NORM_TOL,
    MatrixTuple,
    RngStream,
    alphabet_matrices,
    operator_norm,
    sample_haar_unitary,
    trace_all,
)
from .ncwords import UNITARY, VariableSignature
from .targets import (
    DEFAULT_DEGREE_CAP,
    DegreeCapExceeded,
    FreeProduct,
    MomentOracle,
    empirical_oracle,
)

BOUNDARY_GUARD = 1e-9


@dataclass(frozen=True)
class MicrostateParams:
    N: int
    m: int
    delta: float
    R: float = math.inf

    def __post_init__(self):
        if self.N < 1 or self.m < 1:
            raise ValueError(f"need N >= 1 and m >= 1, got N={self.N}, m={self.m}")
        if not self.delta > 0 or not self.R > 0:
            raise ValueError(f"need delta > 0 and R > 0, got delta={self.delta}, R={self.R}")

    def replace(self, **kw) -> "MicrostateParams":
        d = dict(N=self.N, m=self.m, delta=self.delta, R=self.R)
        d.update(kw)
        return MicrostateParams(**d)

    def to_json(self) -> dict:
        return {"N": self.N, "m": self.m, "delta": self.delta, "R": _jnum(self.R)}


class Membership(NamedTuple):
    member: bool
    deviation: float

    def near_boundary(self, delta: float) -> bool:
        return abs(self.deviation - delta) < BOUNDARY_GUARD


class PresenceMembership(NamedTuple):
    member: bool
    witness: int | None


def _jnum(x: float):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _check_kinds(sig: VariableSignature, kinds: Sequence[str], what: str) -> None:
    if tuple(kinds) != sig.kinds:
        raise ValueError(f"signature mismatch for {what}: target has {sig.kinds}, got {tuple(kinds)}")


def word_deviation(mats: Sequence[np.ndarray], target: MomentOracle, m: int) -> float:
    """Largest ``|tr_N(h) - tau(h)|`` over all words of degree <= m."""
    letters = alphabet_matrices(target.signature.alphabet(), mats)
    traces = trace_all(letters, m)
    return float(np.max(np.abs(traces - target.vector(m)))) if len(traces) else 0.0


def _verdict(dev: float, delta: float) -> bool:
    return dev < delta


def in_gamma_R(A: MatrixTuple, target: MomentOracle, p: MicrostateParams) -> Membership:
    """``A`` in Gamma_R(X; N, m, delta) including the operator-norm cap."""
    _check_kinds(target.signature, A.kinds, "Gamma_R")
    if A.N != p.N:
        raise ValueError(f"tuple has dimension {A.N}, params say N={p.N}")
    dev = word_deviation(list(A.mats), target, p.m)
    ok = _verdict(dev, p.delta)
    if ok and math.isfinite(p.R):
        ok = all(operator_norm(a) <= p.R + NORM_TOL for a in A.mats)
    return Membership(ok, dev)


def conjugated_slots(U: Sequence[np.ndarray], A: Sequence[MatrixTuple]) -> tuple[list[np.ndarray], list[str]]:
    if len(U) != len(A):
        raise ValueError(f"{len(U)} unitaries for {len(A)} tuples")
    mats, kinds = [], []
    for u, t in zip(U, A):
        if u.shape != (t.N, t.N):
            raise ValueError("dimension mismatch between unitary and tuple")
        uh = u.conj().T
        for a, k in zip(t.mats, t.kinds):
            mats.append(u @ a @ uh)
            kinds.append(k)
    return mats, kinds


def orb_deviation(U, A, target: MomentOracle, m: int, witness: Sequence[np.ndarray] | None = None) -> float:
    mats, kinds = conjugated_slots(U, A)
    if witness is not None:
        mats = mats + list(witness)
        kinds = kinds + [UNITARY] * len(witness)
    _check_kinds(target.signature, kinds, "Gamma_orb")
    return word_deviation(mats, target, m)


def in_gamma_orb(U: Sequence[np.ndarray], A: Sequence[MatrixTuple], target: MomentOracle, p: MicrostateParams) -> Membership:
    """``(U_i)`` in Gamma_orb(X_1..X_n : (A_i); N, m, delta)."""
    if not U:
        raise ValueError("need n >= 1")
    dev = orb_deviation(U, A, target, p.m)
    return Membership(_verdict(dev, p.delta), dev)


def in_gamma_u(V: Sequence[np.ndarray], target: MomentOracle, p: MicrostateParams) -> Membership:
    """``(V_i)`` in Gamma_u(v; N, m, delta)."""
    _check_kinds(target.signature, [UNITARY] * len(V), "Gamma_u")
    dev = word_deviation(list(V), target, p.m)
    return Membership(_verdict(dev, p.delta), dev)


def in_gamma_orb_presence(
    U: Sequence[np.ndarray],
    A: Sequence[MatrixTuple],
    target: MomentOracle,
    witnesses: Sequence[Sequence[np.ndarray]],
    p: MicrostateParams,
) -> PresenceMembership:
    """Orbital membership in presence of ``v``, decided over a witness list.

    Sound but incomplete: ``False`` only means no supplied witness works.
    """
    if not witnesses:
        raise ValueError("empty witness list")
    for idx, w in enumerate(witnesses):
        if orb_deviation(U, A, target, p.m, w) < p.delta:
            return PresenceMembership(True, idx)
    return PresenceMembership(False, None)


def _set_letters(sets: Sequence[MatrixTuple], fp: FreeProduct) -> list[np.ndarray]:
    mats = [a for t in sets for a in t.mats]
    return alphabet_matrices(fp.signature.alphabet(), mats)


def m_eps_free_deviation(sets: Sequence[MatrixTuple], m: int, max_degree: int = DEFAULT_DEGREE_CAP) -> float:
    if m > max_degree:
        raise DegreeCapExceeded(f"word length {m} exceeds free-product degree cap {max_degree}")
    if len(sets) < 2:
        return 0.0
    fp = FreeProduct([empirical_oracle(t, label=f"w{i}") for i, t in enumerate(sets)], max_degree)
    oracle = fp.oracle()
    traces = trace_all(_set_letters(sets, fp), m)
    return float(np.max(np.abs(traces - oracle.vector(m))))


def is_m_eps_free(sets: Sequence[MatrixTuple], m: int, eps: float, max_degree: int = DEFAULT_DEGREE_CAP) -> Membership:
    """Compare ``tr_N`` of every labelled word of length <= m with the free
    product of the sets' own empirical distributions.

    Unitary elements contribute their adjoints as letters too.
    """
    dev = m_eps_free_deviation(sets, m, max_degree)
    return Membership(dev < eps, dev)


def reduce_last_to_identity(U: Sequence[np.ndarray]) -> list[np.ndarray]:
    """``(U_1..U_n) -> (U_n* U_1, ..., U_n* U_{n-1}, I)``."""
    if len(U) < 2:
        raise ValueError("need n >= 2")
    last = U[-1].conj().T
    return [last @ u for u in U[:-1]] + [np.eye(U[-1].shape[0], dtype=complex)]


# --------------------------------------------------------------------------
# volume estimates


@dataclass(frozen=True)
class VolumeEstimate:
    hits: int
    trials: int
    N: int
    confidence: float = 0.95

    @property
    def p_hat(self) -> float:
        return self.hits / self.trials

    @property
    def ci(self) -> tuple[float, float]:
        return clopper_pearson(self.hits, self.trials, self.confidence)

    @property
    def log_proxy(self) -> float:
        return _log_proxy(self.p_hat, self.N)

    @property
    def log_proxy_ci(self) -> tuple[float, float]:
        lo, hi = self.ci
        return _log_proxy(lo, self.N), _log_proxy(hi, self.N)

    def scaled(self, factor: float) -> tuple[float, tuple[float, float]]:
        lo, hi = self.ci
        return self.p_hat * factor, (lo * factor, hi * factor)

    def to_json(self) -> dict:
        lo, hi = self.ci
        llo, lhi = self.log_proxy_ci
        return {
            "trials": self.trials,
            "hits": self.hits,
            "pHat": self.p_hat,
            "ci": [lo, hi],
            "logProxy": _jnum(self.log_proxy),
            "logProxyCI": [_jnum(llo), _jnum(lhi)],
        }

    def record(self, predicate: str, params: MicrostateParams, seed: int, mode: str = "fixed-representative") -> dict:
        out = {"predicate": predicate, "params": params.to_json()}
        out.update(self.to_json())
        out.update(seed=seed, mode=mode)
        return out


def _log_proxy(p: float, N: int) -> float:
    if p <= 0:
        return -math.inf
    return math.log(p) / (N * N)


def clopper_pearson(hits: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Exact binomial interval."""
    if trials < 1 or not 0 <= hits <= trials:
        raise ValueError(f"bad counts hits={hits}, trials={trials}")
    alpha = 1.0 - confidence
    lo = 0.0 if hits == 0 else float(stats.beta.ppf(alpha / 2, hits, trials - hits + 1))
    hi = 1.0 if hits == trials else float(stats.beta.ppf(1 - alpha / 2, hits + 1, trials - hits))
    return lo, hi


def _hit(result) -> bool:
    if isinstance(result, tuple):
        return bool(result[0])
    return bool(result)


def run_trials(fn: Callable[[int, RngStream], object], trials: int, rng: RngStream, threads: int = 1) -> list:
    """Apply ``fn(t, rng.child(t))`` for every trial; order-preserving.

    Each trial owns its substream, so results do not depend on ``threads``.
    """
    if threads <= 1 or trials <= 1:
        return [fn(t, rng.child(t)) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: fn(t, rng.child(t)), range(trials)))


def estimate_volume(
    pred: Callable[[list[np.ndarray]], object],
    k: int,
    p: MicrostateParams,
    trials: int,
    rng: RngStream,
    threads: int = 1,
) -> VolumeEstimate:
    """Haar volume of ``{(U_1..U_k) : pred}`` by hit-or-miss sampling."""
    if trials < 1:
        raise ValueError("trials must be >= 1")

    def one(t: int, stream: RngStream) -> bool:
        g = stream.generator()
        us = [sample_haar_unitary(p.N, g) for _ in range(k)]
        return _hit(pred(us))

    hits = sum(run_trials(one, trials, rng, threads))
    return VolumeEstimate(hits, trials, p.N)


def concentration_volume(A: MatrixTuple, m: int, eps: float, trials: int, rng: RngStream, threads: int = 1) -> VolumeEstimate:
    """Haar probability that ``{A}`` and ``{U A U*}`` are ``(m, eps)``-free."""
    p = MicrostateParams(A.N, m, eps)
    return estimate_volume(lambda us: is_m_eps_free([A, A.conjugate_by(us[0])], m, eps).member, 1, p, trials, rng, threads)

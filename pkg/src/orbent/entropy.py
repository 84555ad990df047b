"""Log-energy of circle measures, chi_u values, and the machinery behind the
lower bound for conjugated orbital entropy: Theta sets, delta' calibration,
free-copy microstates, and the chain-of-volumes experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .matrixlab import (
    MatrixTuple,
    RngStream,
    SemicircleLaw,
    quantile_diagonal,
    sample_gue,
    sample_haar_unitary,
)
from .microstates import (
    MicrostateParams,
    Membership,
    VolumeEstimate,
    _jnum,
    conjugated_slots,
    estimate_volume,
    in_gamma_R,
    in_gamma_u,
    m_eps_free_deviation,
    orb_deviation,
    run_trials,
    word_deviation,
)
from .ncwords import SELFADJOINT, VariableSignature
from .targets import (
    TWO_PI,
    MomentOracle,
    SpectralMeasure,
    conjugated_family_oracle,
    free_family_oracle,
    measure_oracle,
    semicircular_oracle,
)

NEG_INF = -math.inf


# --------------------------------------------------------------------------
# log energy


def _log_kernel_smooth(t: np.ndarray) -> np.ndarray:
    # log(2 sin(t/2) / t), regular at t = 0
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) < 1e-4
    ts = t[small]
    out[small] = -(ts**2) / 24.0 - ts**4 / 2880.0
    tl = t[~small]
    out[~small] = np.log(np.abs(2.0 * np.sin(tl / 2.0)) / np.abs(tl))
    return out


def _log_kernel(t: np.ndarray) -> np.ndarray:
    return np.log(np.abs(2.0 * np.sin(np.asarray(t) / 2.0)))


def cell_pair_kernel(G: int, order: int = 20) -> np.ndarray:
    """Mean of ``log|e^{i a} - e^{i b}|`` over cell pairs at each offset.

    ``K[d]`` averages over ``a`` in cell ``c + d`` and ``b`` in cell ``c``.
    The difference ``a - b`` has a triangular density; the log singularity
    in offsets 0 and +-1 is integrated in closed form.
    """
    if G < 4:
        raise ValueError("need at least 4 cells")
    h = TWO_PI / G
    x, w = np.polynomial.legendre.leggauss(order)
    s = (x + 1.0) * (h / 2)  # nodes on [0, h]
    ws = w * (h / 2)
    K = np.empty(G)
    half = G // 2
    d = np.arange(2, half + 1)
    # smooth offsets: weight (h - s) on each side of d h
    right = _log_kernel(d[:, None] * h + s[None, :])
    left = _log_kernel(d[:, None] * h - s[None, :])
    K[2 : half + 1] = ((right + left) * (h - s)[None, :] * ws[None, :]).sum(axis=1) / h**2
    # offset 0: (2/h^2) int_0^h (h - s)(log s + g(s)) ds
    sing0 = h * h * math.log(h) / 2 - 0.75 * h * h
    K[0] = 2.0 / h**2 * (sing0 + np.sum((h - s) * _log_kernel_smooth(s) * ws))
    # offset 1: (1/h^2)[int_0^h s f(s) ds + int_h^2h (2h - t) f(t) dt]
    sing1 = h * h * math.log(h) / 2 - 0.25 * h * h
    first = sing1 + np.sum(s * _log_kernel_smooth(s) * ws)
    t2 = h + s
    second = np.sum((h - s) * _log_kernel(t2) * ws)
    K[1] = (first + second) / h**2
    K[half + 1 :] = K[1 : G - half][::-1]
    return K


def sigma(mu: SpectralMeasure) -> float:
    """Log energy ``int int log|z - w| dmu dmu``; ``-inf`` if ``mu`` has an atom."""
    if abs(mu.total_mass - 1.0) > 1e-12:
        raise ValueError("unnormalized measure")
    if mu.has_atoms:
        return NEG_INF
    grid = mu.grid
    while len(grid) < 8:
        # a piecewise-uniform measure is unchanged by splitting its cells
        grid = np.repeat(grid / 2.0, 2)
    K = cell_pair_kernel(len(grid))
    # circulant quadratic form m^T C m with C[a, b] = K[(a - b) mod G]
    mhat = np.fft.fft(grid)
    khat = np.fft.fft(K)
    return float(np.real(np.sum(np.abs(mhat) ** 2 * khat)) / len(grid))


def sigma_refinement(density, cells: Sequence[int] = (512, 1024, 2048, 4096)) -> list[tuple[int, float]]:
    """``sigma`` of a density discretized on successively finer grids."""
    return [(G, sigma(SpectralMeasure.from_density(density, G))) for G in cells]


def chi_u_single(mu: SpectralMeasure) -> float:
    return sigma(mu)


def chi_u_free_tuple(mus: Sequence[SpectralMeasure]) -> float:
    """chi_u of a free tuple of unitaries: the sum of single-variable values."""
    vals = [sigma(mu) for mu in mus]
    if any(v == NEG_INF for v in vals):
        return NEG_INF
    return math.fsum(vals)


# --------------------------------------------------------------------------
# experiment setup


def unitary_family_oracle(mus: Sequence[SpectralMeasure]) -> MomentOracle:
    if len(mus) == 1:
        return measure_oracle(mus[0])
    return free_family_oracle([measure_oracle(mu) for mu in mus], labels=[f"v{i + 1}" for i in range(len(mus))])


def semicircle_representative(N: int, r: int = 1, rng: RngStream | None = None) -> MatrixTuple:
    """Quantile-diagonal microstate for ``r`` free semicirculars.

    For ``r > 1`` the extra copies are Haar conjugates of the diagonal.
    """
    d = quantile_diagonal(SemicircleLaw(), N)
    mats = [d]
    if r > 1:
        rng = rng or RngStream(0, 7)
        for j in range(1, r):
            w = sample_haar_unitary(N, rng.child(j))
            mats.append(w @ d @ w.conj().T)
    return MatrixTuple(np.stack(mats), (SELFADJOINT,) * r)


def unitary_witness(mu: SpectralMeasure, N: int, rng: RngStream) -> np.ndarray:
    """Quantile diagonal of ``mu`` rotated by a fresh Haar unitary."""
    d = quantile_diagonal(mu, N)
    w = sample_haar_unitary(N, rng)
    return w @ d @ w.conj().T


@dataclass
class Theorem1Setup:
    x_oracle: MomentOracle
    v_measures: list[SpectralMeasure]
    xi: MatrixTuple
    family: MomentOracle = field(init=False)
    v_oracle: MomentOracle | None = field(init=False)

    def __post_init__(self):
        self.family = conjugated_family_oracle(self.x_oracle, self.v_measures) if self.v_measures else self.x_oracle
        self.v_oracle = unitary_family_oracle(self.v_measures) if self.v_measures else None

    @property
    def n(self) -> int:
        return len(self.v_measures)

    @property
    def N(self) -> int:
        return self.xi.N

    def sample_v(self, rng: RngStream) -> list[np.ndarray]:
        return [unitary_witness(mu, self.N, rng.child(i)) for i, mu in enumerate(self.v_measures)]


# --------------------------------------------------------------------------
# Theta sets and the implication


def theta_membership(V: Sequence[np.ndarray], U: np.ndarray, Xi: MatrixTuple, m: int, delta_prime: float) -> Membership:
    """``{V_1..V_n}`` and ``U Xi U*`` are ``(3m, delta')``-free."""
    if any(v.shape != U.shape for v in V) or U.shape != (Xi.N, Xi.N):
        raise ValueError("dimension mismatch")
    dev = m_eps_free_deviation([MatrixTuple.unitary(*V), Xi.conjugate_by(U)], 3 * m)
    return Membership(dev < delta_prime, dev)


@dataclass(frozen=True)
class ImplicationResult:
    status: str  # "holds" | "violated" | "vacuous"
    premise_deviation: float
    conclusion_deviation: float
    theta_deviation: float
    gamma_u_deviation: float
    gamma_r_deviation: float

    def counterexample_at(self, delta_prime: float, delta: float) -> bool:
        return self.premise_deviation < delta_prime and self.conclusion_deviation >= delta


def _conclusion_unitaries(V, U, mode: str, W=None) -> list[np.ndarray]:
    us = [v @ U for v in V] + [U]
    if mode == "prop1":
        us = [u @ w.conj().T for u, w in zip(us, W)]
    return us


def implication_deviations(setup: Theorem1Setup, V, U, m: int, mode: str = "fixed", W=None, tuples=None) -> ImplicationResult:
    """Premise and conclusion deviations of the conjugation implication."""
    n = setup.n
    xi = setup.xi
    theta = m_eps_free_deviation([MatrixTuple.unitary(*V), xi.conjugate_by(U)], 3 * m)
    du = word_deviation(list(V), setup.v_oracle, 3 * m)
    dr = word_deviation(list(xi.mats), setup.x_oracle, m)
    us = _conclusion_unitaries(V, U, mode, W)
    A = tuples if tuples is not None else [xi] * (n + 1)
    dc = orb_deviation(us, A, setup.family, m, witness=V)
    return ImplicationResult("", max(theta, du, dr), dc, theta, du, dr)


def eq5_implication_check(setup: Theorem1Setup, V, U, m: int, delta_prime: float, delta: float, mode: str = "fixed", W=None, tuples=None) -> ImplicationResult:
    """Does premise(delta') imply the orbital conclusion(delta) here?

    The premise is Theta membership, ``V`` in Gamma_u(v; N, 3m, delta') and
    ``Xi`` in Gamma_R(X; N, m, delta').  Failing it gives ``"vacuous"``.
    """
    r = implication_deviations(setup, V, U, m, mode, W, tuples)
    if not r.premise_deviation < delta_prime:
        status = "vacuous"
    elif r.conclusion_deviation < delta:
        status = "holds"
    else:
        status = "violated"
    return ImplicationResult(status, *[getattr(r, f) for f in ("premise_deviation", "conclusion_deviation", "theta_deviation", "gamma_u_deviation", "gamma_r_deviation")])


class CalibrationFailed(RuntimeError):
    def __init__(self, message: str, worst: ImplicationResult | None):
        super().__init__(message)
        self.worst = worst


@dataclass(frozen=True)
class DeltaPrime:
    value: float
    support: int  # calibration instances satisfying the premise at `value`
    instances: int
    iterations: int

    def to_json(self) -> dict:
        return {
            "deltaPrime": self.value,
            "support": self.support,
            "instances": self.instances,
            "calibration": "empirical",
        }


def calibration_instances(setup: Theorem1Setup, m: int, trials: int, rng: RngStream, threads: int = 1) -> list[ImplicationResult]:
    def one(t: int, stream: RngStream) -> ImplicationResult:
        V = setup.sample_v(stream.child(0))
        U = sample_haar_unitary(setup.N, stream.child(1))
        return implication_deviations(setup, V, U, m)

    return run_trials(one, trials, rng, threads)


def choose_delta_prime(
    setup: Theorem1Setup,
    p: MicrostateParams,
    calibration_trials: int,
    rng: RngStream,
    iterations: int = 8,
    require_support: bool = False,
    threads: int = 1,
    instances: list[ImplicationResult] | None = None,
) -> DeltaPrime:
    """Largest bisection point ``delta' <= delta`` with no sampled counterexample.

    Calibration instances are ``(V, U)`` with ``V_i`` rotated quantile
    diagonals of ``mu_{v_i}`` and ``U`` Haar.  A counterexample at ``delta'``
    satisfies the premise with slack ``delta'`` but misses the conclusion at
    ``delta``.  With ``require_support`` a point is accepted only if some
    instance actually satisfies its premise.
    """
    if calibration_trials < 1:
        raise ValueError("calibration_trials must be >= 1")
    if instances is None:
        instances = calibration_instances(setup, p.m, calibration_trials, rng, threads)
    delta = p.delta

    def support(dp: float) -> int:
        return sum(r.premise_deviation < dp for r in instances)

    def counterexamples(dp: float) -> list[ImplicationResult]:
        return [r for r in instances if r.counterexample_at(dp, delta)]

    def accepted(dp: float) -> bool:
        return not counterexamples(dp) and (support(dp) > 0 or not require_support)

    if accepted(delta):
        return DeltaPrime(delta, support(delta), len(instances), 0)
    lo, hi, best = 0.0, delta, None
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if accepted(mid):
            best = mid
            lo = mid
        elif counterexamples(mid):
            hi = mid
        else:
            # no counterexample but no support either: look higher
            lo = mid
    if best is None:
        bad = counterexamples(delta)
        worst = min(bad, key=lambda r: r.premise_deviation) if bad else min(instances, key=lambda r: r.premise_deviation)
        raise CalibrationFailed(f"no delta' accepted down to delta/2^{iterations} = {delta / 2**iterations:.3g}", worst)
    return DeltaPrime(best, support(best), len(instances), iterations)


def build_free_copy_microstates(Xi: MatrixTuple, count: int, rng: RngStream) -> tuple[list[MatrixTuple], list[np.ndarray]]:
    """``W_i Xi W_i*`` for independent Haar ``W_i``; returns tuples and the ``W_i``."""
    if count < 2:
        raise ValueError("count must be >= 2")
    ws = [sample_haar_unitary(Xi.N, rng.child(i)) for i in range(count)]
    return [Xi.conjugate_by(w) for w in ws], ws


# --------------------------------------------------------------------------
# the chain experiment


@dataclass
class Theorem1Config:
    N: int = 64
    m: int = 3
    delta: float = 0.15
    v_measures: list[SpectralMeasure] = field(default_factory=lambda: [SpectralMeasure.haar()])
    r: int = 1
    trials: int = 200
    chain_trials: int = 40
    calibration_trials: int = 16
    witnesses: int = 8
    mode: str = "fixed"  # or "prop1"
    seed: int = 0
    threads: int = 1
    delta_prime: float | None = None
    require_support: bool = False

    def __post_init__(self):
        if self.mode not in ("fixed", "prop1"):
            raise ValueError(f"unknown mode {self.mode!r}")


def compare(lower: tuple[float, tuple[float, float]], upper: tuple[float, tuple[float, float]]) -> str:
    """CI-aware verdict for ``lower <= upper``."""
    (_, (llo, lhi)), (_, (ulo, uhi)) = lower, upper
    if lhi < ulo:
        return "separated"
    if llo > uhi:
        return "violated"
    return "consistent"


def _est(v: VolumeEstimate, factor: float = 1.0) -> tuple[float, tuple[float, float]]:
    return v.scaled(factor)


@dataclass
class Theorem1Report:
    params: dict
    chi_u: float
    delta_prime: DeltaPrime | None = None
    xi_deviation: float = float("nan")
    lhs: VolumeEstimate | None = None  # Gamma_orb presence volume, n+1 unitaries
    gamma_u: VolumeEstimate | None = None  # Gamma_u(v; N, 2m, delta')
    theta: VolumeEstimate | None = None  # Theta cap Gamma_u(3m) x U(N)
    implication: VolumeEstimate | None = None  # pairs whose transform lands in Gamma_orb, witness V
    verdicts: dict = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = {
            "params": self.params,
            "chiU": _jnum(self.chi_u),
            "xiDeviation": self.xi_deviation,
            "verdicts": self.verdicts,
            "errors": self.errors,
        }
        if self.delta_prime is not None:
            out["deltaPrime"] = self.delta_prime.to_json()
        for name in ("lhs", "gamma_u", "theta", "implication"):
            est = getattr(self, name)
            if est is not None:
                out[name] = est.to_json()
        if self.lhs is not None:
            # presence membership is decided over finitely many witnesses
            out["lhsDecision"] = "witness-list: lower bound, false negatives possible"
        if self.gamma_u is not None:
            half, ci = _est(self.gamma_u, 0.5)
            out["halfGammaU"] = {"pHat": half, "ci": list(ci)}
        return out


def run_theorem1_experiment(cfg: Theorem1Config, x_oracle: MomentOracle | None = None) -> Theorem1Report:
    """Estimate the volume chain at one ``(N, m, delta)`` point.

    Terms: ``a = 1/2 vol Gamma_u(v; 2m, delta')``, ``b = vol(Theta cap
    Gamma_u(3m) x U)``, ``c = vol{(V, U) : transform in Gamma_orb, witness V}``
    and ``lhs = vol Gamma_orb(... : v)``.  Sub-failures are recorded and the
    remaining terms still computed.
    """
    x_oracle = x_oracle or semicircular_oracle(cfg.r)
    rng = RngStream(cfg.seed)
    N, m, delta = cfg.N, cfg.m, cfg.delta
    n = len(cfg.v_measures)
    p = MicrostateParams(N, m, delta)
    xi = semicircle_representative(N, x_oracle.signature.size, rng.child(90))
    setup = Theorem1Setup(x_oracle, list(cfg.v_measures), xi)
    chi = chi_u_free_tuple(cfg.v_measures) if n else 0.0
    report = Theorem1Report(
        params={"N": N, "m": m, "delta": delta, "n": n, "mode": cfg.mode, "trials": cfg.trials,
                "chainTrials": cfg.chain_trials, "seed": cfg.seed},
        chi_u=chi,
    )
    report.xi_deviation = in_gamma_R(xi, x_oracle, p).deviation

    if n == 0:
        report.lhs = estimate_volume(lambda us: orb_deviation(us, [xi], x_oracle, m) < delta, 1, p, cfg.trials, rng.child(1), cfg.threads)
        report.verdicts["n0_volume_one"] = report.lhs.hits == report.lhs.trials
        return report

    # A_i representatives: Xi repeated, or free copies W_i Xi W_i* in prop1 mode
    W = None
    tuples = [xi] * (n + 1)
    if cfg.mode == "prop1":
        tuples, W = build_free_copy_microstates(xi, n + 1, rng.child(2))

    witness_list = [setup.sample_v(rng.child(3).child(j)) for j in range(cfg.witnesses)]

    def orbit_witness(us):
        last = us[-1] if W is None else us[-1] @ W[-1]
        return [(u if W is None else u @ w) @ last.conj().T for u, w in zip(us[:-1], W or [None] * n)]

    def lhs_pred(us):
        for wit in [orbit_witness(us)] + witness_list:
            if orb_deviation(us, tuples, setup.family, m, witness=wit) < delta:
                return True
        return False

    try:
        report.lhs = estimate_volume(lhs_pred, n + 1, p, cfg.trials, rng.child(4), cfg.threads)
    except Exception as exc:  # keep partial results
        report.errors.append(f"lhs: {exc}")

    if chi == NEG_INF:
        report.verdicts["chain"] = "vacuous: chi_u = -inf"
        return report

    try:
        if cfg.delta_prime is not None:
            report.delta_prime = DeltaPrime(cfg.delta_prime, -1, 0, 0)
        else:
            report.delta_prime = choose_delta_prime(setup, p, cfg.calibration_trials, rng.child(5),
                                                    require_support=cfg.require_support, threads=cfg.threads)
    except CalibrationFailed as exc:
        report.errors.append(f"calibration: {exc}")
        return report
    dp = report.delta_prime.value

    v_oracle = setup.v_oracle
    report.gamma_u = estimate_volume(lambda vs: word_deviation(vs, v_oracle, 2 * m) < dp, n, p, cfg.trials, rng.child(6), cfg.threads)

    def theta_pred(us):
        V, U = us[:-1], us[-1]
        if not word_deviation(V, v_oracle, 3 * m) < dp:
            return False
        return theta_membership(V, U, xi, m, dp).member

    report.theta = estimate_volume(theta_pred, n + 1, p, cfg.chain_trials, rng.child(7), cfg.threads)

    def implication_pred(us):
        V, U = us[:-1], us[-1]
        return orb_deviation(_conclusion_unitaries(V, U, cfg.mode, W), tuples, setup.family, m, witness=V) < delta

    report.implication = estimate_volume(implication_pred, n + 1, p, cfg.trials, rng.child(8), cfg.threads)

    a = _est(report.gamma_u, 0.5)
    v = report.verdicts
    v["halfGammaU<=lhs"] = compare(a, _est(report.lhs)) if report.lhs else "missing"
    v["halfGammaU<theta"] = compare(a, _est(report.theta))
    v["theta<=implication"] = compare(_est(report.theta), _est(report.implication))
    v["implication<=lhs"] = compare(_est(report.implication), _est(report.lhs)) if report.lhs else "missing"
    return report


# --------------------------------------------------------------------------
# conjugation by a unitary with vanishing trace


def gue_representative(N: int, r: int, rng: RngStream) -> MatrixTuple:
    return MatrixTuple(np.stack([sample_gue(N, rng.child(j)) for j in range(r)]), (SELFADJOINT,) * r)


def conjugated_pair_target(x_oracle: MomentOracle, mu: SpectralMeasure) -> MomentOracle:
    """Law of ``(v X v*, X)`` on the alphabet ``y, x`` (no ``v`` letters)."""
    return conjugated_family_oracle(x_oracle, [mu], include_v=False)


def two_copies_target(x_oracle: MomentOracle) -> MomentOracle:
    return free_family_oracle([x_oracle, x_oracle], labels=["y", "x"])


def conjugated_pair_deviation(A: MatrixTuple, V: np.ndarray, target: MomentOracle, m: int) -> float:
    mats, _ = conjugated_slots([V, np.eye(A.N, dtype=complex)], [A, A])
    return word_deviation(mats, target, m)


def conjugated_pair_volume(
    target: MomentOracle,
    p: MicrostateParams,
    trials: int,
    rng: RngStream,
    threads: int = 1,
    A: MatrixTuple | None = None,
) -> VolumeEstimate:
    """Frequency of ``(U_1 A U_1*, U_2 A U_2*)`` landing within ``delta`` of ``target``.

    ``U_1, U_2`` are Haar.  Without a fixed ``A`` every trial draws a fresh
    GUE tuple, so the frequency is over the joint law of ``(A, U_1, U_2)``.
    """
    r = target.signature.size // 2

    def one(t: int, stream: RngStream) -> bool:
        g = stream.generator()
        a = A if A is not None else gue_representative(p.N, r, stream.child(0))
        us = [sample_haar_unitary(p.N, g) for _ in range(2)]
        return orb_deviation(us, [a, a], target, p.m) < p.delta

    return VolumeEstimate(sum(run_trials(one, trials, rng, threads)), trials, p.N)

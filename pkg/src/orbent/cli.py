"""Config-driven experiment runner: ``orbent run`` and ``orbent verify``.

A run expands the config's ``(N, m, delta)`` sweep into cells, evaluates the
scenario on each cell with the substream ``RngStream(seed).child(cell)``,
and writes

* ``records.jsonl``  one canonical JSON line per cell (byte-stable),
* ``timings.jsonl``  wall times, kept apart so records stay reproducible,
* ``summary.csv``    flattened scalar fields of the records,
* ``*.svg``          optional line plots, drawn from ``records.jsonl``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import entropy
from .entropy import Theorem1Config, run_theorem1_experiment
from .matrixlab import MatrixTuple, RngStream, SemicircleLaw, quantile_diagonal, sample_haar_unitary
from .microstates import (
    MicrostateParams,
    VolumeEstimate,
    _jnum,
    concentration_volume,
    estimate_volume,
    in_gamma_orb,
    in_gamma_R,
    reduce_last_to_identity,
    run_trials,
    word_deviation,
)
from .targets import (
    DEFAULT_DEGREE_CAP,
    TWO_PI,
    SpectralMeasure,
    free_family_oracle,
    measure_moment,
    semicircular_oracle,
)

SCHEMA = "orbent.record/v1"
SCENARIOS = ("gammaR", "orbvolume", "chiu", "sigma", "concentration", "remark2", "theorem1", "prop1", "remark1")
MODES = ("fixed-representative", "pool")
DEFAULT_TOLERANCE = {"rtol": 1e-9, "atol": 1e-12}
GOLDEN_PACKAGE = "orbent.goldens"


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# --------------------------------------------------------------------------
# config


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int = 0
    N: list[int] = field(default_factory=list)
    m: list[int] = field(default_factory=list)
    delta: list[float] = field(default_factory=list)
    trials: int = 100
    n: int = 1
    mode: str = "fixed-representative"
    pool: int = 4
    x: dict = field(default_factory=lambda: {"kind": "semicircular", "r": 1})
    v: list[dict] = field(default_factory=list)
    measures: list[dict] = field(default_factory=list)
    theorem1: dict = field(default_factory=dict)
    resample_x: bool = True
    plots: bool = False

    def canonical(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "sweep": {"N": self.N, "m": self.m, "delta": self.delta},
            "trials": self.trials,
            "n": self.n,
            "mode": self.mode,
            "pool": self.pool,
            "x": self.x,
            "v": self.v,
            "measures": self.measures,
            "theorem1": self.theorem1,
            "resampleX": self.resample_x,
            "plots": self.plots,
        }

    @property
    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.canonical()).encode()).hexdigest()

    def cells(self) -> list[dict]:
        if self.scenario == "sigma":
            return [{"index": i, "measure": i} for i in range(len(self.measures))]
        return [
            {"index": i, "N": N, "m": m, "delta": d}
            for i, (N, m, d) in enumerate(itertools.product(self.N, self.m, self.delta))
        ]


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


_MEASURE_KINDS = ("haar", "roots", "point", "cosine", "grid")
_T1_KEYS = {"chainTrials", "calibrationTrials", "witnesses", "deltaPrime", "requireSupport"}
_TOP_KEYS = {"scenario", "seed", "sweep", "trials", "n", "mode", "pool", "x", "v", "measures", "theorem1", "resampleX", "plots"}


def _check_measure(d, where: str, problems: list[str]) -> None:
    if not isinstance(d, dict):
        problems.append(f"{where}: must be an object")
        return
    kind = d.get("kind")
    if kind not in _MEASURE_KINDS:
        problems.append(f"{where}.kind: must be one of {list(_MEASURE_KINDS)}, got {kind!r}")
        return
    if "cells" in d and not (_is_int(d["cells"]) and d["cells"] >= 1):
        problems.append(f"{where}.cells: must be a positive integer")
    if kind == "roots" and not (_is_int(d.get("m")) and d["m"] >= 1):
        problems.append(f"{where}.m: must be a positive integer")
    if kind == "point" and not _is_num(d.get("angle", 0.0)):
        problems.append(f"{where}.angle: must be a finite number")
    if kind == "cosine" and not (_is_num(d.get("a")) and abs(d["a"]) <= 1):
        problems.append(f"{where}.a: must be a number in [-1, 1]")
    if kind == "grid":
        try:
            measure_from_descriptor(d)
        except (ValueError, TypeError) as exc:
            problems.append(f"{where}: {exc}")


def validate_config(raw: Any, seed: int | None = None) -> ExperimentConfig:
    """Field-level validation; raises :class:`ConfigError` listing every problem."""
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config: must be a JSON object"])
    for k in sorted(set(raw) - _TOP_KEYS):
        problems.append(f"{k}: unknown field")
    scenario = raw.get("scenario")
    if scenario not in SCENARIOS:
        problems.append(f"scenario: must be one of {list(SCENARIOS)}, got {scenario!r}")
    cfg = ExperimentConfig(scenario=scenario if scenario in SCENARIOS else "sigma")

    if seed is None:
        seed = raw.get("seed", 0)
    if not (_is_int(seed) and seed >= 0):
        problems.append("seed: must be a nonnegative integer")
    else:
        cfg.seed = seed

    needs_sweep = scenario in SCENARIOS and scenario != "sigma"
    sweep = raw.get("sweep", {})
    if not isinstance(sweep, dict):
        problems.append("sweep: must be an object with N, m, delta lists")
        sweep = {}
    for key, check, what in (("N", _is_int, "a positive integer"), ("m", _is_int, "a positive integer"), ("delta", _is_num, "a positive number")):
        vals = sweep.get(key)
        if vals is None:
            if needs_sweep:
                problems.append(f"sweep.{key}: required for scenario {scenario}")
            continue
        if not isinstance(vals, list) or not vals:
            problems.append(f"sweep.{key}: must be a nonempty list")
            continue
        for i, v in enumerate(vals):
            if not (check(v) and v > 0):
                problems.append(f"sweep.{key}[{i}]: must be {what}, got {v!r}")
        setattr(cfg, key, list(vals))

    for key, attr, lo in (("trials", "trials", 1), ("n", "n", 0), ("pool", "pool", 2)):
        if key in raw:
            if not (_is_int(raw[key]) and raw[key] >= lo):
                problems.append(f"{key}: must be an integer >= {lo}")
            else:
                setattr(cfg, attr, raw[key])

    mode = raw.get("mode", "fixed-representative")
    if mode not in MODES:
        problems.append(f"mode: must be one of {list(MODES)}, got {mode!r}")
    else:
        cfg.mode = mode
    if mode == "pool" and scenario not in ("gammaR", "orbvolume"):
        problems.append(f"mode: pool mode is only available for gammaR and orbvolume, not {scenario}")

    x = raw.get("x", cfg.x)
    if not isinstance(x, dict) or x.get("kind") != "semicircular":
        problems.append("x.kind: only 'semicircular' targets are supported")
    elif not (_is_int(x.get("r", 1)) and x.get("r", 1) >= 1):
        problems.append("x.r: must be a positive integer")
    else:
        cfg.x = {"kind": "semicircular", "r": x.get("r", 1)}

    for key in ("v", "measures"):
        vals = raw.get(key, [])
        if not isinstance(vals, list):
            problems.append(f"{key}: must be a list of measure descriptors")
            continue
        for i, d in enumerate(vals):
            _check_measure(d, f"{key}[{i}]", problems)
        setattr(cfg, key, vals)

    t1 = raw.get("theorem1", {})
    if not isinstance(t1, dict):
        problems.append("theorem1: must be an object")
        t1 = {}
    for k in sorted(set(t1) - _T1_KEYS):
        problems.append(f"theorem1.{k}: unknown field")
    for k in ("chainTrials", "calibrationTrials", "witnesses"):
        if k in t1 and not (_is_int(t1[k]) and t1[k] >= 1):
            problems.append(f"theorem1.{k}: must be a positive integer")
    if t1.get("deltaPrime") is not None and not (_is_num(t1["deltaPrime"]) and t1["deltaPrime"] > 0):
        problems.append("theorem1.deltaPrime: must be a positive number or null")
    if "requireSupport" in t1 and not isinstance(t1["requireSupport"], bool):
        problems.append("theorem1.requireSupport: must be a boolean")
    cfg.theorem1 = dict(t1)

    for key, attr in (("resampleX", "resample_x"), ("plots", "plots")):
        if key in raw:
            if not isinstance(raw[key], bool):
                problems.append(f"{key}: must be a boolean")
            else:
                setattr(cfg, attr, raw[key])

    # scenario-specific requirements
    if scenario == "sigma" and not cfg.measures:
        problems.append("measures: sigma needs at least one measure")
    if scenario == "chiu" and not cfg.v:
        problems.append("v: chiu needs at least one measure")
    if scenario == "remark2" and cfg.n < 2:
        problems.append("n: remark2 needs n >= 2")
    if scenario == "orbvolume" and cfg.n < 1:
        problems.append("n: orbvolume needs n >= 1")
    if scenario == "remark1":
        if not cfg.v:
            cfg.v = [{"kind": "roots", "m": 3}]
        elif len(cfg.v) != 1:
            problems.append("v: remark1 takes exactly one measure")
    if scenario in ("theorem1", "prop1"):
        for i, m in enumerate(cfg.m):
            if _is_int(m) and 3 * m > DEFAULT_DEGREE_CAP:
                problems.append(f"sweep.m[{i}]: 3m = {3 * m} exceeds the degree cap {DEFAULT_DEGREE_CAP}")
        if scenario == "prop1" and not cfg.v:
            problems.append("v: prop1 needs at least one measure")
    if scenario in ("concentration",):
        for i, m in enumerate(cfg.m):
            if _is_int(m) and m > DEFAULT_DEGREE_CAP:
                problems.append(f"sweep.m[{i}]: exceeds the degree cap {DEFAULT_DEGREE_CAP}")
    if problems:
        raise ConfigError(problems)
    return cfg


def measure_from_descriptor(d: dict) -> SpectralMeasure:
    kind = d["kind"]
    if kind == "haar":
        return SpectralMeasure.haar(d.get("cells", 4096))
    if kind == "roots":
        return SpectralMeasure.roots_of_unity(d["m"])
    if kind == "point":
        return SpectralMeasure.point_mass(float(d.get("angle", 0.0)))
    if kind == "cosine":
        a = float(d["a"])
        return SpectralMeasure.from_density(lambda t: (1.0 + a * np.cos(t)) / TWO_PI, d.get("cells", 4096))
    if kind == "grid":
        return SpectralMeasure.from_json(d)
    raise ValueError(f"unknown measure kind {kind!r}")


# --------------------------------------------------------------------------
# serialization


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        return _jnum(x)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


# --------------------------------------------------------------------------
# scenarios


@dataclass
class Cell:
    cfg: ExperimentConfig
    coords: dict
    rng: RngStream
    threads: int

    @property
    def params(self) -> MicrostateParams:
        return MicrostateParams(self.coords["N"], self.coords["m"], self.coords["delta"])


def _x_oracle(cfg: ExperimentConfig):
    return semicircular_oracle(cfg.x["r"])


def _representative(cfg: ExperimentConfig, N: int) -> MatrixTuple:
    return entropy.semicircle_representative(N, cfg.x["r"], RngStream(cfg.seed, 7))


def _candidates(cell: Cell) -> list[tuple[str, MatrixTuple]]:
    cfg, N = cell.cfg, cell.coords["N"]
    out = [("quantile", _representative(cfg, N))]
    if cfg.mode == "pool":
        for j in range(cfg.pool - 1):
            out.append((f"gue{j}", entropy.gue_representative(N, cfg.x["r"], cell.rng.child(100).child(j))))
    return out


def _scenario_gamma_r(cell: Cell) -> dict:
    cfg, p = cell.cfg, cell.params
    target = _x_oracle(cfg)
    reps = []
    for name, A in _candidates(cell):
        mem = in_gamma_R(A, target, p)
        reps.append({"candidate": name, "member": mem.member, "deviation": mem.deviation})

    def one(t, stream):
        A = entropy.gue_representative(p.N, cfg.x["r"], stream)
        return in_gamma_R(A, target, p).member

    hits = sum(run_trials(one, cfg.trials, cell.rng.child(1), cell.threads))
    est = VolumeEstimate(hits, cfg.trials, p.N)
    return {"representatives": reps, "estimate": est.record("gammaR:gue-frequency", p, cfg.seed, cfg.mode)}


def _scenario_orbvolume(cell: Cell) -> dict:
    cfg, p = cell.cfg, cell.params
    x = _x_oracle(cfg)
    n = cfg.n
    target = x if n == 1 else free_family_oracle([x] * n, labels=[f"x{i + 1}" for i in range(n)])
    per = []
    best = None
    for j, (name, A) in enumerate(_candidates(cell)):
        est = estimate_volume(lambda us, A=A: in_gamma_orb(us, [A] * n, target, p).member, n, p, cfg.trials, cell.rng.child(j), cell.threads)
        rec = est.record("gammaOrb", p, cfg.seed, cfg.mode)
        rec["candidate"] = name
        rec["inGammaR"] = in_gamma_R(A, x, p).member
        per.append(rec)
        if best is None or est.hits > best[0].hits:
            best = (est, rec)
    out = {"estimate": best[1], "n": n}
    if cfg.mode == "pool":
        out["candidates"] = per
    return out


def _scenario_chiu(cell: Cell) -> dict:
    cfg, p = cell.cfg, cell.params
    mus = [measure_from_descriptor(d) for d in cfg.v]
    oracle = entropy.unitary_family_oracle(mus)
    est = estimate_volume(lambda vs: word_deviation(vs, oracle, p.m) < p.delta, len(mus), p, cfg.trials, cell.rng, cell.threads)
    return {"chiU": _jnum(entropy.chi_u_free_tuple(mus)), "estimate": est.record("gammaU", p, cfg.seed, cfg.mode)}


def _scenario_sigma(cell: Cell) -> dict:
    d = cell.cfg.measures[cell.coords["measure"]]
    mu = measure_from_descriptor(d)
    value = entropy.sigma(mu)
    out = {"descriptor": d, "value": _jnum(value)}
    if not mu.has_atoms and mu.cells >= 32 and mu.cells % 4 == 0:
        # coarser grids of the same measure, finest last
        ref = [(mu.cells // f, entropy.sigma(mu.coarsened(f))) for f in (4, 2, 1)]
        out["refinement"] = [[G, v] for G, v in ref]
        out["refinementSteps"] = [abs(ref[i + 1][1] - ref[i][1]) for i in range(2)]
    return out


def _scenario_concentration(cell: Cell) -> dict:
    cfg, p = cell.cfg, cell.params
    A = MatrixTuple.selfadjoint(quantile_diagonal(SemicircleLaw(), p.N))
    est = concentration_volume(A, p.m, p.delta, cfg.trials, cell.rng, cell.threads)
    return {"estimate": est.record("mEpsFree:{A},{UAU*}", p, cfg.seed, cfg.mode)}


def _scenario_remark2(cell: Cell) -> dict:
    cfg, p = cell.cfg, cell.params
    x = _x_oracle(cfg)
    n = cfg.n
    target = free_family_oracle([x] * n, labels=[f"x{i + 1}" for i in range(n)])
    A = _representative(cfg, p.N)

    def one(t, stream):
        us = [sample_haar_unitary(p.N, stream.child(i)) for i in range(n)]
        a = in_gamma_orb(us, [A] * n, target, p)
        b = in_gamma_orb(reduce_last_to_identity(us), [A] * n, target, p)
        flagged = a.near_boundary(p.delta) or b.near_boundary(p.delta)
        return a.member, b.member, flagged

    res = run_trials(one, cfg.trials, cell.rng, cell.threads)
    kept = [(a, b) for a, b, f in res if not f]
    return {
        "n": n,
        "instances": len(res),
        "flagged": len(res) - len(kept),
        "agree": sum(a == b for a, b in kept),
        "disagree": sum(a != b for a, b in kept),
        "memberFraction": sum(a for a, _ in kept) / max(len(kept), 1),
    }


def _theorem1(cell: Cell, mode: str) -> dict:
    cfg = cell.cfg
    t1 = cfg.theorem1
    N, m, delta = cell.coords["N"], cell.coords["m"], cell.coords["delta"]
    tc = Theorem1Config(
        N=N, m=m, delta=delta,
        v_measures=[measure_from_descriptor(d) for d in cfg.v],
        r=cfg.x["r"],
        trials=cfg.trials,
        chain_trials=t1.get("chainTrials", 20),
        calibration_trials=t1.get("calibrationTrials", 8),
        witnesses=t1.get("witnesses", 8),
        mode=mode,
        # one seed per cell, derived from the run seed and cell index
        seed=int(np.random.SeedSequence(cfg.seed, spawn_key=(cell.coords["index"],)).generate_state(1)[0]),
        threads=cell.threads,
        delta_prime=t1.get("deltaPrime"),
        require_support=t1.get("requireSupport", False),
    )
    report = run_theorem1_experiment(tc).to_json()
    if "lhs" in report:
        report["estimate"] = report["lhs"]
    return report


def _scenario_remark1(cell: Cell) -> dict:
    cfg, p = cell.cfg, cell.params
    x = _x_oracle(cfg)
    mu = measure_from_descriptor(cfg.v[0])
    target = entropy.two_copies_target(x)
    pair = entropy.conjugated_pair_target(x, mu)
    A = entropy.gue_representative(p.N, cfg.x["r"], cell.rng.child(0))
    V = quantile_diagonal(mu, p.N)
    fixed = None if cfg.resample_x else A
    est = entropy.conjugated_pair_volume(target, p, cfg.trials, cell.rng.child(1), cell.threads, A=fixed)
    mode = "resampled-gue" if cfg.resample_x else "fixed-gue"
    return {
        "tauV": [measure_moment(mu, 1).real, measure_moment(mu, 1).imag],
        "targetGap": float(np.max(np.abs(pair.vector(p.m) - target.vector(p.m)))),
        "momentDeviation": entropy.conjugated_pair_deviation(A, V, target, p.m),
        "estimate": est.record("gammaOrb:(vXv*,X)", p, cfg.seed, mode),
    }


SCENARIO_FUNCS: dict[str, Callable[[Cell], dict]] = {
    "gammaR": _scenario_gamma_r,
    "orbvolume": _scenario_orbvolume,
    "chiu": _scenario_chiu,
    "sigma": _scenario_sigma,
    "concentration": _scenario_concentration,
    "remark2": _scenario_remark2,
    "theorem1": lambda c: _theorem1(c, "fixed"),
    "prop1": lambda c: _theorem1(c, "prop1"),
    "remark1": _scenario_remark1,
}


def _annotate_trends(records: list[dict]) -> None:
    """Add a ``trend`` field comparing each cell with the next larger ``N``."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        est = rec["result"].get("estimate")
        if est is None or "N" not in rec["cell"]:
            continue
        groups.setdefault((rec["cell"]["m"], rec["cell"]["delta"]), []).append(rec)
    for recs in groups.values():
        recs.sort(key=lambda r: r["cell"]["N"])
        ests = [r["result"]["estimate"] for r in recs]
        strict = all(b["pHat"] >= a["pHat"] for a, b in zip(ests, ests[1:]))
        # a decrease counts only once the intervals separate
        within = all(b["ci"][1] >= a["ci"][0] for a, b in zip(ests, ests[1:]))
        trend = "nondecreasing" if strict else ("nondecreasing-within-ci" if within else "decreasing")
        for r in recs:
            r["result"]["trend"] = trend


# --------------------------------------------------------------------------
# run


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("ORBENT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError([f"ORBENT_THREADS: must be an integer, got {env!r}"]) from None
    return 1


def execute(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[dict], list[dict]]:
    records, timings = [], []
    base = RngStream(cfg.seed)
    func = SCENARIO_FUNCS[cfg.scenario]
    for coords in cfg.cells():
        t0 = time.perf_counter()
        cell = Cell(cfg, coords, base.child(coords["index"]), threads)
        try:
            result = func(cell)
        except Exception as exc:  # recorded per cell; the run continues
            result = {"error": f"{type(exc).__name__}: {exc}"}
        records.append({
            "schema": SCHEMA,
            "configHash": cfg.hash,
            "scenario": cfg.scenario,
            "cell": coords,
            "seed": cfg.seed,
            "result": result,
        })
        timings.append({"cell": coords["index"], "wallTime": time.perf_counter() - t0})
    _annotate_trends(records)
    return records, timings


def _flatten(obj, prefix: str = "") -> dict:
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}{k}."))
    elif isinstance(obj, list):
        if len(obj) <= 4 and all(not isinstance(v, (dict, list)) for v in obj):
            for i, v in enumerate(obj):
                out[f"{prefix}{i}"] = v
    else:
        out[prefix[:-1]] = obj
    return out


def write_summary(records: list[dict], path: Path) -> None:
    rows = []
    for rec in records:
        row = {"scenario": rec["scenario"], "seed": rec["seed"]}
        row.update(_flatten(rec["cell"], "cell."))
        result = dict(rec["result"])
        result.pop("descriptor", None)
        row.update(_flatten(result))
        rows.append(row)
    keys = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def read_records(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_plots(records_path: Path, out: Path) -> list[Path]:
    """Line plots of ``pHat`` and ``logProxy`` against ``N``, from the records file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "orbent"
    records = [r for r in read_records(records_path) if "estimate" in r["result"] and "N" in r["cell"]]
    if not records:
        return []
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault((r["cell"]["m"], r["cell"]["delta"]), []).append(r)
    written = []
    for field_name, fname in (("pHat", "phat_vs_N.svg"), ("logProxy", "logproxy_vs_N.svg")):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for (m, d), recs in sorted(groups.items()):
            recs.sort(key=lambda r: r["cell"]["N"])
            Ns = [r["cell"]["N"] for r in recs]
            ys = [float(r["result"]["estimate"][field_name]) for r in recs]
            ax.plot(Ns, ys, marker="o", label=f"m={m}, delta={d}")
            if field_name == "pHat":
                lo = [r["result"]["estimate"]["ci"][0] for r in recs]
                hi = [r["result"]["estimate"]["ci"][1] for r in recs]
                ax.fill_between(Ns, lo, hi, alpha=0.2)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("N")
        ax.set_ylabel(field_name)
        ax.set_title(records[0]["scenario"])
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out / fname
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def run(config_path: str | Path, out: str | Path, seed: int | None = None, threads: int | None = None) -> int:
    try:
        with open(config_path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config {config_path}: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = validate_config(raw, seed)
        nthreads = resolve_threads(threads)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    records, timings = execute(cfg, nthreads)
    rpath = out / "records.jsonl"
    with open(rpath, "w") as fh:
        for rec in records:
            fh.write(canonical_json(rec) + "\n")
    with open(out / "timings.jsonl", "w") as fh:
        for t in timings:
            fh.write(canonical_json(t) + "\n")
    with open(out / "config.json", "w") as fh:
        fh.write(json.dumps(_clean(cfg.canonical()), indent=2, sort_keys=True) + "\n")
    write_summary(records, out / "summary.csv")
    if cfg.plots:
        write_plots(rpath, out)
    failed = sum("error" in r["result"] for r in records)
    print(f"{cfg.scenario}: {len(records)} cells, {failed} with errors -> {out}")
    return 0


# --------------------------------------------------------------------------
# verify


def _diff(expected, actual, path: str, tol: dict, out: list[str]) -> None:
    if isinstance(expected, dict) and isinstance(actual, dict):
        for k in sorted(set(expected) | set(actual)):
            if k not in actual:
                out.append(f"{path}.{k}: missing in rerun")
            elif k not in expected:
                out.append(f"{path}.{k}: unexpected in rerun")
            else:
                _diff(expected[k], actual[k], f"{path}.{k}", tol, out)
    elif isinstance(expected, list) and isinstance(actual, list):
        if len(expected) != len(actual):
            out.append(f"{path}: length {len(expected)} != {len(actual)}")
        for i, (e, a) in enumerate(zip(expected, actual)):
            _diff(e, a, f"{path}[{i}]", tol, out)
    elif _is_num(expected) and _is_num(actual) and not isinstance(expected, bool):
        if not math.isclose(expected, actual, rel_tol=tol["rtol"], abs_tol=tol["atol"]):
            out.append(f"{path}: expected {expected!r}, got {actual!r}")
    elif expected != actual:
        out.append(f"{path}: expected {expected!r}, got {actual!r}")


def bundled_golden_dir() -> Path:
    return Path(str(resources.files(GOLDEN_PACKAGE)))


def verify(golden_dir: str | Path | None = None, threads: int | None = None) -> int:
    root = Path(golden_dir) if golden_dir is not None else bundled_golden_dir()
    if not root.is_dir():
        print(f"missing: golden directory {root} does not exist", file=sys.stderr)
        return 3
    cases = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith(("_", ".")))
    if not cases:
        print(f"missing: no golden cases under {root}", file=sys.stderr)
        return 3
    nthreads = resolve_threads(threads)
    status = 0
    for case in cases:
        cfg_path, rec_path = case / "config.json", case / "records.jsonl"
        missing = [p.name for p in (cfg_path, rec_path) if not p.is_file()]
        if missing:
            print(f"missing: golden {case.name} lacks {', '.join(missing)}", file=sys.stderr)
            status = max(status, 3)
            continue
        tol = dict(DEFAULT_TOLERANCE)
        if (case / "tolerance.json").is_file():
            tol.update(json.loads((case / "tolerance.json").read_text()))
        try:
            cfg = validate_config(json.loads(cfg_path.read_text()))
        except ConfigError as exc:
            print(f"FAIL {case.name}: invalid golden config: {exc}", file=sys.stderr)
            status = max(status, 1)
            continue
        expected = read_records(rec_path)
        actual = json.loads("[" + ",".join(canonical_json(r) for r in execute(cfg, nthreads)[0]) + "]")
        problems: list[str] = []
        if len(expected) != len(actual):
            problems.append(f"record count: expected {len(expected)}, got {len(actual)}")
        for i, (e, a) in enumerate(zip(expected, actual)):
            _diff(e, a, f"line {i + 1}", tol, problems)
        if problems:
            status = max(status, 1)
            print(f"FAIL {case.name}: {len(problems)} field(s) differ", file=sys.stderr)
            for p in problems[:50]:
                print(f"  {p}", file=sys.stderr)
        else:
            print(f"ok   {case.name}: {len(expected)} records")
    return status


def write_golden(config_path: str | Path, dest: str | Path) -> None:
    """Pin a config as a golden case: copies the config and its records."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    raw = json.loads(Path(config_path).read_text())
    with tempfile.TemporaryDirectory() as tmp:
        if run(config_path, tmp, threads=1) != 0:
            raise RuntimeError(f"run failed for {config_path}")
        (dest / "records.jsonl").write_text((Path(tmp) / "records.jsonl").read_text())
    (dest / "config.json").write_text(json.dumps(raw, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# entry point


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="orbent", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("-c", "--config", required=True)
    r.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    r.add_argument("--threads", type=int, default=None, help="worker threads (default: $ORBENT_THREADS or 1)")
    r.add_argument("--out", default="out")
    v = sub.add_parser("verify", help="rerun golden cases and diff their records")
    v.add_argument("--golden", default=None, help="golden directory (default: bundled goldens)")
    v.add_argument("--threads", type=int, default=None)
    args = ap.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.out, args.seed, args.threads)
    return verify(args.golden, args.threads)


if __name__ == "__main__":
    sys.exit(main())

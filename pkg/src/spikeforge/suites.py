"""Named verification suites bundling the theory checks into
machine-readable reports.

Suite output is a canonical JSON document: checks are listed in a fixed
order and every field is deterministic given (seed, trials), so two runs
with the same seed are byte-identical no matter how many workers
executed the checks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np

from . import theory
from .calibrate import convert
from .engine import NeuronMode, snn_forward
from .graph import make_mlp
from .model_io import synth_dataset

SUITES = ("thm1", "perm", "identity", "all")

THM1A_GRID = {"theta": 1, "T": (4, 8, 16), "X": ("0", "0.37", "0.5", "0.99", "2")}
THM1B_GRID = {"theta": 1, "T": 4, "X": ("0.25", "0.6", "0.875")}
THM1C_GRID = {"theta": 1, "T": 4, "X": ("0.5", "0.625", "0.99")}


def _jobs_thm1(seed: int, trials: int):
    jobs = []
    th = THM1A_GRID["theta"]
    for T in THM1A_GRID["T"]:
        for X in THM1A_GRID["X"]:
            jobs.append(lambda T=T, X=X: theory.check_thm1a(
                th, T, Fraction(X), trials=trials, seed=seed))
    for X in THM1B_GRID["X"]:
        jobs.append(lambda X=X: theory.check_thm1b(
            THM1B_GRID["theta"], THM1B_GRID["T"], Fraction(X)))
    for X in THM1C_GRID["X"]:
        jobs.append(lambda X=X: theory.check_thm1c(
            THM1C_GRID["theta"], THM1C_GRID["T"], Fraction(X),
            trials=trials, seed=seed))
    # composition bound: identity weights sanity case, then random instances
    jobs.append(lambda: theory.check_thm1d(np.eye(4), 1.0, 4, np.full(4, 0.5),
                                           trials=min(trials, 10**4), seed=seed))
    rng = np.random.default_rng(seed)
    for T in (4, 8):
        w = rng.uniform(-1.0, 1.0, size=(4, 4))
        x = rng.uniform(0.0, 1.0, size=4)
        jobs.append(lambda T=T, w=w, x=x: theory.check_thm1d(
            w, 1.0, T, x, trials=min(trials, 10**4), seed=seed))
    return jobs


def _jobs_perm(seed: int, instances_per_T: int = 50):
    rng = np.random.default_rng(seed)
    jobs = []
    for T in (3, 4, 5):
        for _ in range(instances_per_T):
            n = int(rng.integers(1, 5))
            trains = rng.integers(0, 2, size=(n, T))
            weights = rng.uniform(-1.0, 1.0, size=n)
            jobs.append(lambda trains=trains, weights=weights:
                        theory.check_permutation_theorem(trains, weights))
    return jobs


def _jobs_identity(seed: int, n_samples: int = 100, T: int = 16):
    def run():
        data = synth_dataset("gaussian-blobs", n_samples, seed=seed,
                             classes=3, dim=4)
        model = make_mlp([4, 16, 16, 3], seed=seed)
        converted = convert(model, data, n_samples=n_samples)
        _, trace = snn_forward(converted, data.features, T,
                               NeuronMode("baseline"), run_seed=seed,
                               record="full")
        return theory.check_rate_identity(trace, converted)

    return [run]


def run_suite(suite: str, seed: int = 0, trials: int = 10**5,
              threads: int = 1) -> dict:
    """Execute one named suite; returns the canonical report payload.

    Checks may run on a worker pool, but the report lists them in
    definition order with fully deterministic contents.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    jobs = []
    if suite in ("thm1", "all"):
        jobs += _jobs_thm1(seed, trials)
    if suite in ("perm", "all"):
        jobs += _jobs_perm(seed)
    if suite in ("identity", "all"):
        jobs += _jobs_identity(seed)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(lambda f: f(), jobs))
    else:
        reports = [f() for f in jobs]
    return {
        "suite": suite,
        "seed": int(seed),
        "trials": int(trials),
        "passed": all(r.passed for r in reports),
        "num_checks": len(reports),
        "num_failed": sum(not r.passed for r in reports),
        "checks": [r.to_json() for r in reports],
    }

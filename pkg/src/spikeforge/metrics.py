"""Measurement machinery: accuracy-vs-latency sweeps, anytime readout,
spike-count accounting, and membrane-potential histograms.

All outputs are plain rows ready for CSV/JSON emission; every cell of a
sweep is reproducible from (weights, dataset, resolved config) alone
because the simulator randomness is fully keyed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calibrate import ConvertedModel
from .engine import NeuronMode, snn_forward


@dataclass
class SweepConfig:
    modes: list
    T_values: list
    seeds: list
    batch_size: int = 256
    threads: int = 1
    shuffle_scope: str = "shared"
    init_potential: float = 0.0

    def __post_init__(self):
        if not self.modes or not self.T_values or not self.seeds:
            raise ValueError("modes, T_values and seeds must be nonempty")
        if any(T < 1 for T in self.T_values):
            raise ValueError("T must be >= 1")


def _mode_for(config: SweepConfig, name: str) -> NeuronMode:
    return NeuronMode(name, shuffle_scope=config.shuffle_scope,
                      init_potential=config.init_potential)


def _run_accuracy(converted: ConvertedModel, dataset, T: int, mode: NeuronMode,
                  seed: int, batch_size: int) -> float:
    feats, labels = dataset.features, dataset.labels
    correct = 0
    for start in range(0, len(labels), batch_size):
        xb = feats[start : start + batch_size]
        logits, _ = snn_forward(converted, xb, T, mode, run_seed=seed,
                                sample_indices=np.arange(start, start + len(xb)),
                                record="counts")
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start : start + len(xb)]))
    return correct / len(labels)


def sweep_accuracy(config: SweepConfig, converted: ConvertedModel, dataset):
    """Accuracy per (mode, T, seed) plus per-(mode, T) mean and std.

    Returns (rows, summary): rows are (mode, T, seed, accuracy); summary
    maps (mode, T) -> (mean, std).  Cells run on a worker pool when
    config.threads > 1; keyed RNG makes the result thread-count-invariant.
    """
    cells = [(m, T, s) for m in config.modes for T in config.T_values
             for s in config.seeds]

    def run(cell):
        m, T, s = cell
        return _run_accuracy(converted, dataset, T, _mode_for(config, m), s,
                             config.batch_size)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            accs = list(pool.map(run, cells))
    else:
        accs = [run(c) for c in cells]
    rows = [(m, T, s, acc) for (m, T, s), acc in zip(cells, accs)]
    summary = {}
    for m in config.modes:
        for T in config.T_values:
            vals = np.array([acc for (mm, TT, _, acc) in rows if mm == m and TT == T])
            summary[(m, T)] = (float(vals.mean()), float(vals.std(ddof=0)))
    return rows, summary


def sweep_anytime_accuracy(converted: ConvertedModel, dataset, T: int,
                           modes, seed: int = 0, batch_size: int = 256):
    """Accuracy after t <= T readout steps, recomputed from the partial
    head accumulations of a single latency-T run.  Returns rows
    (mode, T, t, accuracy), exactly T rows per mode."""
    feats, labels = dataset.features, dataset.labels
    rows = []
    for m in modes:
        mode = NeuronMode(m) if isinstance(m, str) else m
        correct = np.zeros(T, dtype=int)
        for start in range(0, len(labels), batch_size):
            xb = feats[start : start + batch_size]
            yb = labels[start : start + len(xb)]
            _, trace = snn_forward(converted, xb, T, mode, run_seed=seed,
                                   sample_indices=np.arange(start, start + len(xb)),
                                   record="counts")
            for t in range(1, T + 1):
                pred = np.argmax(trace.logits_at(t), axis=1)
                correct[t - 1] += int(np.sum(pred == yb))
        name = mode.variant
        rows.extend((name, T, t, correct[t - 1] / len(labels)) for t in range(1, T + 1))
    return rows


@dataclass
class SpikeReport:
    """Mean spike counts per layer per step, totals, and the percentage
    difference of totals against a reference run:
    (ours - baseline) / baseline * 100."""
    mode: str
    T: int
    per_layer_per_step: np.ndarray      # (n_sites, T) mean spikes per sample
    totals: np.ndarray                  # (n_sites,)
    pct_diff_vs_reference: np.ndarray | None = None

    def rows(self):
        out = []
        for li in range(len(self.totals)):
            for t in range(self.T):
                out.append((self.mode, self.T, li, t + 1,
                            float(self.per_layer_per_step[li, t])))
        return out


def count_spikes(traces, mode: str, T: int,
                 reference: SpikeReport | None = None) -> SpikeReport:
    """Aggregate per-sample spike counts from one or more SimTraces."""
    if not isinstance(traces, (list, tuple)):
        traces = [traces]
    n_sites = len(traces[0].sites)
    sums = np.zeros((n_sites, T))
    n_samples = 0
    for trace in traces:
        n_samples += trace.sites[0].counts.shape[1]
        for li, site in enumerate(trace.sites):
            sums[li] += site.counts.sum(axis=1)
    per = sums / n_samples
    totals = per.sum(axis=1)
    pct = None
    if reference is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            pct = (totals - reference.totals) / reference.totals * 100.0
        pct = np.where(reference.totals == 0,
                       np.where(totals == 0, 0.0, np.inf), pct)
    return SpikeReport(mode, T, per, totals, pct)


def histogram_membrane(trace, site_index: int, t: int, bins: int):
    """Fixed-width histogram of pre-fire membrane potentials at step t of
    one spiking layer, over all neurons and samples.  Returns
    (rows, meta): rows are (bin_left, bin_right, count); meta carries the
    layer threshold for plotting."""
    site = trace.sites[site_index]
    if site.v_pre is None:
        raise ValueError("membrane histogram requires a full-record trace")
    if not 1 <= t <= trace.T:
        raise ValueError(f"t must be in 1..{trace.T}")
    vals = site.v_pre[t - 1].ravel()
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        hi = lo + 1.0  # single occupied bin
    counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    rows = [(float(edges[i]), float(edges[i + 1]), int(counts[i]))
            for i in range(bins)]
    theta = np.asarray(site.theta, dtype=float)
    meta = {
        "layer_index": site.layer_index,
        "t": t,
        "threshold": float(theta.ravel()[0]) if theta.size else float(theta),
        "n_values": int(vals.size),
        "mean": float(vals.mean()),
        "variance": float(vals.var()),
    }
    return rows, meta

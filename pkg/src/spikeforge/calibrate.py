"""Threshold calibration and absorption.

Turns a trained ANN into an SNN-ready model: collects post-activation
statistics over a calibration set, fits per-layer (or per-channel)
thresholds from the max or a nearest-rank percentile, and pre-scales
downstream weights so the simulator can exchange binary spikes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .graph import ModelGraph, StructureError, ann_forward

# past this many retained values per site, percentile answers come from a
# uniform reservoir instead of the full sample (max stays exact)
FULL_SAMPLE_CAP = 10**6
RESERVOIR_SIZE = 10**5


class CalibrationError(ValueError):
    """Degenerate or inconsistent calibration inputs."""


@dataclass
class SiteStats:
    """Activation statistics for one activation layer.

    Values are kept as an (n_values, n_channels) matrix: exact while the
    total scalar count is under FULL_SAMPLE_CAP, a uniform reservoir
    afterwards.  The per-channel max is always exact.
    """

    n_channels: int
    max_per_channel: np.ndarray
    chunks: list = field(default_factory=list)
    count: int = 0              # retained rows
    seen: int = 0               # total rows offered
    _rng: np.random.Generator = None

    def add(self, values: np.ndarray) -> None:
        values = values.reshape(-1, self.n_channels)
        self.max_per_channel = np.maximum(self.max_per_channel, values.max(axis=0))
        self.seen += len(values)
        cap_rows = max(1, FULL_SAMPLE_CAP // self.n_channels)
        res_rows = max(1, RESERVOIR_SIZE // self.n_channels)
        if self.count + len(values) <= cap_rows:
            self.chunks.append(values)
            self.count += len(values)
            return
        # reservoir-sample rows once the cap is crossed
        if self._rng is None:
            self._rng = np.random.default_rng(0)
        pool = np.concatenate(self.chunks + [values])[: None]
        if len(pool) > res_rows:
            keep = self._rng.choice(len(pool), size=res_rows, replace=False)
            pool = pool[np.sort(keep)]
        self.chunks = [pool]
        self.count = len(pool)

    def values(self) -> np.ndarray:
        return np.concatenate(self.chunks) if self.chunks else np.empty((0, self.n_channels))

    @property
    def exact(self) -> bool:
        return self.seen == self.count


@dataclass
class ThresholdPlan:
    thetas: list                # per activation site: float or (n_channels,) array
    source: str                 # "max" or "pct:P"
    granularity: str            # "layer" or "channel"

    def __post_init__(self):
        for i, th in enumerate(self.thetas):
            arr = np.atleast_1d(np.asarray(th, dtype=float))
            if np.any(arr <= 0):
                raise CalibrationError(f"non-positive threshold at site {i}")

    def theta_for(self, site: int):
        return self.thetas[site]

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "granularity": self.granularity,
            "thetas": [
                th.tolist() if isinstance(th, np.ndarray) else float(th)
                for th in self.thetas
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ThresholdPlan":
        thetas = [np.asarray(t, dtype=float) if isinstance(t, list) else float(t)
                  for t in d["thetas"]]
        return cls(thetas, d["source"], d["granularity"])


@dataclass
class ConvertedModel:
    graph: ModelGraph           # batchnorm-free; weights scaled when absorbed
    plan: ThresholdPlan
    absorbed: bool

    def activation_sites(self) -> list:
        return self.graph.activation_indices()


def _channel_count(shape: tuple) -> int:
    # conv feature maps (C, H, W) have channel axis 0; flat vectors are
    # per-unit "channels"
    return shape[0] if len(shape) >= 2 else int(np.prod(shape))


def _to_channel_matrix(batch_values: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B*H*W, C); (B, n) -> (B, n)."""
    if batch_values.ndim >= 3:
        c = batch_values.shape[1]
        return np.moveaxis(batch_values, 1, -1).reshape(-1, c)
    return batch_values.reshape(len(batch_values), -1)


def collect_activation_stats(model: ModelGraph, dataset, n_samples: int,
                             batch_size: int = 64) -> list:
    """Per-activation-site stats over the first n_samples of the dataset."""
    if n_samples < 1:
        raise CalibrationError("n_samples must be >= 1")
    feats = dataset.features if hasattr(dataset, "features") else tz.as_tensor(dataset)
    if len(feats) == 0:
        raise CalibrationError("empty calibration dataset")
    feats = feats[:n_samples]
    stats: list[SiteStats] = []
    for start in range(0, len(feats), batch_size):
        _, recorded = ann_forward(model, feats[start : start + batch_size], record=True)
        if not stats:
            stats = [
                SiteStats(_channel_count(r.shape[1:]),
                          np.full(_channel_count(r.shape[1:]), -np.inf))
                for r in recorded
            ]
        for st, rec in zip(stats, recorded):
            st.add(_to_channel_matrix(rec))
    return stats


def _nearest_rank(sorted_vals: np.ndarray, p: float) -> float:
    # 1-based index ceil(p/100 * n) into the ascending sample
    n = len(sorted_vals)
    return float(sorted_vals[max(0, math.ceil(p / 100.0 * n) - 1)])


def fit_thresholds(stats: list, source: str = "max",
                   granularity: str = "layer") -> ThresholdPlan:
    """theta = max, or nearest-rank percentile, per layer or per channel."""
    if granularity not in ("layer", "channel"):
        raise CalibrationError(f"unknown granularity {granularity!r}")
    pct = None
    if source != "max":
        if not source.startswith("pct:"):
            raise CalibrationError(f"unknown threshold source {source!r}")
        pct = float(source[4:])
        if not 0.0 < pct <= 100.0:
            raise CalibrationError(f"percentile must be in (0, 100], got {pct}")
    thetas = []
    for i, st in enumerate(stats):
        if st.count == 0:
            raise CalibrationError(f"no calibration samples for activation site {i}")
        if granularity == "layer":
            if source == "max":
                theta = float(st.max_per_channel.max())
            else:
                theta = _nearest_rank(np.sort(st.values().ravel()), pct)
            if theta <= 0:
                raise CalibrationError(f"degenerate (all <= 0) activations at site {i}")
            thetas.append(theta)
        else:
            if source == "max":
                theta = st.max_per_channel.copy()
            else:
                vals = np.sort(st.values(), axis=0)
                theta = np.array([_nearest_rank(vals[:, c], pct)
                                  for c in range(st.n_channels)])
            if np.any(theta <= 0):
                raise CalibrationError(f"degenerate channel activations at site {i}")
            thetas.append(theta)
    return ThresholdPlan(thetas, source, granularity)


def _scale_downstream(layers: list, start: int, theta) -> bool:
    """Scale the input side of the first parameterized layer after ``start``
    by theta, tracking channel bookkeeping through pooling/flatten.
    Returns False when no downstream parameterized layer exists."""
    flattened = False
    for layer in layers[start + 1 :]:
        if layer.kind == "activation":
            raise StructureError("two activation layers with no weights between them")
        if layer.kind == "avgpool":
            continue  # channel-preserving
        if layer.kind == "flatten":
            flattened = True
            continue
        if layer.kind == "batchnorm":
            raise StructureError("fold batchnorm before absorbing thresholds")
        w = layer.params["w"]
        if np.isscalar(theta) or np.asarray(theta).size == 1:
            layer.params["w"] = w * float(np.asarray(theta).ravel()[0])
            return True
        theta = np.asarray(theta, dtype=float)
        if layer.kind == "conv2d":
            if len(theta) != w.shape[1]:
                raise CalibrationError("channelwise theta length != conv input channels")
            layer.params["w"] = w * theta[None, :, None, None]
        else:  # linear
            n_in = w.shape[1]
            if len(theta) == n_in:
                layer.params["w"] = w * theta[None, :]
            elif flattened and n_in % len(theta) == 0:
                block = n_in // len(theta)  # flatten of (C, H, W) is C blocks of H*W
                layer.params["w"] = w * np.repeat(theta, block)[None, :]
            else:
                raise CalibrationError("channelwise theta does not map onto linear inputs")
        return True
    return False


def absorb_thresholds(model: ModelGraph, plan: ThresholdPlan,
                      absorbed: bool = True) -> ConvertedModel:
    """Build the SNN-ready model.

    absorbed: downstream weights are pre-scaled by theta so spikes are
    binary.  Otherwise (reference mode) weights stay untouched and the
    simulator scales spikes by theta instead; both modes produce the
    same logits on identical RNG streams.
    """
    sites = model.activation_indices()
    if len(plan.thetas) != len(sites):
        raise CalibrationError(
            f"plan covers {len(plan.thetas)} sites, model has {len(sites)}")
    if any(l.kind == "batchnorm" for l in model.layers):
        raise StructureError("fold batchnorm before conversion")
    out = model.copy()
    if absorbed:
        for site, theta in zip(sites, plan.thetas):
            _scale_downstream(out.layers, site, theta)
    return ConvertedModel(out, plan, absorbed)


def convert(model: ModelGraph, dataset, n_samples: int, source: str = "max",
            granularity: str = "layer", absorbed: bool = True) -> ConvertedModel:
    """fold -> collect -> fit -> absorb, the whole conversion pipeline."""
    from .graph import fold_batchnorm

    folded = fold_batchnorm(model)
    stats = collect_activation_stats(folded, dataset, n_samples)
    plan = fit_thresholds(stats, source, granularity)
    return absorb_thresholds(folded, plan, absorbed)

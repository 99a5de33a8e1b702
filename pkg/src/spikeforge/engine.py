"""The SNN simulator: integrate-and-fire baseline, shuffled-spike-train
mode, and two-phase probabilistic (TPP) neurons.

All three modes run layer-sequentially: a spiking layer finishes its full
T-step train before the next layer starts.  For the baseline this is
numerically identical to synchronous execution of a feedforward net; for
shuffle and TPP it is the defining execution order.  Per-layer latency is
T steps; wall-clock depth is (number of spiking layers) x T, which can be
pipelined across samples on hardware.

Randomness is fully keyed: every Bernoulli draw and every shuffle
permutation is addressed by (run seed, sample, layer, purpose, step), so
results are bit-identical regardless of batching or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rz
from . import tensor as tz
from .calibrate import ConvertedModel
from .graph import Layer, apply_linear

TAG_TPP = 1          # TPP Bernoulli draws
TAG_SHUFFLE = 2      # shared-permutation shuffle
TAG_SHUFFLE_NEURON = 3  # per-neuron shuffle
TAG_INPUT = 4        # rate-coded input encoding


@dataclass
class NeuronMode:
    variant: str = "baseline"           # baseline | shuffle | tpp
    shuffle_scope: str = "shared"       # shared | per-neuron (shuffle only)
    init_potential: float = 0.0         # multiple of theta (baseline/shuffle)
    input_encoding: str = "constant"    # constant | rate

    def __post_init__(self):
        if self.variant not in ("baseline", "shuffle", "tpp"):
            raise ValueError(f"unknown neuron variant {self.variant!r}")
        if self.shuffle_scope not in ("shared", "per-neuron"):
            raise ValueError(f"unknown shuffle scope {self.shuffle_scope!r}")


@dataclass
class SiteTrace:
    """Record of one spiking layer over a run (batch-last-free layout:
    time axis first, then batch, then the layer's feature shape)."""
    layer_index: int
    theta: object                        # float or per-channel vector
    counts: np.ndarray                   # (T, B) spikes per sample per step
    v0: np.ndarray                       # (B, *feat) potential before step 1
    residue: np.ndarray                  # (B, *feat) potential after step T
    spikes: np.ndarray | None = None     # (T, B, *feat), 0/1  [full record]
    v_pre: np.ndarray | None = None      # (T, B, *feat) pre-fire potentials
    drive: np.ndarray | None = None      # (T, B, *feat) input currents
    accumulated: np.ndarray | None = None  # (B, *feat), TPP phase-1 result


@dataclass
class SimTrace:
    T: int
    mode: NeuronMode
    sites: list = field(default_factory=list)
    out_cum: np.ndarray | None = None    # (T, B, n_out) cumulative head drive
    out_scale: float = 1.0               # theta scaling for a spiking head

    def logits_at(self, t: int) -> np.ndarray:
        """Anytime readout from the first t steps' accumulation."""
        if not 1 <= t <= self.T:
            raise ValueError(f"t must be in 1..{self.T}")
        return self.out_cum[t - 1] * (self.out_scale / t)

    @property
    def logits(self) -> np.ndarray:
        return self.logits_at(self.T)


def theta_broadcast(theta, feat_shape: tuple):
    """Broadcast a layerwise or channelwise threshold over a feature shape."""
    arr = np.asarray(theta, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    if len(feat_shape) >= 2:
        if arr.shape != (feat_shape[0],):
            raise tz.DimensionError(f"channel thetas {arr.shape} vs features {feat_shape}")
        return arr.reshape((feat_shape[0],) + (1,) * (len(feat_shape) - 1))
    if arr.shape != feat_shape:
        raise tz.DimensionError(f"unit thetas {arr.shape} vs features {feat_shape}")
    return arr


def if_layer_step(v: np.ndarray, input_current: np.ndarray, theta):
    """One integrate-and-fire step: integrate, fire at v >= theta
    (inclusive), soft-reset by subtracting theta per spike."""
    tz.check_finite(input_current, "input current")
    v = v + input_current
    spikes = (v >= theta).astype(np.float64)
    return spikes, v - theta * spikes


def _bernoulli_keys(run_seed: int, samples: np.ndarray, layer: int, tag: int,
                    t: int) -> np.ndarray:
    base = rz.chain_key(run_seed)
    keys = rz.chain_keys(base, samples)
    for comp in (layer, tag, t):
        keys = rz.chain_keys(keys, np.full(len(samples), comp, dtype=np.uint64))
    return keys


def _if_site(drive: np.ndarray, theta_b, init_frac: float):
    """Run IF dynamics over drive (T, B, *feat); returns spikes, v_pre, v0, residue."""
    T = drive.shape[0]
    v = np.broadcast_to(np.asarray(init_frac * np.asarray(theta_b)),
                        drive.shape[1:]).astype(float).copy()
    v0 = v.copy()
    spikes = np.empty_like(drive)
    v_pre = np.empty_like(drive)
    for t in range(T):
        v = v + drive[t]
        v_pre[t] = v
        s = (v >= theta_b).astype(np.float64)
        v = v - theta_b * s
        spikes[t] = s
    return spikes, v_pre, v0, v


def tpp_spike_trains(accumulated: np.ndarray, theta, T: int, run_seed: int,
                     sample_indices: np.ndarray | None = None,
                     layer_index: int = 0):
    """Phase-2 TPP spiking from an accumulated potential.

    accumulated: (B, *feat) = sum of the T weighted inputs (phase 1).
    Returns (spikes (T, B, *feat), v_pre (T, B, *feat), residues (B, *feat)).
    Each step draws Bernoulli(clamp(v / (theta*(T-t+1)), 0, 1)) from the
    stream keyed by (run_seed, sample, layer, t, neuron).
    """
    acc = tz.as_tensor(accumulated)
    B = acc.shape[0]
    feat_shape = acc.shape[1:]
    n = int(np.prod(feat_shape)) if feat_shape else 1
    if sample_indices is None:
        sample_indices = np.arange(B)
    theta_b = theta_broadcast(theta, feat_shape)
    v = acc.copy()
    spikes = np.empty((T,) + acc.shape)
    v_pre = np.empty_like(spikes)
    for t in range(1, T + 1):
        v_pre[t - 1] = v
        p = np.clip(v / (theta_b * (T - t + 1)), 0.0, 1.0)
        keys = _bernoulli_keys(run_seed, sample_indices, layer_index, TAG_TPP, t)
        u = rz.uniforms_2d(keys, n).reshape(acc.shape)
        s = (u < p).astype(np.float64)
        v = v - theta_b * s
        spikes[t - 1] = s
    return spikes, v_pre, v


def shuffle_spikes(spike_trains: np.ndarray, scope: str, run_seed: int,
                   sample_index: int = 0, layer_index: int = 0) -> np.ndarray:
    """Permute a (T, n) spike train along time.

    shared: one uniform permutation applied to every neuron's train (the
    single-pi setting of the permutation-expectation theorem); per-neuron:
    an independent permutation per neuron.  Per-neuron spike counts are
    preserved exactly either way.
    """
    trains = np.asarray(spike_trains, dtype=np.float64)
    T = trains.shape[0]
    if T == 1:
        return trains.copy()
    if scope == "shared":
        key = rz.chain_key(run_seed, sample_index, layer_index, TAG_SHUFFLE, 0)
        return trains[rz.permutation(key, T)]
    if scope != "per-neuron":
        raise ValueError(f"unknown shuffle scope {scope!r}")
    flat = trains.reshape(T, -1)
    # argsort of iid uniforms along time = independent uniform permutations
    u = np.stack([
        rz.uniforms(
            rz.chain_key(run_seed, sample_index, layer_index, TAG_SHUFFLE_NEURON, t),
            flat.shape[1],
        )
        for t in range(1, T + 1)
    ])
    order = np.argsort(u, axis=0, kind="stable")
    out = np.take_along_axis(flat, order, axis=0)
    return out.reshape(trains.shape)


def _apply_static_layer(layer: Layer, drive: np.ndarray) -> np.ndarray:
    """Apply a non-spiking layer to every time step of (T, B, *feat)."""
    T, B = drive.shape[0], drive.shape[1]
    if layer.kind == "linear":
        return apply_linear(layer, drive)
    if layer.kind == "flatten":
        return drive.reshape(T, B, -1)
    if layer.kind == "avgpool":
        k = layer.params["k"]
        stride = layer.params.get("stride", k)
        out0 = tz.avgpool2d(drive[0, 0], k, stride)
        out = np.empty((T, B) + out0.shape)
        for t in range(T):
            for b in range(B):
                out[t, b] = tz.avgpool2d(drive[t, b], k, stride)
        return out
    if layer.kind == "conv2d":
        w = layer.params["w"]
        stride = layer.params.get("stride", 1)
        pad = layer.params.get("pad", 0)
        bias = layer.params.get("b")
        out0 = tz.conv2d(drive[0, 0], w, stride, pad)
        out = np.empty((T, B) + out0.shape)
        for t in range(T):
            for b in range(B):
                out[t, b] = tz.conv2d(drive[t, b], w, stride, pad)
        if bias is not None:
            out = out + bias[None, None, :, None, None]
        return out
    raise tz.DimensionError(f"layer kind {layer.kind!r} cannot appear in a converted model")


def snn_forward(converted: ConvertedModel, x: np.ndarray, T: int,
                mode: NeuronMode, run_seed: int,
                sample_indices: np.ndarray | None = None,
                record: str = "counts"):
    """Simulate the converted model for T steps per layer.

    x: one sample (input_shape) or a batch with a leading axis.
    record: "counts" keeps per-step spike counts and residues;
            "full" additionally keeps spike trains, pre-fire potentials
            and input currents for every spiking layer.
    Returns (logits, SimTrace).  Logits are the average head drive over T
    (non-spiking accumulator readout).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    model = converted.graph
    x = tz.as_tensor(x)
    single = x.shape == tuple(model.input_shape)
    if single:
        x = x[None]
    elif x.shape[1:] != tuple(model.input_shape):
        raise tz.DimensionError(f"input {x.shape} does not match {model.input_shape}")
    B = x.shape[0]
    if sample_indices is None:
        sample_indices = np.arange(B)
    sample_indices = np.asarray(sample_indices)

    if mode.input_encoding == "constant":
        drive = np.broadcast_to(x, (T,) + x.shape).copy()
    elif mode.input_encoding == "rate":
        if np.any(x < 0) or np.any(x > 1):
            raise ValueError("rate encoding requires inputs in [0, 1]")
        n = int(np.prod(x.shape[1:]))
        drive = np.empty((T,) + x.shape)
        for t in range(1, T + 1):
            keys = _bernoulli_keys(run_seed, sample_indices, 0, TAG_INPUT, t)
            u = rz.uniforms_2d(keys, n).reshape(x.shape)
            drive[t - 1] = (u < x).astype(np.float64)
    else:
        raise ValueError(f"unknown input encoding {mode.input_encoding!r}")

    trace = SimTrace(T=T, mode=mode)
    sites = converted.activation_sites()
    site_no = 0
    for li, layer in enumerate(model.layers):
        if layer.kind != "activation":
            drive = _apply_static_layer(layer, drive)
            continue
        theta = converted.plan.theta_for(site_no)
        theta_b = theta_broadcast(theta, drive.shape[2:])
        if mode.variant == "tpp":
            acc = drive.sum(axis=0)
            spikes, v_pre, residue = tpp_spike_trains(
                acc, theta, T, run_seed, sample_indices, layer_index=li)
            v0 = acc
        else:
            spikes, v_pre, v0, residue = _if_site(drive, theta_b, mode.init_potential)
            acc = None
            if mode.variant == "shuffle":
                for b in range(B):
                    spikes[:, b] = shuffle_spikes(
                        spikes[:, b], mode.shuffle_scope, run_seed,
                        sample_index=int(sample_indices[b]), layer_index=li)
        counts = spikes.reshape(T, B, -1).sum(axis=2)
        st = SiteTrace(layer_index=li, theta=theta, counts=counts,
                       v0=v0, residue=residue)
        if record == "full":
            st.spikes = spikes
            st.v_pre = v_pre
            st.drive = drive
            st.accumulated = acc
        trace.sites.append(st)
        out_value = spikes if converted.absorbed else theta_b * spikes
        drive = out_value
        site_no += 1

    # head readout: average accumulated output current over T
    if model.layers[-1].kind == "activation" and converted.absorbed:
        # trailing spiking head: binary spikes must be re-scaled by theta
        trailing = converted.plan.theta_for(len(sites) - 1)
        trace.out_scale = float(np.asarray(trailing).ravel()[0])
    trace.out_cum = np.cumsum(drive, axis=0)
    logits = trace.logits
    if single:
        logits = logits[0]
    return logits, trace


def snn_forward_baseline(converted, x, T, run_seed=0, **kw):
    return snn_forward(converted, x, T, NeuronMode("baseline"), run_seed, **kw)


def snn_forward_shuffle(converted, x, T, run_seed=0, scope="shared", **kw):
    return snn_forward(converted, x, T, NeuronMode("shuffle", shuffle_scope=scope),
                       run_seed, **kw)


def snn_forward_tpp(converted, x, T, run_seed=0, **kw):
    return snn_forward(converted, x, T, NeuronMode("tpp"), run_seed, **kw)


def tpp_layer(accumulated, theta, T, run_seed=0, sample_indices=None,
              layer_index=0):
    """Spec-facing TPP primitive: (spike trains, residues) from a
    phase-1 accumulation.

    A scalar or 1-d ``accumulated`` is treated as a batch of independent
    scalar neurons (one stream each); higher ranks keep the leading axis
    as the batch.
    """
    acc = tz.as_tensor(accumulated)
    squeeze = acc.ndim <= 1
    if squeeze:
        acc = np.atleast_1d(acc)[:, None]
    spikes, _, residue = tpp_spike_trains(acc, theta, T, run_seed,
                                          sample_indices, layer_index)
    if squeeze:
        return spikes[:, :, 0], residue[:, 0]
    return spikes, residue

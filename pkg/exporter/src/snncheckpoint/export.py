"""Flatten a torch module into the portable weight-directory format.

The exporter is a faithful serializer: no calibration, folding, or
weight rewriting happens here.  Supported layers are Linear, Conv2d,
BatchNorm1d/2d, AvgPool2d, Flatten, and ReLU; everything else is either
a hard error or, under the ``warn-skip`` policy, recorded as skipped
(parameterized layers are never skippable — dropping weights would
silently change the function).
"""

from __future__ import annotations

import json
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

FORMAT_VERSION = 1


class ExportError(ValueError):
    pass


class UnsupportedLayerError(ExportError):
    def __init__(self, name: str, module: nn.Module):
        super().__init__(
            f"unsupported layer {name!r} ({type(module).__name__}); "
            "rerun with --skip-unsupported to drop parameter-free layers")
        self.layer_name = name


@dataclass
class ExportPlan:
    """Ordered mapping from source layers to portable layer records."""
    source: str
    records: list = field(default_factory=list)   # (source_name, kind, tensors, attrs, activation)
    skipped: list = field(default_factory=list)   # source names dropped under warn-skip


def _as_f32(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype("<f4")


def _pair(v, what: str) -> int:
    if isinstance(v, (tuple, list)):
        if v[0] != v[1]:
            raise ExportError(f"anisotropic {what} {v} not representable")
        v = v[0]
    return int(v)


def _iter_leaves(module: nn.Module):
    children = list(module.named_children())
    if not children:
        yield "", module
        return
    for name, child in children:
        for sub, leaf in _iter_leaves(child):
            yield f"{name}.{sub}" if sub else name, leaf


def plan_from_module(module: nn.Module, source: str = "<module>",
                     policy: str = "error") -> ExportPlan:
    """Walk the module's leaves in forward (registration) order."""
    if policy not in ("error", "warn-skip"):
        raise ExportError(f"unknown unsupported-layer policy {policy!r}")
    plan = ExportPlan(source)
    for name, leaf in _iter_leaves(module):
        if isinstance(leaf, nn.Linear):
            tensors = {"w": _as_f32(leaf.weight)}
            if leaf.bias is not None:
                tensors["b"] = _as_f32(leaf.bias)
            plan.records.append((name, "linear", tensors, {}, None))
        elif isinstance(leaf, nn.Conv2d):
            if leaf.groups != 1 or any(d != 1 for d in leaf.dilation):
                raise UnsupportedLayerError(name, leaf)
            tensors = {"w": _as_f32(leaf.weight)}
            if leaf.bias is not None:
                tensors["b"] = _as_f32(leaf.bias)
            attrs = {"stride": _pair(leaf.stride, "stride"),
                     "pad": _pair(leaf.padding, "padding")}
            plan.records.append((name, "conv2d", tensors, attrs, None))
        elif isinstance(leaf, (nn.BatchNorm1d, nn.BatchNorm2d)):
            tensors = {
                "gamma": _as_f32(leaf.weight),
                "beta": _as_f32(leaf.bias),
                "mean": _as_f32(leaf.running_mean),
                "var": _as_f32(leaf.running_var),
            }
            plan.records.append((name, "batchnorm", tensors,
                                 {"eps": float(leaf.eps)}, None))
        elif isinstance(leaf, nn.AvgPool2d):
            k = _pair(leaf.kernel_size, "kernel size")
            stride = _pair(leaf.stride if leaf.stride is not None else k, "stride")
            plan.records.append((name, "avgpool", {},
                                 {"k": k, "stride": stride}, None))
        elif isinstance(leaf, nn.Flatten):
            plan.records.append((name, "flatten", {}, {}, None))
        elif isinstance(leaf, nn.ReLU):
            plan.records.append((name, "activation", {}, {},
                                 {"family": "relu", "theta": None,
                                  "levels": None, "shift": 0.5}))
        elif isinstance(leaf, (nn.Dropout, nn.Identity)):
            plan.skipped.append(name)  # inference no-ops, always droppable
        else:
            has_params = any(True for _ in leaf.parameters())
            if policy == "error" or has_params:
                raise UnsupportedLayerError(name, leaf)
            print(f"warning: skipping unsupported layer {name!r} "
                  f"({type(leaf).__name__})", file=sys.stderr)
            plan.skipped.append(name)
    if not plan.records:
        raise ExportError("module has no exportable layers")
    return plan


def export(module: nn.Module, input_shape, out_dir, source: str = "<module>",
           policy: str = "error") -> list:
    """Write manifest.json + weights.bin; returns a per-layer shape table
    (source name, kind, tensor shapes) in forward order."""
    plan = plan_from_module(module, source=source, policy=policy)
    blob = bytearray()
    layers = []
    table = []
    for name, kind, tensors, attrs, activation in plan.records:
        recs = {}
        for key in sorted(tensors):
            raw = np.ascontiguousarray(tensors[key]).tobytes()
            recs[key] = {
                "shape": list(tensors[key].shape),
                "offset": len(blob),
                "length": len(raw),
                "crc32": zlib.crc32(raw),
            }
            blob.extend(raw)
        layers.append({"kind": kind, "tensors": recs, "attrs": attrs,
                       "activation": activation})
        table.append((name, kind,
                      {k: tuple(t.shape) for k, t in tensors.items()}))
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(input_shape),
        "layers": layers,
        "source": source,
        "skipped_layers": plan.skipped,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "weights.bin").write_bytes(bytes(blob))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True))
    return table


def build_arch(arch: str) -> tuple[nn.Module, tuple]:
    """Known desk-scale architectures; returns (module, input_shape)."""
    if arch == "mlp":
        module = nn.Sequential(
            nn.Flatten(),
            nn.Linear(64, 48), nn.ReLU(),
            nn.Linear(48, 48), nn.ReLU(),
            nn.Linear(48, 10),
        )
        return module, (1, 8, 8)
    if arch == "vgg-small":
        module = nn.Sequential(
            nn.Conv2d(1, 8, 3, padding=1), nn.BatchNorm2d(8), nn.ReLU(),
            nn.AvgPool2d(2),
            nn.Conv2d(8, 16, 3, padding=1), nn.BatchNorm2d(16), nn.ReLU(),
            nn.AvgPool2d(2),
            nn.Flatten(),
            nn.Linear(16 * 2 * 2, 10),
        )
        return module, (1, 8, 8)
    raise ExportError(f"unknown architecture {arch!r}")

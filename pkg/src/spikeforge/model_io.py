"""Portable weight files, dataset ingestion, and report emission.

Weight format (normative, format_version 1): a directory holding
``manifest.json`` and ``weights.bin``.  The blob is the concatenation of
all tensors as little-endian IEEE-754 float32, row-major.  Each manifest
layer record names its tensors with byte offset, byte length, shape and
a CRC-32 of the raw bytes.  See README for the field-by-field layout.
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tz
from .graph import ActivationSpec, Layer, ModelGraph, StructureError

FORMAT_VERSION = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    """Malformed weight or dataset file."""


class ChecksumError(FormatError):
    """Stored CRC-32 does not match blob contents."""


class VersionError(FormatError):
    """Unsupported weight format version."""


@dataclass
class DatasetHandle:
    name: str
    split: str
    features: np.ndarray          # (N, *feature_shape), float64
    labels: np.ndarray            # (N,), int64 in [0, num_classes)
    num_classes: int
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = tz.as_tensor(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) == 0:
            raise FormatError("dataset has no samples")
        if len(self.features) != len(self.labels):
            raise FormatError(
                f"feature/label count mismatch: {len(self.features)} vs {len(self.labels)}"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise FormatError("labels outside [0, num_classes)")

    @property
    def feature_shape(self):
        return self.features.shape[1:]

    def __len__(self):
        return len(self.labels)


# --- weight files -----------------------------------------------------------

_ATTR_KEYS = ("stride", "pad", "k", "eps")


def _activation_to_json(spec: ActivationSpec | None):
    if spec is None:
        return None
    return {"family": spec.family, "theta": spec.theta,
            "levels": spec.levels, "shift": spec.shift}


def _activation_from_json(d):
    if d is None:
        return None
    return ActivationSpec(family=d["family"], theta=d.get("theta"),
                          levels=d.get("levels"), shift=d.get("shift", 0.5))


def write_weights(model: ModelGraph, path, extra: dict | None = None) -> None:
    """Serialize a model into ``path``/manifest.json + weights.bin.

    ``extra`` merges additional top-level manifest fields (e.g. the
    threshold plan written by the calibrator).
    """
    if not model.layers:
        raise StructureError("refusing to write a model with no layers")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    records = []
    for layer in model.layers:
        tensors = {}
        attrs = {}
        for key, val in sorted(layer.params.items()):
            if isinstance(val, np.ndarray):
                raw = np.ascontiguousarray(val, dtype="<f4").tobytes()
                tensors[key] = {
                    "shape": list(val.shape),
                    "offset": len(blob),
                    "length": len(raw),
                    "crc32": zlib.crc32(raw),
                }
                blob.extend(raw)
            elif key in _ATTR_KEYS:
                attrs[key] = val
        records.append({
            "kind": layer.kind,
            "tensors": tensors,
            "attrs": attrs,
            "activation": _activation_to_json(layer.activation),
        })
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "layers": records,
    }
    if extra:
        manifest.update(extra)
    (path / "weights.bin").write_bytes(bytes(blob))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_weights(path) -> tuple[ModelGraph, dict]:
    """Load a model directory; returns (model, manifest)."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as e:
        raise FormatError(f"missing manifest: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"unsupported format_version {manifest.get('format_version')}")
    blob = (path / "weights.bin").read_bytes()

    spans = []
    layers = []
    for rec in manifest["layers"]:
        params = {}
        for key, t in rec["tensors"].items():
            off, length = t["offset"], t["length"]
            if off < 0 or off + length > len(blob):
                raise FormatError(f"tensor {key!r} blob span out of bounds (truncated file?)")
            spans.append((off, off + length))
            raw = blob[off : off + length]
            if zlib.crc32(raw) != t["crc32"]:
                raise ChecksumError(f"checksum mismatch for tensor {key!r}")
            arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            expected = int(np.prod(t["shape"])) if t["shape"] else 1
            if arr.size != expected:
                raise FormatError(f"tensor {key!r} length disagrees with shape")
            params[key] = arr.reshape(t["shape"])
        params.update(rec.get("attrs", {}))
        layers.append(Layer(rec["kind"], params,
                            _activation_from_json(rec.get("activation"))))
    spans.sort()
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise FormatError("overlapping tensor blobs")
    if not layers:
        raise StructureError("manifest has no layers")
    return ModelGraph(layers, tuple(manifest["input_shape"])), manifest


# --- datasets ---------------------------------------------------------------

def _read_idx(path, expect_magic: int):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != expect_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}i", raw[4 : 4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise FormatError(f"{path}: payload size disagrees with declared dims {dims}")
    return data.reshape(dims)


def load_idx(images_path, labels_path, name: str = "idx", split: str = "all") -> DatasetHandle:
    """Standard big-endian IDX3 image / IDX1 label pair, pixels scaled to [0,1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise FormatError(f"image/label count mismatch: {len(images)} vs {len(labels)}")
    feats = images.astype(np.float64)[:, None, :, :] / 255.0  # (N, 1, H, W)
    n_classes = int(labels.max()) + 1
    return DatasetHandle(name, split, feats, labels.astype(np.int64), n_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (N, H, W) and labels (N,) as IDX3/IDX1."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


XOR_CORNERS = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
XOR_LABELS = np.array([0, 1, 1, 0])


def synth_dataset(kind: str, n: int, seed: int = 0, classes: int = 2,
                  separation: float = 6.0, dim: int = 2) -> DatasetHandle:
    """Deterministic synthetic classification data: 'xor' or 'gaussian-blobs'."""
    if n <= 0:
        raise FormatError("n must be positive")
    rng = np.random.default_rng(seed)
    if kind == "xor":
        idx = np.arange(n) % 4
        return DatasetHandle("xor", "all", XOR_CORNERS[idx], XOR_LABELS[idx], 2)
    if kind == "gaussian-blobs":
        if classes > dim + (classes == 2):
            raise FormatError(f"{classes} separated blobs need dim >= {classes}")
        if classes == 2:
            u = rng.normal(size=dim)
            u /= max(np.linalg.norm(u), 1e-12)
            centers = np.stack([-u, u]) * (separation / 2.0)
        else:
            # orthonormal directions scaled so every pairwise distance is
            # exactly `separation` (in units of the blobs' unit sigma)
            q, _ = np.linalg.qr(rng.normal(size=(dim, classes)))
            centers = q.T * (separation / np.sqrt(2.0))
        labels = rng.integers(0, classes, size=n)
        feats = centers[labels] + rng.normal(size=(n, dim))
        return DatasetHandle("gaussian-blobs", "all", feats, labels, classes)
    raise FormatError(f"unknown synthetic dataset kind {kind!r}")


def load_digits_dataset(split: str = "train", test_fraction: float = 0.25,
                        seed: int = 0) -> DatasetHandle:
    """The bundled scikit-learn 8x8 handwritten-digits set, values in [0,1].

    Offline desk-scale stand-in for MNIST; the split is a fixed seeded
    permutation so train/test are stable across runs.
    """
    from sklearn.datasets import load_digits  # test/CLI dependency only

    feats, labels = load_digits(return_X_y=True)
    feats = feats / 16.0
    order = np.random.default_rng(seed).permutation(len(labels))
    n_test = int(round(test_fraction * len(labels)))
    idx = order[:-n_test] if split == "train" else order[-n_test:]
    return DatasetHandle("digits", split, feats[idx], labels[idx], 10)


# --- reports ----------------------------------------------------------------

def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)  # RFC-4180 quoting
        writer.writerow(header)
        writer.writerows(rows)


def write_json_report(path, payload: dict, schema: str = "spikeforge-report/1") -> None:
    out = {"schema_version": schema, **payload}
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")

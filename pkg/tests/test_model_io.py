import csv
import json

import numpy as np
import pytest

from spikeforge.graph import ModelGraph, StructureError, ann_forward, make_mlp
from spikeforge.model_io import (ChecksumError, FormatError, VersionError,
                                 load_idx, read_weights, synth_dataset,
                                 write_csv, write_idx, write_json_report,
                                 write_weights)


@pytest.fixture
def mlp():
    return make_mlp([4, 6, 3], seed=0)


# --- weight files -------------------------------------------------------------

def test_roundtrip_forward_within_1e7(mlp, tmp_path):
    write_weights(mlp, tmp_path / "m")
    loaded, _ = read_weights(tmp_path / "m")
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 1.0, size=(100, 4))
    dev = np.max(np.abs(ann_forward(mlp, x) - ann_forward(loaded, x)))
    assert dev <= 1e-7


def test_roundtrip_preserves_structure(mlp, tmp_path):
    write_weights(mlp, tmp_path / "m")
    loaded, manifest = read_weights(tmp_path / "m")
    assert manifest["format_version"] == 1
    assert [l.kind for l in loaded.layers] == [l.kind for l in mlp.layers]
    for l1, l2 in zip(loaded.layers, mlp.layers):
        for key, val in l2.params.items():
            if isinstance(val, np.ndarray):
                assert l1.params[key].shape == val.shape


def test_corrupt_blob_byte_raises_checksum_error(mlp, tmp_path):
    write_weights(mlp, tmp_path / "m")
    blob_path = tmp_path / "m" / "weights.bin"
    blob = bytearray(blob_path.read_bytes())
    blob[7] ^= 0xFF
    blob_path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        read_weights(tmp_path / "m")


def test_truncated_blob_raises(mlp, tmp_path):
    write_weights(mlp, tmp_path / "m")
    blob_path = tmp_path / "m" / "weights.bin"
    blob_path.write_bytes(blob_path.read_bytes()[:10])
    with pytest.raises(FormatError):
        read_weights(tmp_path / "m")


def test_version_mismatch_raises(mlp, tmp_path):
    write_weights(mlp, tmp_path / "m")
    mpath = tmp_path / "m" / "manifest.json"
    manifest = json.loads(mpath.read_text())
    manifest["format_version"] = 99
    mpath.write_text(json.dumps(manifest))
    with pytest.raises(VersionError):
        read_weights(tmp_path / "m")


def test_empty_model_refused(tmp_path):
    with pytest.raises(StructureError):
        write_weights(ModelGraph([], (2,)), tmp_path / "m")


def test_reserialization_byte_identical(mlp, tmp_path):
    write_weights(mlp, tmp_path / "a")
    write_weights(mlp, tmp_path / "b")
    assert (tmp_path / "a" / "weights.bin").read_bytes() == \
           (tmp_path / "b" / "weights.bin").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_text() == \
           (tmp_path / "b" / "manifest.json").read_text()


# --- IDX ------------------------------------------------------------------------

def test_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(4, 28, 28), dtype=np.uint8)
    labels = np.array([0, 1, 2, 1], dtype=np.uint8)
    write_idx(images, labels, tmp_path / "img", tmp_path / "lbl")
    data = load_idx(tmp_path / "img", tmp_path / "lbl")
    assert len(data) == 4
    assert data.feature_shape == (1, 28, 28)
    assert data.features.min() >= 0.0 and data.features.max() <= 1.0
    assert np.array_equal(data.labels, labels)


def test_idx_bad_magic(tmp_path):
    (tmp_path / "img").write_bytes(b"\x00\x00\x00\x00" + b"\x00" * 16)
    with pytest.raises(FormatError):
        load_idx(tmp_path / "img", tmp_path / "img")


def test_idx_count_mismatch(tmp_path):
    rng = np.random.default_rng(0)
    write_idx(rng.integers(0, 256, (4, 5, 5), dtype=np.uint8),
              np.zeros(4, dtype=np.uint8), tmp_path / "img4", tmp_path / "lbl4")
    write_idx(rng.integers(0, 256, (3, 5, 5), dtype=np.uint8),
              np.zeros(3, dtype=np.uint8), tmp_path / "img3", tmp_path / "lbl3")
    with pytest.raises(FormatError):
        load_idx(tmp_path / "img4", tmp_path / "lbl3")


# --- synthetic datasets ------------------------------------------------------------

def test_xor_corners():
    data = synth_dataset("xor", 4)
    assert np.array_equal(data.features,
                          [[0, 0], [0, 1], [1, 0], [1, 1]])
    assert np.array_equal(data.labels, [0, 1, 1, 0])


def test_synth_deterministic():
    a = synth_dataset("gaussian-blobs", 100, seed=5)
    b = synth_dataset("gaussian-blobs", 100, seed=5)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_blobs_linearly_separable():
    data = synth_dataset("gaussian-blobs", 1000, seed=0, separation=6.0)
    # nearest-centroid is a linear classifier; 6-sigma blobs are easy
    centroids = np.stack([data.features[data.labels == c].mean(axis=0)
                          for c in range(data.num_classes)])
    pred = np.argmin(((data.features[:, None, :] - centroids) ** 2).sum(-1), axis=1)
    assert np.mean(pred == data.labels) >= 0.99


def test_label_range_validated():
    with pytest.raises(FormatError):
        synth_dataset("gaussian-blobs", 0)


# --- reports ----------------------------------------------------------------------

def test_csv_rfc4180_quoting(tmp_path):
    path = tmp_path / "r.csv"
    write_csv(path, ("a", "b"), [("x,y", 'he said "hi"')])
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows == [["a", "b"], ["x,y", 'he said "hi"']]


def test_json_report_schema_version(tmp_path):
    path = tmp_path / "r.json"
    write_json_report(path, {"value": 1})
    payload = json.loads(path.read_text())
    assert payload["schema_version"].startswith("spikeforge-report/")
    assert payload["value"] == 1

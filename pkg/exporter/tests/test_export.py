import numpy as np
import pytest
import torch
from torch import nn

from snncheckpoint import (UnsupportedLayerError, build_arch, cli, export,
                           plan_from_module)
from spikeforge.graph import ann_forward
from spikeforge.model_io import read_weights


@pytest.fixture
def cnn():
    torch.manual_seed(0)
    module, input_shape = build_arch("vgg-small")
    module.eval()
    # nonzero BN running stats so folding-free export is actually exercised
    for m in module.modules():
        if isinstance(m, nn.BatchNorm2d):
            m.running_mean.normal_(0.0, 0.2)
            m.running_var.uniform_(0.5, 1.5)
    return module, input_shape


def test_roundtrip_logits_within_1e4(cnn, tmp_path):
    module, input_shape = cnn
    export(module, input_shape, tmp_path / "m")
    model, manifest = read_weights(tmp_path / "m")
    assert manifest["format_version"] == 1
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 1.0, size=(20, *input_shape))
    with torch.no_grad():
        ref = module(torch.tensor(x, dtype=torch.float32)).numpy()
    got = ann_forward(model, x)
    assert np.max(np.abs(got - ref)) <= 1e-4


def test_mlp_roundtrip(tmp_path):
    torch.manual_seed(1)
    module, input_shape = build_arch("mlp")
    module.eval()
    export(module, input_shape, tmp_path / "m")
    model, _ = read_weights(tmp_path / "m")
    rng = np.random.default_rng(1)
    x = rng.uniform(0.0, 1.0, size=(20, *input_shape))
    with torch.no_grad():
        ref = module(torch.tensor(x, dtype=torch.float32)).numpy()
    assert np.max(np.abs(ann_forward(model, x) - ref)) <= 1e-4


def test_reexport_byte_identical(cnn, tmp_path):
    module, input_shape = cnn
    export(module, input_shape, tmp_path / "a")
    export(module, input_shape, tmp_path / "b")
    assert (tmp_path / "a" / "weights.bin").read_bytes() == \
           (tmp_path / "b" / "weights.bin").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == \
           (tmp_path / "b" / "manifest.json").read_bytes()


def test_layer_order_matches_forward_order(cnn, tmp_path):
    module, input_shape = cnn
    export(module, input_shape, tmp_path / "m")
    model, _ = read_weights(tmp_path / "m")
    assert [l.kind for l in model.layers] == [
        "conv2d", "batchnorm", "activation", "avgpool",
        "conv2d", "batchnorm", "activation", "avgpool",
        "flatten", "linear",
    ]


def test_unsupported_layer_error_names_layer():
    module = nn.Sequential(nn.Conv2d(1, 4, 3), nn.ReLU(), nn.MaxPool2d(2))
    with pytest.raises(UnsupportedLayerError, match="2"):
        plan_from_module(module)


def test_warn_skip_never_drops_parameterized_layers():
    module = nn.Sequential(nn.Linear(4, 4), nn.PReLU())  # PReLU has weights
    with pytest.raises(UnsupportedLayerError, match="1"):
        plan_from_module(module, policy="warn-skip")


def test_warn_skip_drops_parameter_free_layer(capsys):
    module = nn.Sequential(nn.Linear(4, 4), nn.ReLU(), nn.MaxPool2d(2))
    plan = plan_from_module(module, policy="warn-skip")
    assert plan.skipped == ["2"]
    assert "skipping unsupported layer" in capsys.readouterr().err


def test_dropout_is_silently_skipped(tmp_path):
    module = nn.Sequential(nn.Linear(4, 4), nn.Dropout(0.5), nn.ReLU(),
                           nn.Linear(4, 2))
    module.eval()
    export(module, (4,), tmp_path / "m")
    model, manifest = read_weights(tmp_path / "m")
    assert [l.kind for l in model.layers] == ["linear", "activation", "linear"]
    assert manifest["skipped_layers"] == ["1"]


def test_cli_export_roundtrip(tmp_path, capsys):
    torch.manual_seed(2)
    module, input_shape = build_arch("mlp")
    ckpt = tmp_path / "model.pt"
    torch.save(module.state_dict(), ckpt)
    out = tmp_path / "exported"
    assert cli.main(["export", "--ckpt", str(ckpt), "--arch", "mlp",
                     "--out", str(out)]) == 0
    assert "exported 6 layers" in capsys.readouterr().out
    model, _ = read_weights(out)
    module.eval()
    rng = np.random.default_rng(2)
    x = rng.uniform(0.0, 1.0, size=(5, *input_shape))
    with torch.no_grad():
        ref = module(torch.tensor(x, dtype=torch.float32)).numpy()
    assert np.max(np.abs(ann_forward(model, x) - ref)) <= 1e-4


def test_cli_missing_checkpoint_fails(tmp_path, capsys):
    assert cli.main(["export", "--ckpt", str(tmp_path / "nope.pt"),
                     "--arch", "mlp", "--out", str(tmp_path / "o")]) == 1
    assert "error:" in capsys.readouterr().err

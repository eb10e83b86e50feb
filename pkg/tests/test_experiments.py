import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pearson
from xycoord.coords import append_coords, make_position_grids
from xycoord.data import MnistData
from xycoord.errors import ConfigError
from xycoord.experiments import (
    DEFAULT_SHIFTS,
    ExperimentConfig,
    dump_feature_maps,
    exp_mnist,
    exp_translation,
    exp_vae,
    load_schema,
    mask_correlation,
    validate_report,
    write_report,
)
from xycoord.imageio import normalize, read_png, write_png
from xycoord.models import NetworkSpec, build_classifier, joint_position_matrix
from xycoord.nn import RngState
from xycoord.train import Metrics


def fake_mnist(n_train=600, n_test=60, seed=0):
    """Synthetic 28x28 digits: a label-dependent horizontal bar on noise."""
    rng = np.random.default_rng(seed)

    def make(n):
        labels = rng.integers(0, 10, n)
        imgs = rng.uniform(0, 0.1, (n, 1, 28, 28)).astype(np.float32)
        for i, y in enumerate(labels):
            imgs[i, 0, 4 + 2 * y:6 + 2 * y, 6:22] = 1.0
        return imgs, labels

    tr, trl = make(n_train)
    te, tel = make(n_test)
    return MnistData(tr, trl, te, tel)


SMALL = dict(subset=64, val_count=50, test_subset=40, epochs=1, hidden_width=16, batch_size=32)


@pytest.fixture(scope="module")
def fake():
    return fake_mnist()


def test_default_shift_grid():
    assert len(DEFAULT_SHIFTS) == 25 and (0, 0) in DEFAULT_SHIFTS
    assert {dx for dx, _ in DEFAULT_SHIFTS} == {-4, -2, 0, 2, 4}


def test_illegal_shift_rejected(fake):
    with pytest.raises(ConfigError, match="shift"):
        exp_translation(ExperimentConfig(shifts=((30, 0),), **SMALL), data=fake)


def test_mnist_report_schema_and_deltas(fake, tmp_path):
    out = tmp_path / "r.json"
    report = exp_mnist(ExperimentConfig(seeds=(1, 2), **SMALL), data=fake, out=out)
    write_report(report, out)
    back = json.loads(out.read_text())
    validate_report(back)
    v = back["variants"]
    for d, b, c in zip(back["deltas"]["per_seed"], v["baseline"]["runs"], v["coord"]["runs"]):
        assert d["accuracy"] == c["test"]["accuracy"] - b["test"]["accuracy"]
        assert b["config_hash"] == c["config_hash"]
        assert [e["batch_order_hash"] for e in b["history"]] == [e["batch_order_hash"] for e in c["history"]]
    assert back["deltas"]["median_accuracy_delta"] == float(np.median([d["accuracy"] for d in back["deltas"]["per_seed"]]))
    assert back["reference"]["coord_test_accuracy"] == 0.9984
    for rel in back["artifacts"]:
        assert (tmp_path / rel).is_file()
    assert any(a.endswith(".ckpt") for a in back["artifacts"])


def test_schema_rejects_broken_reports(fake):
    report = exp_mnist(ExperimentConfig(**SMALL), data=fake)
    validate_report(report)
    bad = json.loads(json.dumps(report))
    bad["schema_version"] = 2
    with pytest.raises(jsonschema.ValidationError):
        validate_report(bad)
    bad = json.loads(json.dumps(report))
    del bad["deltas"]
    with pytest.raises(jsonschema.ValidationError):
        validate_report(bad)
    assert load_schema()["properties"]["schema_version"]["const"] == 1


def test_translation_matrix_and_identity_shift(fake):
    report = exp_translation(ExperimentConfig(**SMALL), data=fake)
    for name in ("baseline", "coord"):
        run = report["variants"][name]["runs"][0]
        assert len(run["translation"]) == 25
        zero = next(r for r in run["translation"] if (r["dx"], r["dy"]) == (0, 0))
        assert zero["accuracy"] == run["test"]["accuracy"]
    assert len(report["deltas"]["per_shift"]) == 25


def test_blank_image_classified_identically_under_any_shift():
    from xycoord.data import translate
    from xycoord.models import predict

    for c in (1, 3):
        net = build_classifier(NetworkSpec(input_channels=c, hidden_width=16), RngState(0))
        blank = np.zeros((1, 1, 28, 28), np.float32)
        moved = translate(blank, 4, -2)
        prep = append_coords if c == 3 else (lambda x: x)
        a, _ = predict(net, prep(blank))
        b, _ = predict(net, prep(moved))
        assert np.array_equal(a, b)


def _zero_first_layer(net):
    w = net.layer("conv1").weight
    b = net.layer("conv1").bias
    w.value[...] = 0
    b.value[...] = 0
    return w


def test_dump_zero_weight_layer_all_blank(tmp_path):
    net = build_classifier(NetworkSpec(), RngState(0))
    _zero_first_layer(net)
    samples = fake_mnist(10, 10).test_images[:8]
    dump = dump_feature_maps(net, samples, "conv1", 1e-6, tmp_path)
    assert dump.blank_count == 32 == len(dump.variances)
    assert len(dump.paths) == 32 and all(p.is_file() for p in dump.paths)
    assert not read_png(dump.paths[0]).any()


def test_dump_single_active_filter(tmp_path):
    net = build_classifier(NetworkSpec(), RngState(0))
    w = _zero_first_layer(net)
    w.value[0, 0, 2, 2] = 1.0
    dump = dump_feature_maps(net, fake_mnist(10, 10).test_images[:8], "conv1")
    assert dump.blank_count == 31
    assert dump.variances[0] > 0 and all(v == 0 for v in dump.variances[1:])
    assert dump.activation == "relu1"


def test_dump_from_checkpoint_and_unknown_layer(tmp_path):
    from xycoord.checkpoint import save_checkpoint

    net = build_classifier(NetworkSpec(input_channels=3), RngState(0))
    path = save_checkpoint(net, tmp_path / "n.ckpt")
    dump = dump_feature_maps(path, fake_mnist(10, 10).test_images[:4], "conv2")
    assert 0 <= dump.blank_count <= 64 and all(v >= 0 for v in dump.variances)
    with pytest.raises(ConfigError, match="conv1, relu1"):
        dump_feature_maps(path, fake_mnist(10, 10).test_images[:4], "conv9")


def test_png_round_trip_within_one_level(tmp_path):
    arr = np.random.default_rng(0).standard_normal((28, 28)) * 7 + 3
    back = read_png(write_png(tmp_path / "a.png", arr))
    assert np.abs(back - normalize(arr)).max() <= 1 / 255
    const = read_png(write_png(tmp_path / "c.png", np.full((4, 4), 2.5)))
    assert not const.any()


def test_mask_correlation_against_oracle():
    g = make_position_grids(28, 28, np.float64)
    joint = joint_position_matrix(g.x_channel, g.y_channel)
    digit = np.zeros((28, 28))
    digit[6:22, 12:16] = 0.9
    digit[6:10, 8:20] = 0.7
    mask = (digit > 0.5).astype(float)
    assert mask_correlation(joint, digit) == pytest.approx(pearson(joint - joint.mean(), mask), abs=1e-12)
    assert mask_correlation(mask, digit) == pytest.approx(1.0)
    assert pearson(joint, joint) == pytest.approx(1.0)
    assert mask_correlation(joint, np.zeros((28, 28))) is None


def test_vae_report(fake, tmp_path):
    out = tmp_path / "v.json"
    report = exp_vae(ExperimentConfig(subset=128, epochs=2, batch_size=32, val_count=50), data=fake, out=out)
    write_report(report, out)
    run = report["vae"]["runs"][0]
    assert len(run["epoch_losses"]) == 2 and len(run["mask_correlation"]) == 8
    joints = [a for a in report["artifacts"] if "joint" in a]
    assert len(joints) == 8
    for rel in report["artifacts"]:
        assert (tmp_path / rel).is_file()


@given(n=st.integers(1, 20000), data=st.data())
@settings(max_examples=200, deadline=None)
def test_accuracy_plus_error_rate_is_exactly_one(n, data):
    correct = data.draw(st.integers(0, n))
    acc = correct / n
    m = Metrics(acc, 1.0 - acc, [], [], 0.0, n)
    assert m.accuracy + m.error_rate == 1.0

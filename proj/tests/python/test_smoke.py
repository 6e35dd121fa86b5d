import math
import os

import numpy as np
import pytest

import gatefusenet as gfn

TINY = {"network": {"stem_width": 4, "stage_widths": [8]}, "train": {"epochs": 2, "batch_size": 2}}


def test_focal_loss_reference_value():
    assert gfn.focal_loss([0.0], [1], gamma=2.0, alpha=0.5) == pytest.approx(0.086643, abs=1e-6)


def test_focal_loss_gamma_zero_is_half_bce():
    z, y = [-1.5, 0.3, 2.0], [0, 1, 1]
    bce = 0.0
    for zi, yi in zip(z, y):
        p = 1 / (1 + math.exp(-zi))
        bce -= yi * math.log(p) + (1 - yi) * math.log(1 - p)
    assert gfn.focal_loss(z, y, gamma=0.0, alpha=0.5) == pytest.approx(0.5 * bce / 3, abs=1e-6)


def test_schedule_endpoints():
    assert gfn.cosine_lr(0) == 2e-4
    assert gfn.cosine_lr(30) == 1e-7


def test_auc_with_ties():
    roc = gfn.roc_curve([0.9, 0.5, 0.5, 0.1], [1, 1, 0, 0])
    assert roc["area"] == pytest.approx(0.875)
    assert roc["points"][0][:2] == [0, 0]


def test_metrics_names():
    m = gfn.metrics([0.9, 0.2, 0.7, 0.4], [1, 0, 0, 1])
    for key in ("accuracy", "auc", "aupr", "f1", "npv", "ppv", "precision", "recall", "specificity"):
        assert key in m


def test_bad_inputs_raise_config_error():
    with pytest.raises(gfn.ConfigError):
        gfn.roc_curve([0.1, 0.2], [1, 1])
    with pytest.raises(gfn.ConfigError):
        gfn.focal_loss([0.0], [1], gamma=-1.0)
    with pytest.raises(ValueError):
        gfn.synth_subject({"size": 2})


def test_subject_and_volume_round_trip(tmp_path):
    v = gfn.synth_subject({"size": 16}, label=1, seed=3)
    assert v["qsm"].shape == (16, 16, 16)
    assert v["qsm"].dtype == np.float32
    roi = v["roi"]
    assert np.array_equal(roi, np.round(roi)) and roi.max() >= 1
    path = str(tmp_path / "qsm.gfnvol")
    gfn.write_volume(path, v["qsm"], "QSM")
    back, meta = gfn.read_volume(path)
    assert meta["modality"] == "QSM"
    assert np.array_equal(back, v["qsm"])
    with pytest.raises(OSError):
        gfn.read_volume(str(tmp_path / "missing.gfnvol"))


def test_pipeline(tmp_path):
    data = str(tmp_path / "data")
    s = gfn.synth(data, subjects=16, size=16, seed=7)
    assert (s["hc"], s["pd"]) == (8, 8)
    assert os.path.exists(s["manifest"])

    run = gfn.train(data, str(tmp_path / "runs"), fold=0, config=TINY)
    assert not run["diverged"]
    assert len(run["log"]) == 2
    ckpt = os.path.join(run["dir"], "best.gfn1")
    assert sorted(os.listdir(run["dir"])) == ["best.gfn1", "log.csv", "run.json"]

    rep = gfn.evaluate(data, ckpt, str(tmp_path / "eval"), split="test")
    assert 0.0 <= rep["auc"] <= 1.0
    assert len(rep["scores"]) == len(rep["ids"])
    with pytest.raises(gfn.ConfigError, match="network.fusion"):
        gfn.evaluate(data, ckpt, str(tmp_path / "eval2"), fusion="concat")

    cams = gfn.gradcam(data, ckpt, ["sub-000"], str(tmp_path / "cam"))
    assert cams[0]["id"] == "sub-000"
    cam, meta = gfn.read_volume(str(tmp_path / "cam" / "cam_sub-000.gfnvol"))
    assert cam.shape == (16, 16, 16) and meta["modality"] == "gradcam"
    assert cam.min() >= 0 and cam.max() <= 1
    with pytest.raises(gfn.ConfigError, match="valid ids"):
        gfn.gradcam(data, ckpt, ["nobody"], str(tmp_path / "cam"))


def test_unknown_config_section(tmp_path):
    with pytest.raises(gfn.ConfigError):
        gfn.train(str(tmp_path), str(tmp_path / "r"), config={"trian": {}})

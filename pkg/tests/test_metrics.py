import json
import math

import numpy as np
import pytest

from fmtlab.metrics import dice, evaluate, mse, roi, snr_db, vr


def test_roi_threshold():
    x = np.array([0.0, 1.0, 3.0, 1.0 + 1e-12, 0.99])
    # max is 3, threshold is 1: strictly above
    assert set(roi(x).tolist()) == {2, 3}
    assert roi(np.zeros(5)).size == 0
    assert roi(np.array([])).size == 0
    with pytest.raises(ValueError):
        roi(np.array([1.0, np.nan]))


def test_mse_hand_computed():
    assert mse(np.array([1.0, 2.0]), np.array([0.0, 0.0])) == pytest.approx(2.5)
    assert mse(np.ones(7), np.ones(7)) == 0.0
    with pytest.raises(ValueError):
        mse(np.ones(3), np.ones(4))


def test_dice_cases():
    a = np.array([1.0, 1.0, 0.0, 0.0])
    b = np.array([1.0, 0.0, 1.0, 0.0])
    # ROIs {0,1} and {0,2}: dice = 2*1/4
    assert dice(a, b) == pytest.approx(0.5)
    assert dice(a, a) == 1.0
    assert dice(np.zeros(4), np.zeros(4)) == 1.0
    assert dice(a, np.zeros(4)) == 0.0


def test_vr_cases():
    a = np.array([1.0, 1.0, 1.0, 0.0])
    b = np.array([1.0, 1.0, 0.0, 0.0])
    assert vr(a, b) == pytest.approx(1.5)
    assert vr(b, a) == pytest.approx(2.0 / 3.0)
    assert vr(np.ones(4), np.zeros(4)) == 0.0


def test_snr_hand_computed():
    x_true = np.array([3.0, 4.0])       # sum sq = 25
    x = np.array([3.0, 9.0])            # err sq = 25
    assert snr_db(x, x_true) == pytest.approx(0.0, abs=1e-12)
    assert snr_db(np.array([3.0, 4.0 + 0.5]), x_true) == pytest.approx(
        10 * math.log10(25 / 0.25))
    assert snr_db(x_true, x_true) == math.inf
    with pytest.raises(ValueError):
        snr_db(np.zeros(3), np.zeros(3))


def test_evaluate_report(tmp_path):
    x_true = np.array([0.0, 2.0, 2.0, 0.0])
    x = np.array([0.0, 2.0, 0.0, 0.0])
    rep = evaluate(x, x_true)
    assert rep.mse == pytest.approx(1.0)
    assert rep.dice == pytest.approx(2.0 / 3.0)
    assert rep.vr == pytest.approx(0.5)
    assert rep.roi_recon == 1 and rep.roi_truth == 2
    path = tmp_path / "m.json"
    rep.to_json(path)
    back = json.loads(path.read_text())
    assert back["dice"] == pytest.approx(2.0 / 3.0)


def test_scale_invariance_of_shape_metrics():
    rng = np.random.default_rng(0)
    x = rng.random(100)
    x_true = rng.random(100)
    assert dice(5 * x, x_true) == dice(x, x_true)
    assert vr(5 * x, x_true) == vr(x, x_true)

import json
import math

import numpy as np
import pytest

import pgs


def test_projections():
    np.testing.assert_allclose(pgs.project_w(np.array([0.1, 0.1, 0.1]), 1.5), [0.5, 0.5, 0.5])
    np.testing.assert_allclose(pgs.project_simplex(np.array([2.0, 0.0])), [1.0, 0.0])
    np.testing.assert_allclose(pgs.project_q_regression(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])


def test_dataset_validation_raises():
    with pytest.raises(pgs.Error, match="label out of range at index 1"):
        pgs.WeakDataset.classification(np.zeros((3, 2)), [0, 5, 1], 2)
    with pytest.raises(ValueError):
        pgs.WeakDataset.classification(np.zeros((3, 2)), [0, 5, 1], 2)


def test_uniform_softmax_loss():
    data = pgs.WeakDataset.classification(np.random.default_rng(0).normal(size=(5, 2)), [0, 1, 0, 1, 1], 2)
    spec = pgs.ModelSpec.softmax_regression(2, 2, 0.0)
    theta = np.zeros(spec.param_count)
    loss = pgs.weighted_train_loss(spec, theta, data, pgs.identity_params(data))
    assert loss == pytest.approx(math.log(2.0))
    probs = pgs.predict(spec, theta, data.features)
    np.testing.assert_allclose(probs, 0.5)


def test_pgs_convex_end_to_end():
    train = pgs.gaussian_mixture(80, 3, problem_seed=1, sample_seed=2)
    noisy, mask = pgs.inject_uniform_flip(train, 0.3, 3)
    assert sum(mask) == 24
    val = pgs.gaussian_mixture(30, 3, problem_seed=1, sample_seed=4)
    spec = pgs.ModelSpec.softmax_regression(3, 2, 1e-3)
    ensemble = pgs.make_ensemble(val, 2, 5)
    cfg = pgs.PgsConfig()
    cfg.upper_iters = 3
    cfg.upper_lr = 0.05
    params = pgs.identity_params(noisy)
    report = pgs.pgs_convex(spec, noisy, ensemble, cfg, pgs.default_region(noisy, params))
    assert report.method == "pgs_convex"
    assert len(report.objective_trace) == 4
    assert np.all(report.w >= 0.0) and np.all(report.w <= 1.0)
    np.testing.assert_allclose(report.q.sum(axis=1), 1.0)
    assert json.loads(report.to_json())["seed"] == 0


def test_gradcheck_and_project_check():
    r = pgs.gradcheck("softmax", 1, 1000)
    assert r["implicit_vs_fd"] < 1e-6
    assert r["reverse_vs_fd"] < 1e-6
    st = pgs.project_check(50, 1)
    assert st["max_infeasibility"] < 1e-9


def test_run_protocol():
    config = {
        "name": "py",
        "data": {"kind": "synthetic", "task": "classification", "dim": 3, "problem_seed": 1},
        "split": {"train": 40, "val": 20, "hyper": 0, "test": 50},
        "noise": {"kind": "flip", "ratio": 0.2},
        "members": 2,
        "model": {"family": "softmax", "l2": 0.001},
        "pgs": {"upper_iters": 2},
        "methods": ["baseline", "pgs_convex"],
        "seeds": [0],
    }
    reports = pgs.run_protocol(json.dumps(config))
    assert [r.method for r in reports] == ["baseline", "pgs_convex"]
    assert 0.0 <= reports[0].test_metrics["accuracy"] <= 1.0

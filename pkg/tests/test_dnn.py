import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hrsowc import dnn
from hrsowc.dataset import DatasetFile
from hrsowc.optimizer import check_feasibility, default_constraints
from oracles import rmse_loss

SPEC = dnn.spec_for_dataset(6, 2)


def fake_dataset(n=40, K=6, G=2, seed=0, val=8):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.uniform(0.5, 2, (n, K)), rng.uniform(1e-4, 5e-4, (n, K))])
    Y = np.column_stack([rng.uniform(0, 0.2, (n, K + G)), np.ones(n)])
    split = np.array(["train"] * (n - val) + ["val"] * val)
    tr = slice(0, n - val)
    meta = {"num_users": K, "num_groups": G, "feature_mode": "demand+gain",
            "constraints": {"p_total": 1.0},
            "normalization": {"feature_min": X[tr].min(0).tolist(),
                              "feature_max": X[tr].max(0).tolist(),
                              "label_scale": Y[tr].max(0).tolist()}}
    return DatasetFile(np.arange(n), X, Y, split, meta)


def relerr(a, b):
    den = max(abs(a), abs(b))
    return abs(a - b) / den if den > 1e-7 else abs(a - b)


def test_shapes_and_depth():
    assert SPEC.output_dim == 9
    assert len(SPEC.hidden) == 4
    w = dnn.init(SPEC, 0)
    assert dnn.forward(w, np.zeros(12)).shape == (9,)
    assert dnn.forward(w, np.zeros((5, 12))).shape == (5, 9)
    with pytest.raises(ValueError):
        dnn.forward(w, np.zeros(11))


def test_init_is_deterministic_and_bounded():
    a, b = dnn.init(SPEC, 3), dnn.init(SPEC, 3)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    for name, rows, cols, fi, fo in SPEC.shapes():
        if name.endswith(".W"):
            assert np.max(np.abs(a.params[name])) <= math.sqrt(6 / (fi + fo))
        else:
            assert not a.params[name].any()


def test_zero_width_layer_rejected():
    with pytest.raises(ValueError):
        dnn.NetworkSpec(12, 9, 6, hidden=(64, 0, 64, 64))


def test_zero_weights_give_softplus_of_biases():
    w = dnn.init(SPEC, 0)
    zero = w.with_params({k: np.zeros_like(v) for k, v in w.params.items()})
    assert np.allclose(dnn.forward(zero, np.ones(12)), math.log(2.0))
    p = dict(zero.params)
    p["out.b"] = np.arange(9.0)[None, :]
    assert np.allclose(dnn.forward(w.with_params(p), np.ones(12)), np.log1p(np.exp(np.arange(9.0))))


def _grad_check(spec, seed, coords=None):
    rng = np.random.default_rng(seed)
    w = dnn.init(spec, seed)
    params = {k: v + (rng.normal(0, 0.1, v.shape) if k.endswith(".b") else 0.0)
              for k, v in w.params.items()}
    w = w.with_params(params)
    X = rng.uniform(0, 1, (3, spec.input_dim))
    T = rng.uniform(0, 1, (3, spec.output_dim))
    _, g = dnn.loss_and_grad(w, X, T)
    worst = 0.0
    for name, v in params.items():
        idx = range(v.size) if coords is None else rng.choice(v.size, min(coords, v.size), False)
        for j in idx:
            q = {k: a.copy() for k, a in params.items()}
            q[name].ravel()[j] += 1e-6
            up = dnn.loss(w.with_params(q), X, T)
            q[name].ravel()[j] -= 2e-6
            dn = dnn.loss(w.with_params(q), X, T)
            worst = max(worst, relerr((up - dn) / 2e-6, g[name].ravel()[j]))
    return worst


def test_gradient_every_weight_small_network():
    spec = dnn.NetworkSpec(6, 6, 3, hidden=(5, 4, 4, 3), conv_front=(2, 3))
    assert _grad_check(spec, 1) < 1e-4


def test_gradient_dense_only_network():
    spec = dnn.NetworkSpec(6, 4, 3, hidden=(7, 5), conv_front=None)
    assert _grad_check(spec, 2) < 1e-4


def test_loss_history_starts_at_initial_rmse():
    ds = fake_dataset()
    w0 = dnn.init(SPEC, 4)
    _, hist = dnn.train(w0, ds, epochs=2, batch=8, seed=0)
    norm = {**ds.meta["normalization"], "num_users": 6, "feature_mode": "demand+gain"}
    rows = np.flatnonzero(ds.split == "train")
    X = dnn.normalize_features(norm, ds.features[rows])
    T = ds.labels[rows] / np.asarray(norm["label_scale"])
    assert hist["train"][0] == pytest.approx(rmse_loss(dnn.forward(w0, X), T), rel=1e-12)
    assert len(hist["train"]) == 3


def test_single_sample_is_memorised():
    ds = fake_dataset(n=1, val=0)
    w, hist = dnn.train(dnn.init(SPEC, 0), ds, epochs=3000, batch=1, lr=1e-3)
    assert hist["train"][-1] < 1e-3


def test_training_is_deterministic_and_returns_best_validation():
    ds = fake_dataset()
    a, ha = dnn.train(dnn.init(SPEC, 1), ds, epochs=5, batch=8, seed=2)
    b, hb = dnn.train(dnn.init(SPEC, 1), ds, epochs=5, batch=8, seed=2)
    assert ha == hb
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert a.meta["best_val_loss"] == min(ha["val"])


def test_feature_permutation_with_permuted_weights_gives_same_loss():
    spec = dnn.NetworkSpec(12, 9, 6, conv_front=None)
    w = dnn.init(spec, 0)
    rng = np.random.default_rng(0)
    X, T = rng.uniform(0, 1, (10, 12)), rng.uniform(0, 1, (10, 9))
    perm = rng.permutation(12)
    p = dict(w.params)
    p["dense0.W"] = w.params["dense0.W"][perm]
    assert dnn.loss(w.with_params(p), X[:, perm], T) == dnn.loss(w, X, T)


def test_nan_loss_aborts_with_epoch():
    ds = fake_dataset()
    ds.labels[0, 0] = np.nan
    with pytest.raises(dnn.TrainingError, match="epoch"):
        dnn.train(dnn.init(SPEC, 0), ds, epochs=3, batch=8)


def test_save_load_roundtrip_is_bit_identical(tmp_path):
    w, _ = dnn.train(dnn.init(SPEC, 0), fake_dataset(), epochs=1, batch=8)
    path = tmp_path / "w.txt"
    dnn.save(w, path)
    back = dnn.load(path)
    X = np.random.default_rng(0).uniform(0, 1, (7, 12))
    assert np.array_equal(dnn.forward(back, X), dnn.forward(w, X))
    text = path.read_text().splitlines()
    assert text[0] == "version 1" and text[1].startswith("spec ")
    assert text[2].startswith("normalization ") and text[4].startswith("conv.W 8 6 ")


@pytest.fixture(scope="module")
def trained():
    w, _ = dnn.train(dnn.init(SPEC, 0), fake_dataset(), epochs=3, batch=8)
    return w


@given(arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)))
def test_predictions_are_always_feasible(trained, feats):
    cons = default_constraints(6, 2, 1.0)
    assign = (0, 0, 1, 1, 0, 1)
    pred = dnn.predict(trained, feats, cons, assign)
    assert check_feasibility(pred.allocation, cons, assignment=assign)[0]
    assert pred.total_gap >= 0


def test_predict_dimension_checks(trained):
    cons = default_constraints(6, 2, 1.0)
    with pytest.raises(ValueError):
        dnn.predict(trained, np.ones(10), cons, (0,) * 6)
    with pytest.raises(ValueError):
        dnn.predict(trained, np.ones(12), default_constraints(6, 3), (0,) * 6)

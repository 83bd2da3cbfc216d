"""
Surrogate network: per-user features -> power vector of size K+G+1.

Architecture (default)::

    (n, C_in, K) grid -> conv1d(8 ch, width 3, same padding) -> relu -> flatten
                      -> 4 x dense(64) + relu -> dense(K+G+1) -> softplus

The loss is the per-sample root mean square error over the normalised
label vector, averaged over the batch. Everything is plain numpy in
float64; gradients are hand-written backprop.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .optimizer import ConstraintSet, project_feasible
from .rsmodel import PowerAllocation

__all__ = [
    "NetworkSpec", "NetworkWeights", "Prediction", "TrainingError", "WEIGHTS_VERSION",
    "init", "forward", "loss", "loss_and_grad", "train", "predict", "save", "load",
    "normalize_features", "spec_for_dataset",
]

log = logging.getLogger(__name__)

WEIGHTS_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    num_users: int
    hidden: tuple = (64, 64, 64, 64)
    conv_front: tuple | None = (8, 3)
    activation: str = "relu"
    output_map: str = "softplus"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.conv_front is not None:
            object.__setattr__(self, "conv_front", tuple(int(c) for c in self.conv_front))
        widths = (self.input_dim, self.output_dim, self.num_users) + self.hidden
        if self.conv_front is not None:
            widths += self.conv_front
        if min(widths) < 1:
            raise ValueError(f"zero-width layer in network spec {widths}")
        if self.conv_front is not None:
            if self.input_dim % self.num_users:
                raise ValueError("input_dim must be a multiple of num_users for the conv stage")
            if self.conv_front[1] % 2 == 0:
                raise ValueError("conv kernel width must be odd")
        if self.activation != "relu" or self.output_map != "softplus":
            raise ValueError("only relu hidden activations and a softplus output are supported")

    @property
    def channels_in(self) -> int:
        return self.input_dim // self.num_users

    def shapes(self) -> list:
        """(name, rows, cols, fan_in, fan_out) per tensor, in parameter order."""
        out = []
        width = self.input_dim
        if self.conv_front is not None:
            c_out, k = self.conv_front
            c_in = self.channels_in
            out += [("conv.W", c_out, c_in * k, c_in * k, c_out * k), ("conv.b", 1, c_out, 0, 0)]
            width = c_out * self.num_users
        for i, h in enumerate(self.hidden):
            out += [(f"dense{i}.W", width, h, width, h), (f"dense{i}.b", 1, h, 0, 0)]
            width = h
        out += [("out.W", width, self.output_dim, width, self.output_dim),
                ("out.b", 1, self.output_dim, 0, 0)]
        return out

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim,
                "num_users": self.num_users, "hidden": list(self.hidden),
                "conv_front": list(self.conv_front) if self.conv_front else None,
                "activation": self.activation, "output_map": self.output_map}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        d["conv_front"] = tuple(d["conv_front"]) if d.get("conv_front") else None
        return cls(**d)


@dataclass(frozen=True)
class NetworkWeights:
    spec: NetworkSpec
    params: dict
    seed: int = 0
    normalization: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, rows, cols, _, _ in self.spec.shapes():
            a = self.params.get(name)
            if a is None or a.shape != (rows, cols):
                raise ValueError(f"tensor {name} missing or not of shape {(rows, cols)}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"tensor {name} has non-finite entries")

    def with_params(self, params: dict, **kw) -> "NetworkWeights":
        return replace(self, params=params, **kw)


class Prediction(NamedTuple):
    allocation: PowerAllocation
    total_gap: float          # |predicted total - projected total|, watts
    raw: np.ndarray


# -- construction -----------------------------------------------------------------

def init(spec: NetworkSpec, seed: int = 0) -> NetworkWeights:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, rows, cols, fan_in, fan_out in spec.shapes():
        if name.endswith(".b"):
            params[name] = np.zeros((rows, cols))
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=(rows, cols))
    return NetworkWeights(spec, params, seed=int(seed))


def spec_for_dataset(num_users: int, num_groups: int, feature_mode: str = "demand+gain",
                     hidden=(64, 64, 64, 64), conv_front=(8, 3)) -> NetworkSpec:
    c_in = 2 if feature_mode == "demand+gain" else 1
    return NetworkSpec(input_dim=c_in * num_users, output_dim=num_users + num_groups + 1,
                       num_users=num_users, hidden=tuple(hidden), conv_front=conv_front)


# -- forward / backward -------------------------------------------------------------

def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _patches(spec: NetworkSpec, X: np.ndarray) -> np.ndarray:
    """(n, K, C_in * k) sliding windows over the user axis, zero padded."""
    c_out, k = spec.conv_front
    n, K = len(X), spec.num_users
    grid = X.reshape(n, spec.channels_in, K)
    pad = k // 2
    gp = np.pad(grid, ((0, 0), (0, 0), (pad, pad)))
    win = np.stack([gp[:, :, j:j + K] for j in range(k)], axis=-1)   # n, C_in, K, k
    return win.transpose(0, 2, 1, 3).reshape(n, K, spec.channels_in * k)


def _check_input(spec, X):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"expected {spec.input_dim} features, got {X.shape[1]}")
    return X, single


def _forward(w: NetworkWeights, X: np.ndarray):
    spec, p = w.spec, w.params
    cache = {}
    a = X
    if spec.conv_front is not None:
        P = _patches(spec, X)
        z = P @ p["conv.W"].T + p["conv.b"][0]             # n, K, C_out
        cache["conv"] = (P, z)
        a = np.maximum(z, 0.0).reshape(len(X), -1)
    acts = [a]
    pre = []
    for i in range(len(spec.hidden)):
        z = a @ p[f"dense{i}.W"] + p[f"dense{i}.b"][0]
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    z_out = a @ p["out.W"] + p["out.b"][0]
    cache.update(acts=acts, pre=pre, z_out=z_out)
    return _softplus(z_out), cache


def forward(weights: NetworkWeights, features) -> np.ndarray:
    """Network output for one feature vector or a batch of rows (normalised space)."""
    X, single = _check_input(weights.spec, features)
    y, _ = _forward(weights, X)
    return y[0] if single else y


def _rmse_rows(Y, T):
    return np.sqrt(np.mean((Y - T) ** 2, axis=1))


def loss(weights: NetworkWeights, X, T) -> float:
    """Mean over samples of the per-sample RMSE."""
    X, _ = _check_input(weights.spec, X)
    y, _ = _forward(weights, X)
    return float(np.mean(_rmse_rows(y, np.atleast_2d(T))))


def loss_and_grad(weights: NetworkWeights, X, T):
    spec, p = weights.spec, weights.params
    X, _ = _check_input(spec, X)
    T = np.atleast_2d(np.asarray(T, dtype=float))
    n, m = T.shape
    y, cache = _forward(weights, X)
    err = y - T
    l = _rmse_rows(y, T)
    safe = np.where(l > 0, l, 1.0)
    dy = np.where(l[:, None] > 0, err / (m * n * safe[:, None]), 0.0)
    g = {}
    dz = dy * _sigmoid(cache["z_out"])
    acts, pre = cache["acts"], cache["pre"]
    g["out.W"] = acts[-1].T @ dz
    g["out.b"] = dz.sum(axis=0, keepdims=True)
    da = dz @ p["out.W"].T
    for i in reversed(range(len(spec.hidden))):
        dz = da * (pre[i] > 0)
        g[f"dense{i}.W"] = acts[i].T @ dz
        g[f"dense{i}.b"] = dz.sum(axis=0, keepdims=True)
        da = dz @ p[f"dense{i}.W"].T
    if spec.conv_front is not None:
        P, z = cache["conv"]
        dz = da.reshape(z.shape) * (z > 0)
        g["conv.W"] = np.einsum("nkc,nkp->cp", dz, P)
        g["conv.b"] = dz.sum(axis=(0, 1))[None, :]
    return float(np.mean(l)), g


# -- normalisation ----------------------------------------------------------------

def _span(lo, hi):
    s = np.asarray(hi, float) - np.asarray(lo, float)
    return np.where(s > 0, s, 1.0)


def normalize_features(norm: dict, raw) -> np.ndarray:
    """Min/max scaling of raw features, restricted to the columns the model uses."""
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    lo, hi = np.asarray(norm["feature_min"]), np.asarray(norm["feature_max"])
    if norm.get("feature_mode", "demand+gain") == "demand":
        K = norm["num_users"]
        raw, lo, hi = raw[:, :K], lo[:K], hi[:K]
    return (raw - lo) / _span(lo, hi)


def _label_scale(norm: dict) -> np.ndarray:
    s = np.asarray(norm["label_scale"], dtype=float)
    return np.where(s > 0, s, 1.0)


def _arrays(dataset, rows, norm):
    return normalize_features(norm, dataset.features[rows]), dataset.labels[rows] / _label_scale(norm)


# -- training ---------------------------------------------------------------------

def train(weights: NetworkWeights, dataset, epochs: int = 200, batch: int = 64,
          lr: float = 1e-3, seed: int = 0, beta1: float = 0.9, beta2: float = 0.999,
          eps: float = 1e-8):
    """Adam on mini-batches; returns (best-validation weights, loss history).

    ``history["train"][e]`` and ``history["val"][e]`` are the full-split
    losses after ``e`` epochs (entry 0 is the initial network).
    """
    split = dataset.split_indices
    tr, va = split["train"], split["val"]
    if not len(tr):
        raise TrainingError("empty training split")
    if epochs < 0 or batch < 1 or lr <= 0:
        raise ValueError("need epochs >= 0, batch >= 1, lr > 0")
    ds_norm = dataset.meta["normalization"]
    norm = {"feature_min": list(ds_norm["feature_min"]), "feature_max": list(ds_norm["feature_max"]),
            "label_scale": list(ds_norm["label_scale"]), "num_users": dataset.num_users,
            "num_groups": dataset.num_groups, "feature_mode": dataset.meta["feature_mode"],
            "p_total": float(dataset.meta["constraints"]["p_total"])}
    Xtr, Ttr = _arrays(dataset, tr, norm)
    Xva, Tva = _arrays(dataset, va, norm) if len(va) else (None, None)
    if Xtr.shape[1] != weights.spec.input_dim or Ttr.shape[1] != weights.spec.output_dim:
        raise ValueError("network spec does not match the dataset dimensions")

    params = {k: v.copy() for k, v in weights.params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(seed)
    cur = weights.with_params(params, normalization=norm)   # shares the live ``params`` dict

    def evaluate(w):
        lt = loss(w, Xtr, Ttr)
        lv = loss(w, Xva, Tva) if Xva is not None else lt
        return lt, lv

    lt, lv = evaluate(cur)
    history = {"train": [lt], "val": [lv]}
    best_val, best_epoch = lv, 0
    best = {k: a.copy() for k, a in params.items()}
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(Xtr))
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            _, g = loss_and_grad(cur, Xtr[idx], Ttr[idx])
            step += 1
            c1, c2 = 1 - beta1 ** step, 1 - beta2 ** step
            for k in params:
                m[k] = beta1 * m[k] + (1 - beta1) * g[k]
                v[k] = beta2 * v[k] + (1 - beta2) * g[k] ** 2
                params[k] = params[k] - lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)
        if not all(np.all(np.isfinite(a)) for a in params.values()):
            raise TrainingError(f"non-finite weights at epoch {epoch}")
        lt, lv = evaluate(cur)
        if not (np.isfinite(lt) and np.isfinite(lv)):
            raise TrainingError(f"NaN loss at epoch {epoch}")
        history["train"].append(lt)
        history["val"].append(lv)
        if lv < best_val:
            best_val, best_epoch = lv, epoch
            best = {k: a.copy() for k, a in params.items()}
        log.debug("epoch %d train %.6f val %.6f", epoch, lt, lv)

    meta = {"epochs": epochs, "batch": batch, "lr": lr, "train_seed": seed,
            "best_epoch": best_epoch, "final_train_loss": history["train"][-1],
            "best_val_loss": best_val}
    out = NetworkWeights(weights.spec, best, seed=weights.seed, normalization=norm, meta=meta)
    return out, history


# -- inference --------------------------------------------------------------------

def predict(weights: NetworkWeights, features, cons: ConstraintSet, assignment) -> Prediction:
    """Forward, denormalise, project onto the feasible set.

    Powers are rescaled by the ratio of ``cons.p_total_cap`` to the budget
    the model was trained at.
    """
    norm = weights.normalization
    K, G = norm["num_users"], norm["num_groups"]
    if len(assignment) != K or len(cons.group_caps) != G:
        raise ValueError(f"model trained for K={K}, G={G}")
    raw = np.asarray(features, dtype=float)
    if raw.shape != (2 * K,):
        raise ValueError(f"expected {2 * K} raw features, got shape {raw.shape}")
    y = forward(weights, normalize_features(norm, raw)[0])
    p_ref = norm.get("p_total", 1.0)
    watts = y * _label_scale(norm) * (cons.p_total_cap / p_ref if p_ref > 0 else 1.0)
    alloc = project_feasible(np.concatenate([watts[K:K + G], watts[:K]]), cons, assignment)
    return Prediction(alloc, float(abs(watts[K + G] - alloc.total)), watts)


# -- persistence --------------------------------------------------------------------

def save(weights: NetworkWeights, path) -> None:
    lines = [f"version {WEIGHTS_VERSION}",
             "spec " + json.dumps(weights.spec.to_dict(), sort_keys=True),
             "normalization " + json.dumps(weights.normalization, sort_keys=True),
             "meta " + json.dumps(dict(weights.meta, seed=weights.seed), sort_keys=True)]
    for name, rows, cols, _, _ in weights.spec.shapes():
        vals = " ".join(repr(float(x)) for x in weights.params[name].ravel())
        lines.append(f"{name} {rows} {cols} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def load(path) -> NetworkWeights:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ValueError(f"cannot read weights file {path}: {exc}") from None
    if len(lines) < 4 or not lines[0].startswith("version "):
        raise ValueError(f"{path}: not a weights file")
    if lines[0].split()[1] != str(WEIGHTS_VERSION):
        raise ValueError(f"{path}: weights version {lines[0].split()[1]}, expected {WEIGHTS_VERSION}")
    heads = {}
    for line in lines[1:4]:
        key, _, body = line.partition(" ")
        heads[key] = json.loads(body)
    spec = NetworkSpec.from_dict(heads["spec"])
    meta = heads["meta"]
    seed = int(meta.pop("seed", 0))
    params = {}
    for line in lines[4:]:
        parts = line.split()
        name, rows, cols = parts[0], int(parts[1]), int(parts[2])
        vals = np.array([float(x) for x in parts[3:]])
        if vals.size != rows * cols:
            raise ValueError(f"{path}: tensor {name} has {vals.size} values, expected {rows * cols}")
        params[name] = vals.reshape(rows, cols)
    return NetworkWeights(spec, params, seed=seed, normalization=heads["normalization"], meta=meta)

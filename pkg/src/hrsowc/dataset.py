"""
Offline training corpus: sampled scenarios paired with solver-optimal powers.

On disk a dataset is a CSV file::

    sample_id,demand_1..K,gain_1..K,pp_1..K,pic_1..G,ptotal,split

plus a JSON sidecar (``<stem>.meta.json``) holding the format version,
K, G, constraint template, master seed, resample attempts and the
min/max normalisation constants of the training split.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .geometry import DisconnectedUserError, Scenario
from .optimizer import UTILITY_MODES, check_feasibility, utility
from .pipeline import features_for, prepare, scheme_report
from .rsmodel import PowerAllocation

__all__ = [
    "FORMAT_VERSION", "DatasetError", "DatasetSpace", "Sample", "DatasetFile",
    "sample_scenario", "solve_sample", "generate", "load", "save", "split_indices",
    "split_sizes", "features_for", "sidecar_path", "FEATURE_MODES",
]

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
FEATURE_MODES = ("demand+gain", "demand")
MAX_RESAMPLE_RATE = 0.2
MAX_ATTEMPTS = 50
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpace:
    """Where samples come from: a base config plus optional beam-waist range.

    Labels are solved with ``utility`` (the per-message log utility by
    default) at tolerance ``rel_tol``, independently of ``config.utility``.
    """
    config: ExperimentConfig = field(default_factory=ExperimentConfig)
    beam_waist_range: tuple | None = None
    rel_tol: float = 1e-8
    feature_mode: str = "demand+gain"
    utility: str = "log-message"

    def __post_init__(self):
        if self.utility not in UTILITY_MODES:
            raise DatasetError(f"utility must be one of {UTILITY_MODES}")
        if self.feature_mode not in FEATURE_MODES:
            raise DatasetError(f"feature_mode must be one of {FEATURE_MODES}")
        if self.beam_waist_range is not None:
            lo, hi = self.beam_waist_range
            if not 0 < lo <= hi:
                raise DatasetError("beam_waist_range must satisfy 0 < lo <= hi")

    @property
    def num_users(self) -> int:
        return self.config.num_users

    @property
    def num_groups(self) -> int:
        return self.config.num_groups

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(),
                "beam_waist_range": list(self.beam_waist_range) if self.beam_waist_range else None,
                "rel_tol": self.rel_tol, "feature_mode": self.feature_mode,
                "utility": self.utility}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpace":
        bw = d.get("beam_waist_range")
        return cls(config=ExperimentConfig.from_dict(d["config"]),
                   beam_waist_range=tuple(bw) if bw else None,
                   rel_tol=float(d["rel_tol"]), feature_mode=d["feature_mode"],
                   utility=d["utility"])


@dataclass(frozen=True)
class Sample:
    sample_id: int
    features: np.ndarray     # raw (demands, gain sums), length 2K
    label: np.ndarray        # (p_p[K], p_ic[G], total)
    attempt: int = 0
    utility: float = float("nan")
    sum_rate: float = float("nan")


# -- sampling ---------------------------------------------------------------------

def _rng(master_seed: int, index: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index), int(attempt)]))


def sample_scenario(master_seed: int, index: int, space: DatasetSpace | None = None,
                    attempt: int = 0) -> tuple[Scenario, int]:
    """Scenario of sample ``index`` and the seed used for grouping/solving.

    Depends only on (master_seed, index, attempt), so any sample can be
    rebuilt on its own.
    """
    space = space or DatasetSpace()
    rng = _rng(master_seed, index, attempt)
    cfg = space.config
    if space.beam_waist_range is not None:
        cfg = cfg.with_constants(beam_waist=float(rng.uniform(*space.beam_waist_range)))
    sub_seed = int(rng.integers(2 ** 31))
    return cfg.scenario(seed=sub_seed, rng=rng), sub_seed


def _label(alloc: PowerAllocation) -> np.ndarray:
    return np.concatenate([alloc.p_p, alloc.p_ic, [alloc.total]])


def solve_sample(master_seed: int, index: int, space: DatasetSpace) -> Sample | None:
    """Solve sample ``index``, resampling the scenario while it is infeasible.

    Returns None if ``MAX_ATTEMPTS`` scenarios fail.
    """
    cfg = space.config
    kw = dict(cfg.solver_kwargs(), rel_tol=space.rel_tol, mode=space.utility)
    for attempt in range(MAX_ATTEMPTS):
        scen, sub_seed = sample_scenario(master_seed, index, space, attempt)
        try:
            inst = prepare(scen, cfg.num_groups, cfg.p_total, cfg.r_min, seed=sub_seed)
        except DisconnectedUserError:
            continue
        report, alloc = scheme_report(inst, "opt", kw, seed=sub_seed)
        feasible, qos = check_feasibility(alloc, inst.cons, report)
        if feasible and qos:
            return Sample(index, features_for(scen, inst.channel), _label(alloc), attempt,
                          utility(report, space.utility), report.sum_rate)
    return None


def _solve_task(args):
    return solve_sample(*args)


# -- splits -----------------------------------------------------------------------

def split_sizes(n: int) -> tuple[int, int, int]:
    n_train, n_val = (6 * n) // 10, (2 * n) // 10
    return n_train, n_val, n - n_train - n_val


def split_indices(n: int, master_seed: int) -> dict:
    """Disjoint train/val/test index arrays; a pure function of (n, master_seed)."""
    perm = np.random.default_rng(int(master_seed)).permutation(n)
    a, b, _ = split_sizes(n)
    return {"train": np.sort(perm[:a]), "val": np.sort(perm[a:a + b]), "test": np.sort(perm[a + b:])}


# -- the file ---------------------------------------------------------------------

@dataclass
class DatasetFile:
    sample_ids: np.ndarray
    features: np.ndarray     # (N, 2K) raw
    labels: np.ndarray       # (N, K+G+1)
    split: np.ndarray        # (N,) of "train" / "val" / "test"
    meta: dict

    @property
    def num_users(self) -> int:
        return int(self.meta["num_users"])

    @property
    def num_groups(self) -> int:
        return int(self.meta["num_groups"])

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def space(self) -> DatasetSpace:
        return DatasetSpace.from_dict(self.meta["space"])

    @property
    def split_indices(self) -> dict:
        return {s: np.flatnonzero(self.split == s) for s in SPLITS}

    @property
    def config_hash(self) -> str:
        return self.meta["config_hash"]

    def attempt(self, row: int) -> int:
        return int(self.meta["attempts"].get(str(int(self.sample_ids[row])), 0))

    def scenario(self, row: int) -> tuple[Scenario, int]:
        """Rebuild the scenario behind a row."""
        return sample_scenario(self.meta["master_seed"], int(self.sample_ids[row]),
                               self.space, self.attempt(row))


def _normalization(features, labels, train_idx) -> dict:
    f, l = features[train_idx], labels[train_idx]
    return {"feature_min": f.min(axis=0).tolist(), "feature_max": f.max(axis=0).tolist(),
            "label_scale": np.maximum(l.max(axis=0), 0.0).tolist()}


def generate(n: int, master_seed: int, space: DatasetSpace | None = None,
             out_path: str | Path | None = None, workers: int = 1) -> DatasetFile:
    """Sample, solve and (optionally) write ``n`` samples.

    Samples are solved in parallel over indices when ``workers > 1``; the
    file is assembled in index order, so the output does not depend on
    ``workers``.
    """
    if n < 10:
        raise DatasetError(f"need n >= 10 samples, got {n}")
    space = space or DatasetSpace()
    if out_path is not None:
        out_path = Path(out_path)
        parent = out_path.parent if str(out_path.parent) else Path(".")
        if not parent.is_dir() or not os.access(parent, os.W_OK):
            raise DatasetError(f"cannot write dataset to {out_path}")
    tasks = [(master_seed, i, space) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(_solve_task, tasks, chunksize=max(1, n // (4 * workers))))
    else:
        samples = [_solve_task(t) for t in tasks]

    missing = [i for i, s in enumerate(samples) if s is None]
    if missing:
        raise DatasetError(f"{len(missing)} samples had no feasible scenario in "
                           f"{MAX_ATTEMPTS} attempts (first index {missing[0]})")
    extra = sum(s.attempt for s in samples)
    if extra:
        log.info("resampled %d infeasible scenarios for %d samples", extra, n)
    if extra > MAX_RESAMPLE_RATE * n:
        raise DatasetError(f"resample rate {extra / n:.1%} exceeds {MAX_RESAMPLE_RATE:.0%}: "
                           "the constraint set is infeasible for most scenarios")

    ids = np.arange(n)
    features = np.array([s.features for s in samples])
    labels = np.array([s.label for s in samples])
    idx = split_indices(n, master_seed)
    split = np.empty(n, dtype=object)
    for name in SPLITS:
        split[idx[name]] = name
    split = split.astype(str)
    cfg = space.config
    probe = cfg.scenario(seed=0)
    cons = cfg.constraints(probe)
    meta = {
        "version": FORMAT_VERSION,
        "num_samples": n,
        "num_users": cfg.num_users,
        "num_groups": cfg.num_groups,
        "master_seed": int(master_seed),
        "feature_mode": space.feature_mode,
        "utility": space.utility,
        "constraints": {"p_total": cons.p_total_cap, "p_oc_fixed": cons.p_oc_fixed,
                        "group_caps": list(cons.group_caps), "user_cap": cons.user_cap,
                        "r_min": "sum of demands" if cfg.r_min is None else cfg.r_min},
        "space": space.to_dict(),
        "config_hash": cfg.digest(),
        "attempts": {str(s.sample_id): s.attempt for s in samples if s.attempt},
        "normalization": _normalization(features, labels, idx["train"]),
    }
    ds = DatasetFile(ids, features, labels, split, meta)
    if out_path is not None:
        save(ds, out_path)
    return ds


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _header(K: int, G: int) -> list:
    return (["sample_id"] + [f"demand_{k}" for k in range(1, K + 1)]
            + [f"gain_{k}" for k in range(1, K + 1)] + [f"pp_{k}" for k in range(1, K + 1)]
            + [f"pic_{g}" for g in range(1, G + 1)] + ["ptotal", "split"])


def save(ds: DatasetFile, path: str | Path) -> None:
    path = Path(path)
    K, G = ds.num_users, ds.num_groups
    lines = [",".join(_header(K, G))]
    for i in range(len(ds)):
        vals = [repr(float(v)) for v in ds.features[i]] + [repr(float(v)) for v in ds.labels[i]]
        lines.append(",".join([str(int(ds.sample_ids[i]))] + vals + [ds.split[i]]))
    try:
        path.write_text("\n".join(lines) + "\n")
        sidecar_path(path).write_text(json.dumps(ds.meta, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {path}: {exc}") from None


def load(path: str | Path) -> DatasetFile:
    """Read a dataset written by `save`; every malformed input is a `DatasetError`."""
    path = Path(path)
    try:
        meta = json.loads(sidecar_path(path).read_text())
        raw = path.read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from None
    if meta.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: format version {meta.get('version')!r}, "
                           f"expected {FORMAT_VERSION}")
    K, G = int(meta["num_users"]), int(meta["num_groups"])
    header = _header(K, G)
    ncol = len(header)
    text = raw.decode("ascii", errors="replace")
    if not text.endswith("\n"):
        raise DatasetError(f"{path}: truncated file, missing final newline at byte {len(raw)}")
    rows, offset = [], 0
    for lineno, line in enumerate(text[:-1].split("\n")):
        fields = line.split(",")
        if lineno == 0:
            if fields != header:
                raise DatasetError(f"{path}: header does not match K={K}, G={G}")
        elif len(fields) != ncol:
            raise DatasetError(f"{path}: truncated or malformed row at byte {offset} "
                               f"(line {lineno + 1}, {len(fields)} of {ncol} fields)")
        else:
            rows.append((offset, lineno, fields))
        offset += len(line) + 1
    n = int(meta["num_samples"])
    if len(rows) != n:
        raise DatasetError(f"{path}: truncated file, {len(rows)} of {n} rows before byte {offset}")

    ids = np.empty(n, dtype=int)
    values = np.empty((n, ncol - 2))
    split = []
    for i, (off, lineno, fields) in enumerate(rows):
        try:
            ids[i] = int(fields[0])
            values[i] = [float(v) for v in fields[1:-1]]
        except ValueError:
            raise DatasetError(f"{path}: unparsable number in row at byte {off} "
                               f"(line {lineno + 1})") from None
        if not np.all(np.isfinite(values[i])):
            raise DatasetError(f"{path}: non-finite entry in row at byte {off} "
                               f"(line {lineno + 1}, sample {ids[i]})")
        if fields[-1] not in SPLITS:
            raise DatasetError(f"{path}: bad split name {fields[-1]!r} at byte {off}")
        split.append(fields[-1])
    return DatasetFile(ids, values[:, :2 * K], values[:, 2 * K:], np.array(split), meta)


def with_feature_mode(ds: DatasetFile, mode: str) -> DatasetFile:
    if mode not in FEATURE_MODES:
        raise DatasetError(f"feature_mode must be one of {FEATURE_MODES}")
    meta = dict(ds.meta, feature_mode=mode)
    meta["space"] = dict(meta["space"], feature_mode=mode)
    return dataclasses.replace(ds, meta=meta)

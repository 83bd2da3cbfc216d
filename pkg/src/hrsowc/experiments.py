"""
Seeded Monte Carlo sweeps and the single-scenario report.

Sweep variables and the unit of their ``value`` column:

    beamwaist   micrometres, 5 .. 20
    users       user count, 2 .. 10 (G = max(1, K // 3))
    snr         dB, 5 .. 35; P_T is scaled so that the median per-user
                matched-filter SNR P_T * ||h_k||^2 / sigma^2 hits the target
"""
from __future__ import annotations

import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dnn as _dnn
from .config import ExperimentConfig
from .geometry import DisconnectedUserError, build_channel
from .optimizer import check_feasibility
from .pipeline import SCHEMES, Instance, groups_for, prepare, scheme_report
from .rsmodel import PowerAllocation, hrs_report

__all__ = ["SweepSpec", "SWEEP_BOUNDS", "trial_instance", "run_sweep", "sweep_csv",
           "snr_power", "run_report", "evaluate_surrogate", "SweepError"]

log = logging.getLogger(__name__)

SWEEP_BOUNDS = {"beamwaist": (5.0, 20.0), "users": (2, 10), "snr": (5.0, 35.0)}
MAX_ATTEMPTS = 50


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    trials: int = 50
    schemes: tuple = ("opt", "hrs-uniform", "rs", "oma")
    master_seed: int = 0

    def __post_init__(self):
        if self.variable not in SWEEP_BOUNDS:
            raise SweepError(f"unknown sweep variable {self.variable!r}; "
                             f"expected one of {sorted(SWEEP_BOUNDS)}")
        if not self.values:
            raise SweepError("empty sweep range")
        lo, hi = SWEEP_BOUNDS[self.variable]
        bad = [v for v in self.values if not lo <= v <= hi]
        if bad:
            raise SweepError(f"{self.variable} values {bad} outside [{lo}, {hi}]")
        if self.variable == "users" and any(int(v) != v for v in self.values):
            raise SweepError("users values must be integers")
        if self.trials < 1:
            raise SweepError("trials must be >= 1")
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown or not self.schemes:
            raise SweepError(f"unknown scheme(s) {unknown}; expected a subset of {SCHEMES}")


def snr_power(channel, target_db: float) -> float:
    """P_T giving a median single-user SNR of ``target_db``."""
    strength = np.median(np.sum(channel.gains ** 2, axis=1))
    return float(10.0 ** (target_db / 10.0) * channel.noise_variance / strength)


def trial_instance(cfg: ExperimentConfig, variable: str, value: float, master_seed: int,
                   trial: int) -> tuple[Instance, int]:
    """Prepared instance of one trial at one sweep point, and its solver seed.

    The user draw depends on (master_seed, trial) and not on the sweep
    value, so every point of a sweep sees the same placements.
    """
    for attempt in range(MAX_ATTEMPTS):
        ss = np.random.SeedSequence([int(master_seed), int(trial), attempt])
        rng = np.random.default_rng(ss)
        seed = int(rng.integers(2 ** 31))
        c, K, G = cfg, cfg.num_users, cfg.num_groups
        if variable == "beamwaist":
            c = cfg.with_constants(beam_waist=float(value) / 1e6)
        elif variable == "users":
            K = int(value)
            G = groups_for(K)
        scen = c.scenario(seed=seed, rng=rng, num_users=K)
        try:
            p_total = cfg.p_total
            if variable == "snr":
                p_total = snr_power(build_channel(scen), float(value))
            return prepare(scen, G, p_total, cfg.r_min, seed=seed), seed
        except DisconnectedUserError:
            continue
    raise SweepError(f"no connected placement for trial {trial} in {MAX_ATTEMPTS} attempts")


def _trial(args):
    cfg, variable, value, master_seed, trial, schemes, model = args
    inst, seed = trial_instance(cfg, variable, value, master_seed, trial)
    return [scheme_report(inst, s, cfg.solver_kwargs(), model, seed)[0].sum_rate for s in schemes]


def run_sweep(spec: SweepSpec, cfg: ExperimentConfig | None = None, model=None,
              workers: int = 1) -> list:
    """Rows (variable, value, scheme, mean, std, trials) in sweep order.

    ``std`` is the population standard deviation over trials.
    """
    cfg = cfg or ExperimentConfig()
    if "dnn" in spec.schemes and model is None:
        raise SweepError("scheme 'dnn' requires a model")
    rows = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for value in spec.values:
            tasks = [(cfg, spec.variable, value, spec.master_seed, t, spec.schemes, model)
                     for t in range(spec.trials)]
            rates = np.array(list(pool.map(_trial, tasks)) if pool else [_trial(t) for t in tasks])
            for j, scheme in enumerate(spec.schemes):
                rows.append((spec.variable, value, scheme, float(rates[:, j].mean()),
                             float(rates[:, j].std()), spec.trials))
            log.info("%s=%s done", spec.variable, value)
    finally:
        if pool:
            pool.shutdown()
    return rows


def _fmt_value(v) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    buf.write("variable,value,scheme,mean_sum_rate,std_sum_rate,trials\n")
    for var, value, scheme, mean, std, trials in rows:
        buf.write(f"{var},{_fmt_value(value)},{scheme},{mean!r},{std!r},{trials}\n")
    return buf.getvalue()


def _vec(a) -> str:
    return "[" + " ".join(repr(float(x)) for x in np.atleast_1d(a)) + "]"


def run_report(cfg: ExperimentConfig | None = None, model=None, seed: int | None = None,
               schemes=None) -> str:
    """Plain-text summary of one scenario under every scheme."""
    cfg = cfg or ExperimentConfig()
    seed = cfg.user_seed if seed is None else seed
    schemes = schemes or [s for s in SCHEMES if s != "dnn" or model is not None]
    scen = cfg.scenario(seed=seed)
    inst = prepare(scen, cfg.num_groups, cfg.p_total, cfg.r_min, seed=seed)
    out = io.StringIO()
    w = out.write
    w(f"scenario seed={seed} users={scen.num_users} groups={cfg.num_groups} "
      f"aps={scen.num_aps} p_total={cfg.p_total!r} W "
      f"beam_waist={cfg.constants.beam_waist!r} m pointing={cfg.constants.beam_pointing}\n")
    w(f"noise_variance={inst.channel.noise_variance!r}\n")
    w(f"demands={_vec(scen.demands)} r_min={inst.cons.r_min!r}\n")
    w("grouping (1-based group of each user): "
      + " ".join(str(a + 1) for a in inst.plan.assignment) + "\n")
    for g, members in enumerate(inst.plan.group_members):
        w(f"  group {g + 1}: users " + " ".join(str(k + 1) for k in members) + "\n")
    if inst.prec.no_outer_separation:
        w("  note: outer precoders could not separate the groups\n")
    sums = {}
    for s in schemes:
        rep, alloc = scheme_report(inst, s, cfg.solver_kwargs(), model, seed)
        sums[s] = rep.sum_rate
        w(f"\n[{s}]\n")
        w(f"  power p_oc={alloc.p_oc!r} p_ic={_vec(alloc.p_ic)} p_p={_vec(alloc.p_p)}\n")
        if s in ("opt", "dnn", "hrs-uniform"):
            w(f"  rate  R_oc={rep.r_oc!r} R_ic={_vec(rep.r_ic)} R_p={_vec(rep.r_p)}\n")
        elif s == "rs":
            w(f"  rate  R_c={rep.r_oc!r} R_p={_vec(rep.r_p)}\n")
        else:
            w(f"  rate  R_p={_vec(rep.r_p)}\n")
        w(f"  sum_rate={rep.sum_rate!r}\n")
    w("\n")
    if "opt" in sums and "dnn" in sums:
        gap = 1.0 - sums["dnn"] / sums["opt"] if sums["opt"] > 0 else float("nan")
        w(f"dnn_gap={gap!r}\n")
    else:
        w("dnn_gap=n/a (no model)\n")
    return out.getvalue()


def evaluate_surrogate(model, ds, split: str = "test") -> dict:
    """Sum-rate ratio, RMSE and feasibility of a model on one dataset split."""
    rows = ds.split_indices[split]
    if not len(rows):
        raise ValueError(f"dataset has no {split} rows")
    space = ds.space
    cfg = space.config
    ratios, gaps, feas = [], [], []
    for r in rows:
        scen, sub_seed = ds.scenario(r)
        inst = prepare(scen, cfg.num_groups, cfg.p_total, cfg.r_min, seed=sub_seed)
        pred = _dnn.predict(model, ds.features[r], inst.cons, inst.plan.assignment)
        rep = hrs_report(inst.channel, inst.plan, inst.prec, pred.allocation)
        K, G = ds.num_users, ds.num_groups
        lab = ds.labels[r]
        ref = PowerAllocation(inst.cons.p_oc_fixed, lab[K:K + G], lab[:K])
        ref_rate = hrs_report(inst.channel, inst.plan, inst.prec, ref).sum_rate
        ratios.append(rep.sum_rate / ref_rate)
        gaps.append(pred.total_gap)
        feas.append(check_feasibility(pred.allocation, inst.cons, rep)[0])
    X = _dnn.normalize_features(model.normalization, ds.features[rows])
    T = ds.labels[rows] / np.where(np.asarray(model.normalization["label_scale"]) > 0,
                                   model.normalization["label_scale"], 1.0)
    return {"split": split, "samples": len(rows), "mean_sum_rate_ratio": float(np.mean(ratios)),
            "min_sum_rate_ratio": float(np.min(ratios)), "rmse": _dnn.loss(model, X, T),
            "feasible_fraction": float(np.mean(feas)), "mean_total_gap": float(np.mean(gaps))}

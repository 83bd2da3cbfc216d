"""Channel -> grouping -> precoding -> constraints for one scenario, and scheme evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ChannelMatrix, Scenario, build_channel
from .grouping import GroupingPlan, kmeans_group
from .optimizer import (ALPHA, BETA, ConstraintSet, SolveResult, default_constraints,
                        solve)
from .rsmodel import (PowerAllocation, PrecoderSet, RateReport, build_precoders,
                      conventional_rs_rate, hrs_report, oma_rate, power_split,
                      rs_uniform_split)

__all__ = ["Instance", "prepare", "scheme_report", "features_for", "SCHEMES", "groups_for"]

SCHEMES = ("opt", "dnn", "hrs-uniform", "rs", "oma")


def groups_for(num_users: int) -> int:
    """About three users per group."""
    return max(1, num_users // 3)


def features_for(scenario: Scenario, channel: ChannelMatrix) -> np.ndarray:
    """Raw network features: per-user demand then per-user sum of gains over APs."""
    return np.concatenate([scenario.demands, channel.gains.sum(axis=1)])


@dataclass(frozen=True)
class Instance:
    scenario: Scenario
    channel: ChannelMatrix
    plan: GroupingPlan
    prec: PrecoderSet
    cons: ConstraintSet


def prepare(scenario: Scenario, num_groups: int, p_total: float = 1.0,
            r_min: float | None = None, seed: int = 0) -> Instance:
    channel = build_channel(scenario)
    plan = kmeans_group(scenario.user_positions, num_groups, seed=seed)
    prec = build_precoders(channel, plan)
    cons = default_constraints(scenario.num_users, num_groups, p_total,
                               demands=scenario.demands, r_min=r_min)
    return Instance(scenario, channel, plan, prec, cons)


def scheme_report(inst: Instance, scheme: str, solver_kwargs: dict | None = None,
                  model=None, seed: int = 0) -> tuple[RateReport, PowerAllocation]:
    """Rates and power allocation of one scheme on a prepared instance."""
    p_total = inst.cons.p_total_cap
    if scheme == "opt":
        res: SolveResult = solve(inst.channel, inst.plan, inst.prec, inst.cons, seed=seed,
                                 **(solver_kwargs or {}))
        return res.report, res.allocation
    if scheme == "dnn":
        if model is None:
            raise ValueError("scheme 'dnn' needs a trained model")
        from .dnn import predict
        feats = features_for(inst.scenario, inst.channel)
        alloc = predict(model, feats, inst.cons, inst.plan.assignment).allocation
        return hrs_report(inst.channel, inst.plan, inst.prec, alloc), alloc
    if scheme == "hrs-uniform":
        alloc = power_split(p_total, BETA, ALPHA, inst.plan.num_groups, inst.plan.num_users)
        return hrs_report(inst.channel, inst.plan, inst.prec, alloc), alloc
    if scheme == "rs":
        alloc = rs_uniform_split(p_total, inst.plan.num_users)
        return conventional_rs_rate(inst.channel, alloc), alloc
    if scheme == "oma":
        K = inst.plan.num_users
        alloc = PowerAllocation(0.0, np.zeros(0), np.full(K, p_total))
        return oma_rate(inst.channel, p_total), alloc
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")

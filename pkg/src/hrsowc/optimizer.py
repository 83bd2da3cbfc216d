"""
Power allocation for HRS: utility, constraints, projection, solver and a
brute-force grid oracle.

The decision variable is ``x = (p_ic[0..G-1], p_p[0..K-1])``; the
outer-common power is held at ``ConstraintSet.p_oc_fixed``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .geometry import ChannelMatrix
from .grouping import GroupingPlan
from .rsmodel import (PowerAllocation, PrecoderSet, RateReport, SinrOperator,
                      hrs_report, message_gains, power_split)

__all__ = [
    "ConstraintSet", "SolveResult", "UTILITY_MODES", "default_constraints",
    "utility", "utility_from_rates", "check_feasibility", "project_feasible",
    "project_batch", "solve", "grid_oracle", "Problem",
]

log = logging.getLogger(__name__)

UTILITY_MODES = ("log-message", "sum")
LOG_EPS = 1e-6
FEAS_TOL = 1e-9
PENALTY_MU = 100.0
BETA, ALPHA = 0.8, 0.75
FD_STEP = 1e-6
LOG_FLOOR = 1e-4
N_HALVINGS = 24


@dataclass(frozen=True)
class ConstraintSet:
    p_total_cap: float
    p_oc_fixed: float
    group_caps: tuple
    user_cap: float
    r_min: float

    def __post_init__(self):
        object.__setattr__(self, "group_caps", tuple(float(c) for c in self.group_caps))
        if min((self.p_total_cap, self.p_oc_fixed, self.user_cap) + self.group_caps,
               default=0.0) < 0:
            raise ValueError("power caps must be nonnegative")

    @property
    def budget(self) -> float:
        """Power left for the variable messages."""
        return self.p_total_cap - self.p_oc_fixed

    def scaled(self, factor: float) -> "ConstraintSet":
        """Same constraints with every power cap multiplied by ``factor``."""
        return ConstraintSet(self.p_total_cap * factor, self.p_oc_fixed * factor,
                             tuple(c * factor for c in self.group_caps),
                             self.user_cap * factor, self.r_min)


def default_constraints(num_users: int, num_groups: int, p_total: float = 1.0,
                        demands=None, r_min: float | None = None) -> ConstraintSet:
    """Caps derived from the total budget: 20% fixed outer common, 75% of the
    remainder per group, twice the equal share per user; r_min = sum of demands."""
    p_oc = p_total * (1 - BETA)
    rest = p_total - p_oc
    if r_min is None:
        r_min = float(np.sum(demands)) if demands is not None else 0.0
    return ConstraintSet(p_total_cap=p_total, p_oc_fixed=p_oc,
                         group_caps=(0.75 * rest,) * num_groups,
                         user_cap=2.0 * rest / num_users, r_min=r_min)


@dataclass(frozen=True)
class SolveResult:
    allocation: PowerAllocation
    utility: float
    sum_rate: float
    feasible: bool
    qos_met: bool
    iterations: int
    restarts_used: int
    objective: float
    report: RateReport | None = None


# -- utility and feasibility --------------------------------------------------

def utility_from_rates(rates: np.ndarray, mode: str = "log-message") -> np.ndarray:
    """Utility of message-rate rows (..., 1+G+K)."""
    if mode == "sum":
        return np.sum(rates, axis=-1)
    if mode == "log-message":
        return np.sum(np.log(rates + LOG_EPS), axis=-1)
    raise ValueError(f"unknown utility mode {mode!r}; expected one of {UTILITY_MODES}")


def utility(report: RateReport, mode: str = "log-message") -> float:
    return float(utility_from_rates(report.message_rates, mode))


def check_feasibility(alloc: PowerAllocation, cons: ConstraintSet,
                      report: RateReport | None = None, assignment=None, tol: float = FEAS_TOL):
    """(feasible, qos_met) for the power constraints and the minimum sum rate."""
    if assignment is None:
        assignment = report.assignment if report is not None else ()
    assignment = np.asarray(assignment, dtype=int)
    p_ic, p_p = alloc.p_ic, alloc.p_p
    group_use = p_ic + np.bincount(assignment, weights=p_p, minlength=len(p_ic))
    feasible = bool(
        alloc.total <= cons.p_total_cap + tol
        and np.all(group_use <= np.asarray(cons.group_caps) + tol)
        and np.all(p_p <= cons.user_cap + tol)
        and alloc.p_oc >= -tol and np.all(p_ic >= -tol) and np.all(p_p >= -tol)
    )
    qos_met = bool(report is not None and report.sum_rate >= cons.r_min)
    return feasible, qos_met


def project_batch(X: np.ndarray, cons: ConstraintSet, assignment) -> np.ndarray:
    """Row-wise `project_feasible` on an (n, G+K) array of raw powers."""
    assignment = np.asarray(assignment, dtype=int)
    G = len(cons.group_caps)
    X = np.maximum(np.array(X, dtype=float, ndmin=2), 0.0)
    X[:, G:] = np.minimum(X[:, G:], cons.user_cap)
    member = np.zeros((G + len(assignment), G))
    member[np.arange(G), np.arange(G)] = 1.0
    member[G + np.arange(len(assignment)), assignment] = 1.0
    use = X @ member
    caps = np.asarray(cons.group_caps)
    over = use > caps
    scale = np.where(over, caps / np.where(over, use, 1.0), 1.0)
    X = X * (scale @ member.T)
    total = X.sum(axis=1)
    over = total > cons.budget
    X[over] *= (cons.budget / total[over])[:, None]
    return X


def project_feasible(x, cons: ConstraintSet, assignment) -> PowerAllocation:
    """Clip, then scale per group, then scale to the total budget."""
    if cons.p_oc_fixed > cons.p_total_cap:
        raise ValueError("fixed outer-common power exceeds the total budget")
    G = len(cons.group_caps)
    x = np.asarray(x, dtype=float)
    if x.shape != (G + len(assignment),):
        raise ValueError(f"expected {G + len(assignment)} raw powers, got shape {x.shape}")
    y = project_batch(x, cons, assignment)[0]
    return PowerAllocation(cons.p_oc_fixed, y[:G], y[G:])


# -- the program ----------------------------------------------------------------

class Problem:
    """Vectorised objective for one (channel, grouping, precoder, constraints) tuple."""

    def __init__(self, channel: ChannelMatrix, plan: GroupingPlan, prec: PrecoderSet,
                 cons: ConstraintSet, mode: str = "log-message"):
        if mode not in UTILITY_MODES:
            raise ValueError(f"unknown utility mode {mode!r}")
        if len(cons.group_caps) != plan.num_groups:
            raise ValueError("constraint set and grouping plan disagree on G")
        if cons.p_oc_fixed > cons.p_total_cap:
            raise ValueError("fixed outer-common power exceeds the total budget")
        self.channel, self.plan, self.prec, self.cons, self.mode = channel, plan, prec, cons, mode
        self.assignment = np.asarray(plan.assignment)
        self.G, self.K = plan.num_groups, plan.num_users
        self.gains = message_gains(channel, plan, prec)
        self.op = SinrOperator(self.gains, self.assignment, channel.noise_variance)

    def rates(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        P = np.empty((len(X), 1 + X.shape[1]))
        P[:, 0] = self.cons.p_oc_fixed
        P[:, 1:] = X
        return self.op.rates(P)

    def evaluate(self, X):
        """(objective, utility, sum_rate) arrays for rows of X."""
        r = self.rates(X)
        u = utility_from_rates(r, self.mode)
        s = r.sum(axis=1)
        shortfall = np.maximum(0.0, self.cons.r_min - s)
        return u - PENALTY_MU * shortfall ** 2, u, s

    def project(self, X):
        return project_batch(X, self.cons, self.assignment)

    def result(self, x, iterations=0, restarts=0) -> SolveResult:
        alloc = PowerAllocation(self.cons.p_oc_fixed, x[:self.G], x[self.G:])
        report = hrs_report(self.channel, self.plan, self.prec, alloc)
        obj, u, s = self.evaluate(x)
        feasible, qos = check_feasibility(alloc, self.cons, report)
        return SolveResult(allocation=alloc, utility=float(u[0]), sum_rate=float(s[0]),
                           feasible=feasible, qos_met=qos, iterations=iterations,
                           restarts_used=restarts, objective=float(obj[0]), report=report)


def _starts(prob: Problem, seed: int, n_random: int) -> np.ndarray:
    cons, G, K = prob.cons, prob.G, prob.K
    n = G + K
    uniform = np.full(n, cons.budget / n)
    beta = 1.0 - cons.p_oc_fixed / cons.p_total_cap if cons.p_total_cap > 0 else 1.0
    split = power_split(cons.p_total_cap, beta if beta > 0 else 1.0, ALPHA, G, K)
    rng = np.random.default_rng(seed)
    rand = rng.uniform(0.0, 1.0, size=(n_random, n)) * cons.budget * 2.0 / n
    return prob.project(np.vstack([uniform, np.concatenate([split.p_ic, split.p_p]), rand]))


def _ascend(prob: Problem, starts: np.ndarray, max_iter: int, rel_tol: float, patience: int):
    """Projected gradient ascent run on every start at once.

    Gradients are central differences in watts (one-sided at zero), mapped
    to log-power coordinates; the step along the normalised log-power
    gradient is the best of a halving sequence 1, 1/2, 1/4, ... that
    improves the objective. Each candidate is projected onto the feasible
    set. A start retires when no candidate improves, or when the relative
    improvement stays below ``rel_tol`` for ``patience`` iterations.
    """
    S, n = starts.shape
    h = FD_STEP * prob.cons.p_total_cap
    floor = LOG_FLOOR * max(prob.cons.budget, 1e-300)
    steps = 0.5 ** np.arange(N_HALVINGS)
    eye = np.eye(n)
    X = starts.copy()
    F = prob.evaluate(X)[0]
    stall = np.zeros(S, dtype=int)
    iters = np.zeros(S, dtype=int)
    active = np.ones(S, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        x = X[idx]
        hi = x[:, None, :] + h * eye
        lo = np.maximum(x[:, None, :] - h * eye, 0.0)
        vals = prob.evaluate(np.concatenate([hi, lo], axis=1).reshape(-1, n))[0]
        vals = vals.reshape(len(idx), 2 * n)
        width = hi[:, np.arange(n), np.arange(n)] - lo[:, np.arange(n), np.arange(n)]
        grad = (vals[:, :n] - vals[:, n:]) / width * (x + floor)
        norm = np.linalg.norm(grad, axis=1)
        ok = np.isfinite(norm) & (norm > 0)
        direction = np.where(ok[:, None], grad / np.where(ok, norm, 1.0)[:, None], 0.0)
        u = np.log(x + floor)
        cand = np.exp(u[:, None, :] + steps[None, :, None] * direction[:, None, :]) - floor
        cand = prob.project(cand.reshape(-1, n)).reshape(len(idx), N_HALVINGS, n)
        fc = prob.evaluate(cand.reshape(-1, n))[0].reshape(len(idx), N_HALVINGS)
        fc = np.where(fc > F[idx, None], fc, -np.inf)
        j = np.argmax(fc, axis=1)
        best = fc[np.arange(len(idx)), j]
        moved = ok & np.isfinite(best)
        iters[idx] += 1
        # an unchanged iterate would repeat the same iteration forever
        active[idx[~moved]] = False
        m = idx[moved]
        gain = best[moved] - F[m]
        X[m] = cand[np.flatnonzero(moved), j[moved]]
        F[m] = best[moved]
        small = gain < rel_tol * np.maximum(np.abs(F[m]), 1e-300)
        stall[m] = np.where(small, stall[m] + 1, 0)
        active[m[stall[m] >= patience]] = False
    return X, F, iters


def solve(channel: ChannelMatrix, plan: GroupingPlan, prec: PrecoderSet, cons: ConstraintSet,
          mode: str = "log-message", seed: int = 0, n_random: int = 8,
          max_iter: int = 5000, rel_tol: float = 1e-8, patience: int = 20) -> SolveResult:
    """Multi-start projected gradient ascent with finite-difference gradients.

    Starts: equal split, beta/alpha split, ``n_random`` seeded random points.
    The best restart wins; ties go to the lowest restart index.
    """
    prob = Problem(channel, plan, prec, cons, mode)
    starts = _starts(prob, seed, n_random)
    X, F, iters = _ascend(prob, starts, max_iter, rel_tol, patience)
    best = int(np.argmax(F))          # first maximum, i.e. lowest restart index
    res = prob.result(X[best], iterations=int(iters.sum()), restarts=len(starts))
    if not res.qos_met:
        log.info("minimum sum rate %.3f not reached (best %.3f)", cons.r_min, res.sum_rate)
    return res


def grid_oracle(channel: ChannelMatrix, plan: GroupingPlan, prec: PrecoderSet,
                cons: ConstraintSet, mode: str = "log-message", resolution: int = 60,
                chunk: int = 50_000) -> SolveResult:
    """Exhaustive search over the grid {0, D, 2D, ...}, D = budget / resolution."""
    n = plan.num_groups + plan.num_users
    if n > 4:
        raise ValueError(f"grid oracle limited to G + K <= 4 variables, got {n}")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    prob = Problem(channel, plan, prec, cons, mode)
    delta = cons.budget / resolution
    G = plan.num_groups
    levels = np.arange(resolution + 1) * delta
    caps = np.asarray(cons.group_caps)
    best_x, best_f = None, -np.inf
    grid = itertools.product(range(resolution + 1), repeat=n)
    while True:
        block = np.array(list(itertools.islice(grid, chunk)), dtype=int)
        if not len(block):
            break
        X = levels[block]
        use = X[:, :G] + np.stack([X[:, G:][:, prob.assignment == g].sum(axis=1)
                                   for g in range(G)], axis=1)
        ok = ((X.sum(axis=1) <= cons.budget + FEAS_TOL)
              & np.all(use <= caps + FEAS_TOL, axis=1)
              & np.all(X[:, G:] <= cons.user_cap + FEAS_TOL, axis=1))
        if not ok.any():
            continue
        X = X[ok]
        f = prob.evaluate(X)[0]
        j = int(np.argmax(f))
        if f[j] > best_f:
            best_x, best_f = X[j], f[j]
    if best_x is None:
        raise ValueError("no feasible grid point")
    return prob.result(best_x, iterations=0, restarts=0)

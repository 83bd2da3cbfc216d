"""
Hierarchical rate splitting (HRS) and baseline schemes.

Message layout used throughout (``message index``):

    0            outer-common message
    1 .. G       inner-common message of group g
    G+1 .. G+K   private message of user k

All channel entries and beam vectors are real, so every |h^T v|^2 is a
plain square.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ChannelMatrix
from .grouping import GroupingPlan

__all__ = [
    "PowerAllocation", "PrecoderSet", "RateReport", "power_split",
    "rs_uniform_split", "build_precoders", "zf_columns", "message_beams",
    "message_gains", "hrs_sinrs", "hrs_rates", "hrs_report", "hrs_sinr_batch",
    "hrs_rate_batch", "SinrOperator", "conventional_rs_rate", "oma_rate",
]

NULL_TOL = 1e-10


def _vec(x) -> np.ndarray:
    a = np.array(x, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PowerAllocation:
    """Powers (W) of the outer-common, inner-common and private messages."""
    p_oc: float
    p_ic: np.ndarray
    p_p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_oc", float(self.p_oc))
        object.__setattr__(self, "p_ic", _vec(self.p_ic))
        object.__setattr__(self, "p_p", _vec(self.p_p))

    @property
    def total(self) -> float:
        return self.p_oc + float(self.p_ic.sum()) + float(self.p_p.sum())

    def as_vector(self) -> np.ndarray:
        """Powers in message-index order."""
        return np.concatenate([[self.p_oc], self.p_ic, self.p_p])

    @classmethod
    def from_vector(cls, vec, num_groups: int) -> "PowerAllocation":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[0], vec[1:1 + num_groups], vec[1 + num_groups:])


def power_split(p_total: float, beta: float, alpha: float, g: int, k: int) -> PowerAllocation:
    """Uniform HRS split: (1-beta) to the outer common, the rest shared per group/user."""
    if not (0 < beta <= 1 and 0 < alpha <= 1):
        raise ValueError("beta and alpha must lie in (0, 1]")
    if p_total < 0:
        raise ValueError("p_total must be nonnegative")
    return PowerAllocation(
        p_oc=p_total * (1 - beta),
        p_ic=np.full(g, p_total * beta * (1 - alpha) / g),
        p_p=np.full(k, p_total * beta * alpha / k),
    )


def rs_uniform_split(p_total: float, k: int, private_fraction: float = 0.75) -> PowerAllocation:
    """Single-tier RS split: one common message plus K equal private messages."""
    if not 0 < private_fraction <= 1:
        raise ValueError("private_fraction must lie in (0, 1]")
    return PowerAllocation(p_oc=p_total * (1 - private_fraction), p_ic=np.zeros(0),
                           p_p=np.full(k, p_total * private_fraction / k))


@dataclass(frozen=True)
class PrecoderSet:
    w_oc: np.ndarray
    outer: tuple           # B_g, L x r_g
    inner: tuple           # W_g, r_g x K_g
    inner_common: tuple    # w_ic,g, r_g
    no_outer_separation: bool = False


@dataclass(frozen=True)
class RateReport:
    sinr_oc: np.ndarray
    sinr_ic: np.ndarray
    sinr_p: np.ndarray
    r_oc: float | None = None
    r_ic: np.ndarray | None = None
    r_p: np.ndarray | None = None
    sum_rate: float | None = None
    scheme: str = "hrs"
    assignment: tuple = field(default=())

    @property
    def message_rates(self) -> np.ndarray:
        """All message rates in message-index order."""
        return np.concatenate([[self.r_oc], self.r_ic, self.r_p])


# -- precoding -----------------------------------------------------------------

def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


def zf_columns(h_eff: np.ndarray) -> np.ndarray:
    """Column-normalised pseudo-inverse of an effective channel (zero-forcing)."""
    w = np.linalg.pinv(h_eff)
    norms = np.linalg.norm(w, axis=0)
    return np.divide(w, norms, out=np.zeros_like(w), where=norms > 0)


def _null_space(a: np.ndarray) -> np.ndarray:
    _, s, vt = np.linalg.svd(a)
    rank = int(np.sum(s > NULL_TOL * s[0])) if s.size and s[0] > 0 else 0
    return vt[rank:].T


def build_precoders(channel: ChannelMatrix, plan: GroupingPlan) -> PrecoderSet:
    """Block-diagonalising outer precoders and zero-forcing inner precoders.

    B_g is an orthonormal basis of the null space of the other groups'
    channel rows; when that null space is empty B_g falls back to the
    identity and ``no_outer_separation`` is set. The outer- and
    inner-common beams are matched to the sum of the served channel rows.
    """
    H = channel.gains
    L = H.shape[1]
    if plan.num_users != H.shape[0]:
        raise ValueError("grouping plan and channel disagree on K")
    w_oc = _normalize(H.sum(axis=0))
    outer, inner, inner_common = [], [], []
    fallback = False
    for members in plan.group_members:
        others = [k for k in range(len(H)) if k not in members]
        if not others:
            B = np.eye(L)
        else:
            B = _null_space(H[others])
            if B.shape[1] == 0:
                B = np.eye(L)
                fallback = True
        h_eff = H[list(members)] @ B
        outer.append(B)
        inner.append(zf_columns(h_eff))
        inner_common.append(_normalize(h_eff.sum(axis=0)))
    return PrecoderSet(w_oc=w_oc, outer=tuple(outer), inner=tuple(inner),
                       inner_common=tuple(inner_common), no_outer_separation=fallback)


def message_beams(plan: GroupingPlan, prec: PrecoderSet) -> np.ndarray:
    """L x (1+G+K) matrix of transmit beams in message-index order."""
    G, K = plan.num_groups, plan.num_users
    L = len(prec.w_oc)
    V = np.zeros((L, 1 + G + K))
    V[:, 0] = prec.w_oc
    for g, members in enumerate(plan.group_members):
        B = prec.outer[g]
        V[:, 1 + g] = B @ prec.inner_common[g]
        for i, k in enumerate(members):
            V[:, 1 + G + k] = B @ prec.inner[g][:, i]
    return V


def message_gains(channel: ChannelMatrix, plan: GroupingPlan, prec: PrecoderSet) -> np.ndarray:
    """K x (1+G+K) matrix of effective gains |h_k^T v_m|^2."""
    return (channel.gains @ message_beams(plan, prec)) ** 2


# -- HRS SINRs and rates ---------------------------------------------------------

def _safe_ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.broadcast_to(np.asarray(den, dtype=float), num.shape)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


class SinrOperator:
    """Linear maps from message powers to SINR numerators and denominators.

    Every SINR is a ratio of two linear forms in the power vector, so one
    matrix product per batch yields all of them.
    """

    def __init__(self, gains: np.ndarray, assignment, noise: float):
        assignment = np.asarray(assignment, dtype=int)
        K = gains.shape[0]
        G = gains.shape[1] - 1 - K
        self.K, self.G, self.noise = K, G, float(noise)
        self.assignment = assignment
        users = np.arange(K)
        own_ic = np.zeros((K, G), dtype=bool)
        own_ic[users, assignment] = True
        a_oc, a_ic, a_p = gains[:, 0], gains[:, 1:1 + G], gains[:, 1 + G:]
        a_ic_other = np.where(own_ic, 0.0, a_ic)
        a_p_other = a_p * (1.0 - np.eye(K))

        n = 1 + G + K
        num = np.zeros((n, 3 * K))
        den = np.zeros((n, 3 * K))
        num[0, :K] = a_oc
        num[1 + assignment, K + users] = a_ic[users, assignment]
        num[1 + G + users, 2 * K + users] = np.diag(a_p)
        den[1:1 + G, :K] = a_ic.T                  # outer common: every other message
        den[1 + G:, :K] = a_p.T
        den[1:1 + G, K:2 * K] = a_ic_other.T       # inner common: own outer/inner removed
        den[1 + G:, K:2 * K] = a_p.T
        den[1:1 + G, 2 * K:] = a_ic_other.T        # private: own private and own inner removed
        den[1 + G:, 2 * K:] = a_p_other.T
        self.matrix = np.hstack([num, den])
        # users sorted by group so each group's minimum is one reduceat segment
        self.order = np.argsort(assignment, kind="stable")
        counts = np.bincount(assignment, minlength=G)
        self.offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int)

    def sinrs(self, powers: np.ndarray):
        P = np.atleast_2d(powers)
        K = self.K
        z = P @ self.matrix
        num, den = z[:, :3 * K], z[:, 3 * K:] + self.noise
        g = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        return g[:, :K], g[:, K:2 * K], g[:, 2 * K:]

    def rates(self, powers: np.ndarray) -> np.ndarray:
        g_oc, g_ic, g_p = self.sinrs(powers)
        n = g_oc.shape[0]
        out = np.empty((n, 1 + self.G + self.K))
        out[:, 0] = np.log2(1.0 + g_oc.min(axis=1))
        if self.G:
            out[:, 1:1 + self.G] = np.log2(
                1.0 + np.minimum.reduceat(g_ic[:, self.order], self.offsets, axis=1))
        out[:, 1 + self.G:] = np.log2(1.0 + g_p)
        return out


def hrs_sinr_batch(gains: np.ndarray, assignment, powers: np.ndarray, noise: float):
    """Vectorised SINRs for a batch of power vectors.

    ``powers`` has shape (n, 1+G+K) in message-index order. Returns three
    (n, K) arrays: outer-common, inner-common and private SINRs.
    """
    return SinrOperator(gains, assignment, noise).sinrs(powers)


def hrs_rate_batch(gains, assignment, powers, noise, num_groups: int):
    """Per-message rates (n, 1+G+K) for a batch of power vectors."""
    op = SinrOperator(gains, assignment, noise)
    if op.G != num_groups:
        raise ValueError("gain matrix and group count disagree")
    return op.rates(powers)


def hrs_sinrs(channel: ChannelMatrix, plan: GroupingPlan, prec: PrecoderSet,
              alloc: PowerAllocation) -> RateReport:
    """SINR part of the HRS rate report (rates left unset)."""
    if len(alloc.p_ic) != plan.num_groups or len(alloc.p_p) != plan.num_users:
        raise ValueError("allocation does not match the grouping plan")
    gains = message_gains(channel, plan, prec)
    g_oc, g_ic, g_p = hrs_sinr_batch(gains, plan.assignment, alloc.as_vector(),
                                     channel.noise_variance)
    return RateReport(sinr_oc=_vec(g_oc[0]), sinr_ic=_vec(g_ic[0]), sinr_p=_vec(g_p[0]),
                      scheme="hrs", assignment=tuple(plan.assignment))


def hrs_rates(report: RateReport) -> RateReport:
    """Complete a SINR-only report with message rates and the sum rate."""
    assignment = np.asarray(report.assignment)
    G = int(assignment.max()) + 1 if assignment.size else 0
    r_oc = float(np.log2(1.0 + report.sinr_oc.min()))
    r_ic = np.array([np.log2(1.0 + report.sinr_ic[assignment == g].min()) for g in range(G)])
    r_p = np.log2(1.0 + report.sinr_p)
    total = r_oc + float(r_ic.sum()) + float(r_p.sum())
    return RateReport(sinr_oc=report.sinr_oc, sinr_ic=report.sinr_ic, sinr_p=report.sinr_p,
                      r_oc=r_oc, r_ic=_vec(r_ic), r_p=_vec(r_p), sum_rate=total,
                      scheme=report.scheme, assignment=report.assignment)


def hrs_report(channel, plan, prec, alloc) -> RateReport:
    return hrs_rates(hrs_sinrs(channel, plan, prec, alloc))


# -- baselines -------------------------------------------------------------------

def conventional_rs_rate(channel: ChannelMatrix, alloc_rs: PowerAllocation) -> RateReport:
    """Single-tier RS: one common message (``p_oc``) and K ZF private messages."""
    H = channel.gains
    K = H.shape[0]
    if len(alloc_rs.p_p) != K or len(alloc_rs.p_ic):
        raise ValueError("RS allocation needs one common power and K private powers")
    noise = channel.noise_variance
    w_c = _normalize(H.sum(axis=0))
    W = zf_columns(H)
    c_gain = (H @ w_c) ** 2
    p_gain = (H @ W) ** 2                          # [k, j] = |h_k^T w_j|^2
    interference = p_gain @ alloc_rs.p_p           # all private terms at user k
    others = (p_gain * (1.0 - np.eye(K))) @ alloc_rs.p_p
    own = alloc_rs.p_p * np.diag(p_gain)
    sinr_c = _safe_ratio(alloc_rs.p_oc * c_gain, interference + noise)
    sinr_p = _safe_ratio(own, others + noise)
    r_c = float(np.log2(1.0 + sinr_c.min()))
    r_p = np.log2(1.0 + sinr_p)
    return RateReport(sinr_oc=_vec(sinr_c), sinr_ic=_vec(np.zeros(K)), sinr_p=_vec(sinr_p),
                      r_oc=r_c, r_ic=_vec([]), r_p=_vec(r_p),
                      sum_rate=r_c + float(r_p.sum()), scheme="rs",
                      assignment=tuple([0] * K))


def oma_rate(channel: ChannelMatrix, p_total: float) -> RateReport:
    """Equal time sharing; each user gets its slot with a matched-filter beam."""
    if p_total < 0:
        raise ValueError("p_total must be nonnegative")
    H = channel.gains
    K = H.shape[0]
    snr = p_total * np.sum(H ** 2, axis=1) / channel.noise_variance
    r = np.log2(1.0 + snr) / K
    return RateReport(sinr_oc=_vec(np.zeros(K)), sinr_ic=_vec(np.zeros(K)), sinr_p=_vec(snr),
                      r_oc=0.0, r_ic=_vec([]), r_p=_vec(r), sum_rate=float(r.sum()),
                      scheme="oma", assignment=tuple([0] * K))

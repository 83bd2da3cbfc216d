import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import null_space

from conftest import connected_instance
from hrsowc.geometry import ChannelMatrix
from hrsowc.grouping import GroupingPlan
from hrsowc.rsmodel import (PowerAllocation, build_precoders, conventional_rs_rate, hrs_report,
                            hrs_sinrs, message_beams, oma_rate, power_split, rs_uniform_split,
                            zf_columns)
from oracles import brute_sinrs


def test_power_split_values():
    a = power_split(1.0, 0.8, 0.75, 2, 6)
    assert a.p_oc == pytest.approx(0.2)
    assert np.allclose(a.p_ic, 0.1) and np.allclose(a.p_p, 0.1)
    assert a.total == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        power_split(1.0, 0.0, 0.5, 2, 6)


def test_rs_uniform_split():
    a = rs_uniform_split(1.0, 6)
    assert a.p_oc == 0.25 and np.allclose(a.p_p, 0.125) and a.p_ic.size == 0


def test_allocation_vector_roundtrip():
    a = PowerAllocation(0.2, [0.1, 0.2], [0.3, 0.1, 0.1])
    b = PowerAllocation.from_vector(a.as_vector(), 2)
    assert np.array_equal(a.as_vector(), b.as_vector())


def test_outer_precoders_null_other_groups():
    for seed in range(10):
        inst = connected_instance(seed)
        H, plan, prec = inst.channel.gains, inst.plan, inst.prec
        for g, members in enumerate(plan.group_members):
            others = [k for k in range(6) if k not in members]
            B = prec.outer[g]
            dim = null_space(H[others]).shape[1]
            if dim == 0:
                assert prec.no_outer_separation and np.array_equal(B, np.eye(4))
                continue
            assert B.shape[1] == dim
            assert np.allclose(B.T @ B, np.eye(B.shape[1]), atol=1e-12)
            assert np.max(np.abs(H[others] @ B)) < 1e-12 * np.max(H)


def test_zf_columns_invert_full_rank_channel():
    h = np.array([[1.0, 0.2, 0.1], [0.3, 1.0, 0.2]])
    W = zf_columns(h)
    assert np.allclose(np.linalg.norm(W, axis=0), 1.0)
    prod = h @ W
    assert abs(prod[0, 1]) < 1e-14 and abs(prod[1, 0]) < 1e-14


def test_single_group_uses_identity_outer_precoder():
    inst = connected_instance(4, num_groups=1)
    assert np.array_equal(inst.prec.outer[0], np.eye(4))
    assert not inst.prec.no_outer_separation


def test_outer_fallback_flag_when_null_space_empty():
    H = np.array([[1.0, 0.5], [0.3, 1.0], [0.7, 0.2]])
    ch = ChannelMatrix(H, [0, 0, 0], 1e-3)
    prec = build_precoders(ch, GroupingPlan.from_assignment([0, 1, 1]))
    assert prec.no_outer_separation


def test_sinrs_match_term_by_term_oracle():
    for seed in range(10):
        inst = connected_instance(seed)
        rng = np.random.default_rng(seed)
        alloc = PowerAllocation(0.2, rng.uniform(0, 0.1, 2), rng.uniform(0, 0.1, 6))
        got = hrs_sinrs(inst.channel, inst.plan, inst.prec, alloc)
        V = message_beams(inst.plan, inst.prec)
        ref = brute_sinrs(inst.channel.gains, list(inst.plan.assignment), V, alloc.as_vector(),
                          inst.channel.noise_variance)
        for a, b in zip((got.sinr_oc, got.sinr_ic, got.sinr_p), ref):
            assert np.allclose(a, b, rtol=1e-12, atol=0)


def test_rates_follow_min_rules():
    inst = connected_instance(1)
    rep = hrs_report(inst.channel, inst.plan, inst.prec, power_split(1.0, 0.8, 0.75, 2, 6))
    assert rep.r_oc == pytest.approx(math.log2(1 + rep.sinr_oc.min()))
    for g, members in enumerate(inst.plan.group_members):
        assert rep.r_ic[g] == pytest.approx(math.log2(1 + rep.sinr_ic[list(members)].min()))
    assert rep.sum_rate == pytest.approx(rep.r_oc + rep.r_ic.sum() + rep.r_p.sum())


def test_single_group_reduces_to_rate_splitting():
    for seed in range(5):
        inst = connected_instance(seed, num_groups=1)
        rs = rs_uniform_split(1.0, 6)
        hrs = PowerAllocation(rs.p_oc, [0.0], rs.p_p)
        a = hrs_report(inst.channel, inst.plan, inst.prec, hrs).sum_rate
        b = conventional_rs_rate(inst.channel, rs).sum_rate
        assert abs(a - b) <= 1e-12 * max(1.0, abs(b))


def test_oma_rate_formula():
    H = np.array([[1e-4, 2e-4], [3e-4, 0.0]])
    ch = ChannelMatrix(H, [0, 0], 1e-13)
    rep = oma_rate(ch, 0.5)
    want = [0.5 * math.log2(1 + 0.5 * 5e-8 / 1e-13), 0.5 * math.log2(1 + 0.5 * 9e-8 / 1e-13)]
    assert np.allclose(rep.r_p, want, rtol=1e-13)


def test_dimension_mismatch_rejected(inst6):
    with pytest.raises(ValueError):
        hrs_sinrs(inst6.channel, inst6.plan, inst6.prec, PowerAllocation(0.2, [0.1], [0.1] * 6))
    with pytest.raises(ValueError):
        conventional_rs_rate(inst6.channel, PowerAllocation(0.2, [], [0.1] * 5))


@given(st.floats(1.01, 100.0), st.integers(0, 20))
def test_scaling_all_powers_up_never_lowers_a_sinr(c, seed):
    inst = connected_instance(seed)
    rng = np.random.default_rng(seed)
    a = PowerAllocation(0.2, rng.uniform(0, 0.1, 2), rng.uniform(0, 0.1, 6))
    b = PowerAllocation.from_vector(c * a.as_vector(), 2)
    ra = hrs_sinrs(inst.channel, inst.plan, inst.prec, a)
    rb = hrs_sinrs(inst.channel, inst.plan, inst.prec, b)
    for x, y in zip((ra.sinr_oc, ra.sinr_ic, ra.sinr_p), (rb.sinr_oc, rb.sinr_ic, rb.sinr_p)):
        assert np.all(y >= x * (1 - 1e-12))
        assert np.all(x >= 0)

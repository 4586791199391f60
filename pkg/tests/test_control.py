import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from uwballoc.allocator import (equal_power_allocation, hqos_reduction_cap, interference_control,
                                interference_ledger, min_overlap_power, user_rates)
from uwballoc.allocator.model import STILL_OVER_THRESHOLD, RateModel, band_rate, overlap_power
from uwballoc.interference import PrimaryUserBand, overlap_factors
from uwballoc.mac import UserProfile

P_T = 1.174e-4
RM = RateModel()


def _setup(classes=("HQoS", "SQoS", "SQoS"), rates=(53.3, 53.3, 53.3), diag=1e6):
    profiles = [UserProfile(k, c, r) for k, (c, r) in enumerate(zip(classes, rates))]
    E = np.full((3, 3), diag * 1e-3) + np.diag([diag] * 3)
    return profiles, E, equal_power_allocation(profiles, E, P_T)


def bisection_cap(alloc, k, b, E, lambdas, f):
    """Largest reduction on (k, b) keeping user k's spectral rate at its target."""
    target = float(RM.to_spectral(alloc.targets[k]))
    p = alloc.power[k, b]

    def slack(red):
        reds = alloc.reductions.copy()
        reds[k, b] = red
        fr = alloc.overlap_fraction.copy()
        fr[k, b] = f
        return user_rates(alloc.power, reds, fr, E, lambdas)[k] - target

    hi = f * p
    if slack(hi) >= 0:
        return hi
    if slack(0.0) < 0:
        return 0.0
    return brentq(slack, 0.0, hi, xtol=1e-30, rtol=1e-15)


def test_no_violation_leaves_allocation_unchanged():
    profiles, E, base = _setup()
    out = interference_control(base, [PrimaryUserBand(3.432, 50.0, 1e3)], profiles, E)
    assert np.array_equal(out.reductions, base.reductions)
    assert np.array_equal(out.achieved_rates, base.achieved_rates)
    assert out.interference_after[0] == out.interference_before[0] > 0


def test_zero_width_primary_costs_nothing():
    profiles, E, base = _setup()
    out = interference_control(base, [PrimaryUserBand(3.432, 0.0, 0.0)], profiles, E)
    assert out.interference_before[0] == 0.0
    assert np.array_equal(out.power, base.power) and not out.reductions.any()


def test_sqos_overlapped_power_is_exactly_zero():
    profiles, E, base = _setup()
    primary = PrimaryUserBand(3.96, 20.0, 1e-12)
    out = interference_control(base, [primary], profiles, E)
    f = overlap_factors(primary).overlapped_fraction
    assert overlap_power(out)[1, 1] == 0.0
    assert out.reductions[1, 1] == pytest.approx(f * base.power[1, 1], rel=1e-15)
    # what remains is the out-of-band leakage of the unreduced subcarriers
    assert out.interference_after[0] > primary.i_th_mw
    assert STILL_OVER_THRESHOLD in out.flags


def test_hqos_reduction_matches_bisection_oracle():
    # P E ~ 1.0 on the diagonal: 412 Mbps against a 400 Mbps target
    profiles, E, base = _setup(rates=(400.0, 53.3, 53.3), diag=2.55e4)
    primary = PrimaryUserBand(3.432, 50.0, 1e-12)
    out = interference_control(base, [primary], profiles, E)
    f = overlap_factors(primary).overlapped_fraction
    lambdas = [p.lam for p in profiles]
    ref = bisection_cap(base, 0, 0, E, lambdas, f)
    assert 0 < ref < f * base.power[0, 0]
    assert out.reductions[0, 0] == pytest.approx(ref, rel=1e-6)
    assert out.reduction_cap[0, 0] == pytest.approx(ref, rel=1e-6)
    assert out.achieved_rates[0] >= 400.0 * (1 - 1e-9)
    assert STILL_OVER_THRESHOLD in out.flags


def test_hqos_reduces_only_as_needed():
    profiles, E, base = _setup()
    primary = PrimaryUserBand(3.432, 50.0)
    before = interference_ledger(base, [primary]).sum()
    target = 0.9 * before
    out = interference_control(base, [primary.with_threshold(target)], profiles, E)
    assert out.interference_after[0] == pytest.approx(target, rel=1e-9)
    assert STILL_OVER_THRESHOLD not in out.flags
    assert out.reductions[0, 0] < out.reduction_cap[0, 0]


def test_unsatisfiable_hqos_is_not_reduced():
    profiles, E, base = _setup(rates=(480.0, 53.3, 53.3), diag=1e4)
    assert base.achieved_rates[0] < 480.0
    out = interference_control(base, [PrimaryUserBand(3.432, 50.0, 1e-12)], profiles, E)
    assert out.reductions[0, 0] == 0.0


def test_requires_threshold_and_distinct_bands():
    profiles, E, base = _setup()
    with pytest.raises(ValueError):
        interference_control(base, [PrimaryUserBand(3.432, 10.0)], profiles, E)
    with pytest.raises(ValueError):
        interference_control(base, [PrimaryUserBand(3.432, 10.0, 1.0),
                                    PrimaryUserBand(3.44, 10.0, 1.0)], profiles, E)


def test_no_primaries():
    profiles, E, base = _setup()
    out = interference_control(base, [], profiles, E)
    assert out.interference_before.size == 0 and out.user_interference_after.shape == (0, 3)


@given(st.floats(1e2, 1e5), st.floats(1.0, 2.0), st.floats(0.01, 0.5), st.floats(0.0, 1.0))
def test_min_overlap_power_inverts_band_rate(x, lam, frac, share):
    p, e = 1.0, x
    full = np.log2(1 + x)
    need = full * share
    po = min_overlap_power(p, e, lam, frac, need)
    assert 0.0 <= po <= p
    got = band_rate(p, e, po, frac, lam)
    if 0.0 < po < p:
        assert got == pytest.approx(need, rel=1e-9)
    elif po == 0.0:
        assert got >= need - 1e-9 * full


@settings(max_examples=30)
@given(st.sampled_from([1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0]),
       st.sampled_from([1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0]))
def test_reduction_monotone_in_bandwidth(w1, w2):
    profiles, E, base = _setup()
    lo, hi = sorted((w1, w2))
    red = [interference_control(base, [PrimaryUserBand(3.96, w, 1e-12)], profiles, E).reductions[1, 1]
           for w in (lo, hi)]
    interf = [interference_ledger(base, [PrimaryUserBand(3.96, w)]).sum() for w in (lo, hi)]
    assert red[0] <= red[1] * (1 + 1e-12)
    assert interf[0] <= interf[1] * (1 + 1e-12)


def test_cap_helper_against_oracle_with_margin_spread():
    profiles, E, base = _setup(rates=(400.0, 53.3, 53.3), diag=2.55e4)
    primary = PrimaryUserBand(3.432, 30.0)
    f = overlap_factors(primary).overlapped_fraction
    lambdas = [p.lam for p in profiles]
    from dataclasses import replace
    trial = replace(base, overlap_fraction=np.where(np.arange(9).reshape(3, 3) == 0, f, 0.0))
    cap = hqos_reduction_cap(trial, 0, 0, E, lambdas, f)
    assert cap == pytest.approx(bisection_cap(base, 0, 0, E, lambdas, f), rel=1e-6)

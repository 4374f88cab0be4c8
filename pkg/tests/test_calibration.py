import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom

from pufauth import calibration as cal
from pufauth.calibration import (
    GenuineSample,
    ImpostorModel,
    binomial_cdf,
    calibrate,
    classify_zone,
    correlation_sweep,
    delta_sm_sweep,
    far,
    sm_ec,
    snap_up,
    target_zone_filter,
    tau_max,
    tau_min,
    threshold_bits,
)


def exact_cdf(n, p):
    """P[Bin(n, p) <= k] for k = 0..n in rational arithmetic."""
    p = Fraction(p)
    total, out = Fraction(0), []
    for i in range(n + 1):
        total += math.comb(n, i) * p**i * (1 - p) ** (n - i)
        out.append(total)
    return out


# -- grid arithmetic -------------------------------------------------------------------


def test_threshold_bits_absorbs_float_noise():
    assert threshold_bits(0.3, 10) == 3       # 0.3 * 10 = 2.9999999999999996
    assert threshold_bits(0.05, 2048) == 102
    assert threshold_bits(1.0, 16) == 16
    with pytest.raises(ValueError):
        threshold_bits(1.2, 10)


def test_snap_up():
    assert snap_up(0.02, 100) == 2
    assert snap_up(0.021, 100) == 3
    assert snap_up(0.0, 100) == 0
    assert snap_up(7 / 2048, 2048) == 7


# -- FAR -----------------------------------------------------------------------------------


@pytest.mark.parametrize("n,p", [(10, 0.5), (37, 0.3), (200, 0.48), (64, 0.1)])
def test_cdf_against_rational_arithmetic(n, p):
    got = binomial_cdf(n, p)
    for k, want in enumerate(exact_cdf(n, p)):
        assert got[k] == pytest.approx(float(want), rel=1e-11, abs=1e-300)


def test_far_examples():
    assert far(ImpostorModel(64), 0.0) == pytest.approx(2.0**-64, rel=1e-12)
    assert far(ImpostorModel(64), 0.0) == pytest.approx(5.42e-20, rel=1e-3)
    assert far(ImpostorModel(16), 0.0) == pytest.approx(1.526e-5, rel=1e-3)
    for n in (1, 16, 333, 2048):
        assert far(ImpostorModel(n), 1.0) == 1.0


def test_far_large_n_matches_scipy():
    cdf = binomial_cdf(2048, 0.5)
    ks = np.array([700, 887, 916, 1024])
    assert np.allclose(cdf[ks], binom.cdf(ks, 2048, 0.5), rtol=1e-10)
    # the deep tail underflows as a float but stays finite in log space
    log_tail = ImpostorModel(2048).log_cdf()[10]
    assert np.isfinite(log_tail) and log_tail < -1000


def test_cdf_is_monotone():
    for n, p in ((50, 0.5), (2048, 0.4)):
        assert np.all(np.diff(binomial_cdf(n, p)) >= 0)


def test_impostor_from_bias():
    assert ImpostorModel.from_bias(100, 0.5).mismatch_p == 0.5
    assert ImpostorModel.from_bias(100, 0.4).mismatch_p == pytest.approx(0.48)
    assert ImpostorModel.from_bias(100, 0.5, 0.2).mismatch_p == pytest.approx(0.4)


# -- tau_max -----------------------------------------------------------------------------


def test_tau_max_floors_at_16():
    for alpha in (1e-6, 1e-9):
        t = tau_max(ImpostorModel(16), alpha)
        assert (t.tau, t.floored, t.bits) == (0.0, True, 0)


def test_tau_max_reference_values():
    # frozen from scipy.stats.binom.cdf: largest k with CDF(k) <= alpha
    assert tau_max(ImpostorModel(64), 1e-6).bits == 13
    assert tau_max(ImpostorModel(2048), 1e-6).tau == 916 / 2048
    assert tau_max(ImpostorModel(2048), 1e-9).tau == 887 / 2048
    for n, alpha in ((64, 1e-6), (512, 1e-9), (2048, 1e-6)):
        k = tau_max(ImpostorModel(n), alpha).bits
        assert binom.cdf(k, n, 0.5) <= alpha < binom.cdf(k + 1, n, 0.5)


def test_tau_max_alpha_tightening_at_2048_is_about_1_4_percent():
    d = tau_max(ImpostorModel(2048), 1e-6).tau - tau_max(ImpostorModel(2048), 1e-9).tau
    assert d == pytest.approx(0.014, abs=0.001)


def test_tau_max_lenient_alpha_reaches_the_mean():
    for n in (64, 2048):
        assert tau_max(ImpostorModel(n), 0.999).tau >= 0.5


def test_floor_boundary_between_alphas():
    # CDF(0) = 2^-20 ~ 9.5e-7 sits between the two targets
    assert not tau_max(ImpostorModel(20), 1e-6).floored
    assert tau_max(ImpostorModel(20), 1e-9).floored


def test_tau_max_rejects_bad_alpha():
    with pytest.raises(ValueError):
        tau_max(ImpostorModel(10), 0.0)


# -- tau_min ------------------------------------------------------------------------------


def test_tau_min_examples():
    assert tau_min(GenuineSample(np.zeros(50), 64)) == 0.0
    masked = GenuineSample(np.array([0.0] * 99 + [0.10]), 100)
    assert tau_min(masked, 0.01) == 0.0
    assert tau_min(GenuineSample(np.full(100, 0.02), 100), 0.01) == 0.02


def test_tau_min_snaps_to_grid():
    # 0.011 on a 64-bit grid needs one full bit
    assert tau_min(GenuineSample(np.full(10, 0.011), 64), 0.01) == 1 / 64


def test_tau_min_keeps_frr_within_alpha():
    rng = np.random.default_rng(3)
    for m in (7, 100, 999):
        sample = GenuineSample.from_bits(rng.binomial(256, 0.02, m), 256)
        t = tau_min(sample, 0.01)
        assert sample.frr(t) <= 0.01
        # one grid step lower would break the FRR target (unless already at 0)
        if t > 0:
            assert sample.frr(t - 1 / 256) > 0.01


@given(st.lists(st.integers(0, 64), min_size=1, max_size=300), st.floats(0.001, 0.5))
def test_tau_min_is_the_smallest_compliant_threshold(counts, alpha):
    sample = GenuineSample.from_bits(counts, 64)
    k = cal.tau_min_bits(sample, alpha)
    allowed = math.floor(alpha * len(counts) + 1e-9)
    assert sum(c > k for c in counts) <= allowed
    if k > 0:
        assert sum(c > k - 1 for c in counts) > allowed


def test_tau_min_errors():
    with pytest.raises(ValueError):
        tau_min(GenuineSample(np.array([]), 64))
    with pytest.raises(ValueError):
        GenuineSample(np.array([1.5]), 64)


def test_frr_curve_matches_pointwise_frr():
    sample = GenuineSample.from_bits([0, 0, 1, 3, 3, 9], 16)
    curve = sample.frr_curve()
    for k in range(17):
        assert curve[k] == pytest.approx(sample.frr(k / 16))


# -- SM_ec and calibration ---------------------------------------------------------------


def test_sm_ec_examples():
    assert sm_ec(0.05, 0.35) == pytest.approx(0.30)
    assert sm_ec(0.40, 0.35) == pytest.approx(-0.05)
    assert sm_ec(0.2, 0.2) == 0


def test_calibrate_zero_sample():
    r = calibrate(GenuineSample(np.zeros(45), 2048), 1e-6)
    assert r.tau_min == 0 and r.recommended_tau == 0
    assert r.sm_ec == r.tau_max == 916 / 2048
    assert r.viable and r.n_valid and not r.floored


def test_calibrate_unviable():
    r = calibrate(GenuineSample(np.full(45, 0.45), 64), 1e-6)
    assert not r.viable
    assert r.recommended_tau is None


def test_calibrate_zero_margin_is_not_viable():
    t = tau_max(ImpostorModel(64), 1e-6).tau
    r = calibrate(GenuineSample(np.full(10, t), 64), 1e-6)
    assert r.sm_ec == 0 and not r.viable


def test_calibrate_n16_flags():
    r = calibrate(GenuineSample(np.zeros(10), 16), 1e-6)
    assert r.floored and not r.n_valid


def test_calibrate_model_mismatch():
    with pytest.raises(ValueError):
        calibrate(GenuineSample(np.zeros(3), 64), model=ImpostorModel(128))


# -- analytic sweeps ----------------------------------------------------------------------


def test_delta_sm_plateau_and_value():
    rows = delta_sm_sweep(1e-6, 1e-9, range(1, 2049))
    assert all(r["delta_sm"] == 0 for r in rows if r["n"] <= 16)
    assert rows[2047]["delta_sm"] == pytest.approx(0.01416, abs=1e-5)


def test_delta_sm_envelope_decays_like_inverse_sqrt():
    rows = delta_sm_sweep(1e-6, 1e-9, range(64, 2049))
    d = {r["n"]: r["delta_sm"] for r in rows}
    env = [max(d[n] for n in range(lo, 2 * lo)) for lo in (64, 128, 256, 512)]
    env.append(max(d[n] for n in range(1024, 2049)))
    for a, b in zip(env, env[1:]):
        assert b / a == pytest.approx(1 / math.sqrt(2), rel=0.30)


def test_delta_sm_moves_in_grid_steps():
    rows = delta_sm_sweep(1e-6, 1e-9, range(64, 300))
    for r in rows:
        n = r["n"]
        assert round(r["delta_sm"] * n) == pytest.approx(r["delta_sm"] * n, abs=1e-9)


def test_correlation_sweep():
    rows = correlation_sweep([0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3], [64, 256, 2048])
    for n in (64, 256, 2048):
        series = [r["delta_sm"] for r in rows if r["n"] == n]
        assert series[0] == 0
        assert all(b >= a for a, b in zip(series, series[1:]))
    assert [r["mismatch_p"] for r in rows if r["rho_chip"] == 0.2][0] == pytest.approx(0.4)
    with pytest.raises(ValueError):
        correlation_sweep([1.0], [64])


def test_bias_sweep_both_readings():
    q = cal.bias_sweep([0.5, 0.4], [256])
    p = cal.bias_sweep([0.5, 0.4], [256], as_mismatch=True)
    assert q[0]["delta_sm"] == 0 and p[0]["delta_sm"] == 0
    assert q[1]["mismatch_p"] == pytest.approx(0.48)
    assert p[1]["mismatch_p"] == 0.4
    assert 0 < q[1]["delta_sm"] < p[1]["delta_sm"]


# -- target zones --------------------------------------------------------------------------


def _result(margin, n=2048):
    return cal.CalibrationResult(n, 5, "none", 1e-6, 0.01, 0.0, max(margin, 0), margin,
                                 False, margin > 0, n >= 64)


def test_zone_examples():
    assert classify_zone(_result(0.30), 0.05, 0.10) == cal.OVER_PROVISIONED
    assert classify_zone(_result(0.07), 0.05, 0.10) == cal.ACCEPTED
    assert classify_zone(_result(-0.02), 0.05, 0.10) == cal.UNVIABLE
    assert classify_zone(_result(0.02), 0.05, 0.10) == cal.UNSAFE
    assert classify_zone(_result(0.07, n=32), 0.05, 0.10) == cal.BELOW_N_MIN


def test_zone_filter_validation_and_output():
    decisions = target_zone_filter([_result(0.07), _result(0.5)])
    assert [d.accepted for d in decisions] == [True, False]
    with pytest.raises(ValueError):
        target_zone_filter([], 0.1, 0.05)

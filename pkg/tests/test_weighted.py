"""Weighted norms, fall-off classification, AE-class membership, Hoelder check."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aemass.metrics import RadialProfile, make_flat, make_radial_perturbation
from aemass.weighted import (
    WeightedNormSpec,
    check_ae_class,
    classify_falloff,
    holder_product_check,
    metric_error_field,
    radial_field,
    weighted_norm,
)

from conftest import one_plus_power


def test_zero_field_norm(scheme):
    f = radial_field(RadialProfile.constant(0.0), 3)
    res = weighted_norm(f, WeightedNormSpec(0, 2.0, 0.5, 1.0, 64.0), 3, scheme)
    assert res.value == 0.0
    assert res.tail == 0.0


def test_weighted_norm_closed_form(scheme):
    # T = r^-2, n=3, k=0, p=2, tau=1/2 over [1, inf):
    # integrand r^(2*0.5-3) T^2 dmu = omega_2 r^-4 dr, total 4pi/3, norm sqrt.
    f = radial_field(RadialProfile.power(1.0, 2.0), 3)
    spec = WeightedNormSpec(0, 2.0, 0.5, 1.0, 4096.0)
    res = weighted_norm(f, spec, 3, scheme)
    assert res.value_with_tail == pytest.approx(math.sqrt(4 * math.pi / 3), abs=1e-8)


def test_weighted_norm_detects_log_divergence(scheme):
    # Same field with tau = 2: integrand ~ r^-1 per dyad, logarithmically
    # divergent; dyadic contributions are constant, so the tail flags.
    f = radial_field(RadialProfile.power(1.0, 2.0), 3)
    spec = WeightedNormSpec(0, 2.0, 2.0, 1.0, 1024.0)
    res = weighted_norm(f, spec, 3, scheme)
    assert any("divergent-tail" in fl for fl in res.flags)
    assert math.isinf(res.value_with_tail)


def test_weighted_norm_monotone_in_rout(scheme):
    f = radial_field(RadialProfile.power(0.7, 1.5), 3)
    vals = [
        weighted_norm(f, WeightedNormSpec(1, 2.0, 0.4, 2.0, rout), 3, scheme).value
        for rout in (16.0, 32.0, 64.0, 128.0)
    ]
    assert all(b >= a - 1e-14 for a, b in zip(vals, vals[1:]))


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(min_value=-8.0, max_value=8.0, allow_nan=False).filter(lambda v: abs(v) > 1e-3))
def test_weighted_norm_scales_linearly(lam):
    f1 = radial_field(RadialProfile.power(1.0, 2.0), 3)
    flam = radial_field(RadialProfile.power(lam, 2.0), 3)
    spec = WeightedNormSpec(0, 2.0, 0.5, 1.0, 32.0)
    a = weighted_norm(f1, spec, 3)
    b = weighted_norm(flam, spec, 3)
    assert b.value == pytest.approx(abs(lam) * a.value, rel=1e-12)


def test_sup_norm_path(scheme):
    f = radial_field(RadialProfile.power(1.0, 2.0), 3)
    spec = WeightedNormSpec(0, math.inf, 2.0, 1.0, 256.0)
    res = weighted_norm(f, spec, 3, scheme, sup_samples_per_annulus=512)
    # r^2 * r^-2 = 1 everywhere.
    assert res.value == pytest.approx(1.0, rel=1e-6)


def test_classify_falloff_schwarzschild(schwarzschild3):
    # |e| ~ (2m/r)(1 + 3/(4r) + ...): the subleading term biases the slope at
    # small radii, so the fit samples the asymptotic window.
    rep = classify_falloff(metric_error_field(schwarzschild3), 3,
                           radii=32.0 * 2.0 ** np.arange(8))
    assert rep.fitted_sigma == pytest.approx(1.0, abs=0.02)


def test_classify_falloff_flat_sentinel():
    rep = classify_falloff(metric_error_field(make_flat(3)), 3,
                           spec=WeightedNormSpec(0, 2.0, 50.0, 2.0, 64.0))
    assert math.isinf(rep.fitted_sigma)
    assert rep.verdict == "member"


def test_classify_falloff_oscillatory_half_power():
    # a = r^-1/2 (1 + 0.3 sin(log r)): fitted sigma ~ 0.5; member below the
    # margin, non-member above.
    prof = RadialProfile.from_expression("r**-0.5 * (1 + 0.3*sin(log(r)))",
                                         decay_rate=0.5, kind="oscillatory")
    f = radial_field(prof, 3)
    # Ten dyadic radii cover a full period of sin(log r) (2 pi ~ 9 doublings),
    # so the oscillation averages out of the slope fit.
    rep = classify_falloff(f, 3, radii=4.0 * 2.0 ** np.arange(10))
    assert rep.fitted_sigma == pytest.approx(0.5, abs=0.1)
    member = classify_falloff(f, 3, spec=WeightedNormSpec(0, 2.0, 0.3, 2.0, 128.0))
    assert member.verdict == "member"
    non = classify_falloff(f, 3, spec=WeightedNormSpec(0, 2.0, 0.8, 2.0, 128.0))
    assert non.verdict == "non-member"


def test_falloff_requires_four_radii():
    with pytest.raises(ValueError):
        classify_falloff(radial_field(RadialProfile.power(1.0, 1.0), 3), 3,
                         radii=np.array([4.0, 8.0, 16.0]))


def test_lemma_style_weight_window():
    # Fields |a| <= C r^-sigma are in L^p_{-w} for w < sigma and out for
    # w > sigma: Cauchy trend below, divergence flag above (margin 0.05).
    for sigma in (0.8, 1.5):
        f = radial_field(RadialProfile.power(1.0, sigma), 3)
        below = classify_falloff(f, 3, spec=WeightedNormSpec(0, 2.0, sigma - 0.2, 2.0, 128.0))
        above = classify_falloff(f, 3, spec=WeightedNormSpec(0, 2.0, sigma + 0.2, 2.0, 128.0))
        assert below.verdict == "member"
        assert above.verdict == "non-member"


def test_check_ae_class_flat():
    rep = check_ae_class(make_flat(3), 1, 2.0, 5.0)
    assert rep.member
    assert rep.comparability_estimate == pytest.approx(1.0, abs=1e-12)


def test_check_ae_class_schwarzschild(schwarzschild3):
    # The paper-level class for n=3: W^{1,2} with weight (n-2)/2 = 1/2.
    rep = check_ae_class(schwarzschild3, 1, 2.0, 0.5)
    assert rep.member
    assert rep.error_verdict == "member"


def test_check_ae_class_nondecaying():
    g = make_radial_perturbation(3, RadialProfile.constant(0.5))
    rep = check_ae_class(g, 0, 2.0, 0.5)
    assert not rep.member
    assert rep.error_verdict == "non-member"


def test_holder_zero_factor(scheme):
    out = holder_product_check(
        RadialProfile.power(1.0, 1.0), RadialProfile.constant(0.0),
        k=0, p1=4.0, p2=4.0, q=2.0, tau1=0.5, tau2=0.5,
        n=3, r_in=1.0, r_out=64.0, scheme=scheme,
    )
    assert out["lhs"] == 0.0
    assert out["ratio"] == 0.0


def test_holder_sharp_case(scheme):
    # u1 = u2 = r^-1, p1 = p2 = 4, q = 2, tau = 1/2 each: equality case.
    u = RadialProfile.power(1.0, 1.0)
    out = holder_product_check(u, u, k=0, p1=4.0, p2=4.0, q=2.0,
                               tau1=0.5, tau2=0.5, n=3, r_in=1.0, r_out=256.0,
                               scheme=scheme)
    assert out["ratio"] <= 1.0 + 1e-6
    assert out["ratio"] == pytest.approx(1.0, abs=1e-6)


def test_holder_rejects_inadmissible_exponents():
    u = RadialProfile.power(1.0, 1.0)
    with pytest.raises(ValueError):
        holder_product_check(u, u, k=0, p1=4.0, p2=4.0, q=3.0,
                             tau1=0.5, tau2=0.5, n=3, r_in=1.0, r_out=16.0)


def test_holder_random_corpus_bounded(scheme):
    # Random bounded radial profiles: the ratio stays finite and stable under
    # doubling of R_out.
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(20):
        c1, c2 = rng.uniform(0.2, 2.0, size=2)
        s1, s2 = rng.uniform(0.6, 2.0, size=2)
        u1, u2 = RadialProfile.power(c1, s1), RadialProfile.power(c2, s2)
        r64 = holder_product_check(u1, u2, k=1, p1=4.0, p2=4.0, q=2.0,
                                   tau1=s1 - 0.1, tau2=s2 - 0.1,
                                   n=3, r_in=2.0, r_out=64.0, scheme=scheme)
        r128 = holder_product_check(u1, u2, k=1, p1=4.0, p2=4.0, q=2.0,
                                    tau1=s1 - 0.1, tau2=s2 - 0.1,
                                    n=3, r_in=2.0, r_out=128.0, scheme=scheme)
        assert math.isfinite(r64["ratio"])
        assert abs(r128["ratio"] - r64["ratio"]) < 0.2 + 0.2 * r64["ratio"]
        worst = max(worst, r64["ratio"], r128["ratio"])
    assert worst < 10.0

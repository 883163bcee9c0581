import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marisac.channel import compose, sample_realization, upa_layout
from marisac.config import ScenarioConfig
from marisac.metrics import gain_from_channel, steering_vector
from marisac.position import (
    CosineSum,
    SensingExpansion,
    SinrExpansion,
    candidate_grid,
    delta_bar,
    delta_bar_closed_form,
    delta_tilde,
    delta_tilde_closed_form,
    I_tilde,
    min_distance_constraints,
    optimize_antenna,
    optimize_positions,
    screen_positions,
    sca_step,
    sensing_expansion,
    sensing_surrogate_constraint,
    sinr_expansion,
    sinr_surrogate_constraint,
)

from conftest import feasible_seeds, phased_state
from sampling import random_cases, random_covariance

LAM = 0.01
CASES = random_cases(200, seed=1)


def _moved(layout, m, t):
    out = np.array(layout, dtype=float)
    out[:, m] = t
    return out


def test_cosine_sum_derivatives_simple():
    f = CosineSum(np.array([2.0]), np.array([[3.0, 0.0]]), np.array([0.5]), const=1.0)
    t = np.array([0.2, 7.0])
    assert f.value(t) == pytest.approx(1 + 2 * np.cos(0.6 + 0.5))
    np.testing.assert_allclose(f.grad(t), [-6 * np.sin(1.1), 0.0])
    np.testing.assert_allclose(f.hess(t), [[-18 * np.cos(1.1), 0], [0, 0]])
    assert f.envelope() == pytest.approx(18.0)


@pytest.mark.parametrize("i", range(0, 200, 20))
def test_expansions_match_direct_evaluation(i):
    kind, e, t, (real, lay, refl, cov, m) = CASES[i]
    trial = _moved(lay, m, t)
    ch = compose(real, trial)
    if kind == "sinr":
        h = ch.user_rows(refl)[e.k]
        Rt = (1 + 1 / ScenarioConfig().gamma) * cov.Rk[e.k] - cov.R
        ref = np.real(h @ Rt @ h.conj())
        assert I_tilde(e, t) + e.b_tilde == pytest.approx(ref, rel=1e-9, abs=1e-12 * np.abs(Rt).max() * np.linalg.norm(h) ** 2)
        assert I_tilde(e, t) == pytest.approx(e.direct_value(t), rel=1e-9, abs=1e-9 * abs(e.r_mm) * np.abs(e.x).max() ** 2)
    else:
        assert e.cosines().value(t) == pytest.approx(e.direct_value(t), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("i", range(3, 200, 25))
def test_sensing_anchor_identity(i):
    _, _, _, (real, lay, refl, cov, m) = CASES[i]
    cfg = ScenarioConfig()
    for th in cfg.sensing_angles:
        e = sensing_expansion(real, lay, refl, cov.R, th, m, cfg.d_ris)
        a = steering_vector(th, real.N, cfg.d_ris, LAM)
        g = gain_from_channel(compose(real, lay).H, refl, cov.R, a)
        assert e.cosines().value(lay[:, m]) + e.offset == pytest.approx(g, rel=1e-9)


@pytest.mark.parametrize("i", range(0, 200, 10))
def test_finite_differences(i):
    _, e, t, _ = CASES[i]
    f = e.cosines()
    h = 1e-6 * LAM
    g, H = f.grad(t), f.hess(t)
    fd_g = np.array([(f.value(t + h * d) - f.value(t - h * d)) / (2 * h) for d in np.eye(2)])
    fd_H = np.column_stack([(f.grad(t + h * d) - f.grad(t - h * d)) / (2 * h) for d in np.eye(2)])
    env = f.envelope()
    assert np.linalg.norm(fd_g - g) <= 1e-5 * max(np.linalg.norm(g), env * LAM)
    assert np.linalg.norm(fd_H - H) <= 1e-3 * max(np.linalg.norm(H), env)


@pytest.mark.parametrize("i", range(0, 200, 10))
def test_delta_dominates_hessian(i):
    kind, e, _, _ = CASES[i]
    delta = delta_tilde(e) if kind == "sinr" else delta_bar(e)
    pts = np.random.default_rng(i).uniform(-0.02, 0.02, (100, 2))
    norms = np.linalg.norm(e.cosines().hess(pts), ord=2, axis=(1, 2))
    assert np.all(norms <= delta * (1 + 1e-9))
    if kind == "sensing":
        assert delta_bar_closed_form(e) >= e.cosines().envelope()


@settings(max_examples=60, deadline=None)
@given(i=st.integers(0, 199), u=st.floats(-1, 1), v=st.floats(-1, 1))
def test_surrogate_minorizes(i, u, v):
    kind, e, t, (real, lay, refl, cov, m) = CASES[i]
    anchor = lay[:, m]
    f = e.cosines()
    s = sinr_surrogate_constraint(e, anchor, 0.0) if kind == "sinr" else sensing_surrogate_constraint(e, anchor)
    assert s.value(anchor) == pytest.approx(f.value(anchor))
    pt = anchor + 0.03 * np.array([u, v])
    scale = abs(f.const) + np.abs(f.amp).sum()
    assert s.value(pt) <= f.value(pt) + 1e-10 * scale
    np.testing.assert_allclose(s.value(np.stack([pt, t])), [s.value(pt), s.value(t)])


def test_quadratic_form_matches_value():
    s = sinr_surrogate_constraint(CASES[0][1], np.array([0.001, -0.002]), 0.0) if CASES[0][0] == "sinr" else \
        sensing_surrogate_constraint(CASES[0][1], np.array([0.001, -0.002]))
    a, lin, c = s.quadratic_form()
    t = np.array([0.004, 0.003])
    assert a * t @ t + lin @ t + c == pytest.approx(s.value(t), rel=1e-10, abs=1e-14)


def _single_sinr(r_mm=3.0, a_tilde=0.0):
    dirs = np.array([[0.3, 0.4], [-0.5, 0.1]])
    return SinrExpansion(k=0, m=0, p=np.array([1.0, 1.0], dtype=complex), q=np.zeros(0, dtype=complex),
                         x=np.zeros(1), a_tilde=a_tilde, b_tilde=0.0, r_mm=r_mm, tx_dirs=dirs,
                         user_dirs=np.zeros((0, 2)), wavelength=LAM)


def test_delta_tilde_single_pair():
    e = _single_sinr()
    assert delta_tilde_closed_form(e) == pytest.approx(64 * np.pi**2 / LAM * 3.0)
    # this closed form is below the curvature envelope at lambda = 1 cm, so it gets raised
    assert delta_tilde(e) == pytest.approx(max(64 * np.pi**2 / LAM * 3.0, e.cosines().envelope()))
    lin = _single_sinr(r_mm=0.0, a_tilde=0.5)
    assert delta_tilde_closed_form(lin) == pytest.approx(16 * np.pi**2 / LAM * 0.5 * 2)


def test_delta_bar_single_term():
    e = SensingExpansion(m=0, d=np.zeros(1), g_anchor=np.zeros(1), b1=np.array([1.0 + 0j]), b2=np.zeros(1),
                         B=np.zeros((1, 1)), r_mm=0.0, tx_dirs=np.array([[1.0, 0.0]]), wavelength=LAM)
    assert delta_bar_closed_form(e) == pytest.approx(8 * np.pi**2 / LAM**2)
    assert e.cosines().envelope() == pytest.approx(4 * np.pi**2 / LAM**2)


def test_single_antenna_cases():
    cfg = ScenarioConfig(M=1, K=1)
    real = sample_realization(cfg, 0)
    lay = upa_layout(1, cfg.D)
    cov = random_covariance(np.random.default_rng(0), 1, 1)
    e = sinr_expansion(real, lay, np.ones(cfg.N), cov, 0, 0, cfg.gamma)
    assert e.a_tilde == 0 and e.b_tilde == 0
    assert min_distance_constraints(lay, 0, lay[:, 0], cfg.D) == []
    s = sensing_expansion(real, lay, np.ones(cfg.N), cov.R, 0.0, 0, cfg.d_ris)
    np.testing.assert_array_equal(s.b2, 0)
    with pytest.raises(IndexError):
        sinr_expansion(real, lay, np.ones(cfg.N), cov, 1, 0, cfg.gamma)


def test_distance_halfplanes_are_conservative(rng):
    lay = upa_layout(4, 0.005)
    planes = min_distance_constraints(lay, 0, lay[:, 0], 0.005)
    assert len(planes) == 3
    pts = rng.uniform(-0.03, 0.03, (2000, 2))
    for qi, hp in zip([1, 2, 3], planes):
        inside = pts @ hp.normal >= hp.rhs
        assert np.all(np.linalg.norm(pts[inside] - lay[:, qi], axis=1) >= 0.005 * (1 - 1e-12))
    with pytest.raises(ValueError):
        min_distance_constraints(np.zeros((2, 2)), 0, np.zeros(2), 0.005)


@pytest.mark.parametrize("seed", feasible_seeds(ScenarioConfig(), 2))
def test_sca_step_and_antenna_update(desk, seed):
    real, lay, refl, cov = phased_state(desk, seed)
    a = steering_vector(desk.sensing_angles, real.N, desk.d_ris, LAM)
    base = gain_from_channel(compose(real, lay).H, refl, cov.R, a).min()
    out = sca_step(real, lay, refl, cov, 0, desk)
    assert out is not None
    t, chi = out
    lo, hi = desk.region_bounds()
    assert np.all(t >= lo - 1e-12) and np.all(t <= hi + 1e-12)
    # the anchor is feasible for the QCP, so its surrogate optimum is at least the anchor gain
    assert chi >= base * (1 - 1e-6)
    step = optimize_antenna(real, lay, 0, refl, cov, desk)
    assert step.gain >= base
    new_layout, steps = optimize_positions(real, lay, refl, cov, desk)
    g = gain_from_channel(compose(real, new_layout).H, refl, cov.R, a).min()
    assert g >= step.gain * (1 - 1e-12) and len(steps) == desk.M


def test_stationary_anchor_stays(desk):
    # with every other point worse than the anchor, local SCA keeps the antenna put
    seed = feasible_seeds(desk, 1)[0]
    real, lay, refl, cov = phased_state(desk, seed)
    cfg = dataclasses.replace(desk, position_grid=0)
    step = optimize_antenna(real, lay, 0, refl, cov, cfg)
    again = optimize_antenna(real, step.layout, 0, refl, cov, cfg)
    np.testing.assert_allclose(again.gain, step.gain, rtol=max(cfg.eps_sca, 1e-3))


def test_screen_matches_direct_evaluation(desk):
    seed = feasible_seeds(desk, 1)[0]
    real, lay, refl, cov = phased_state(desk, seed)
    pts = candidate_grid(desk, 5)
    scores = screen_positions(real, lay, 1, refl, cov, desk, pts)
    a = steering_vector(desk.sensing_angles, real.N, desk.d_ris, LAM)
    for p, s in zip(pts, scores):
        if np.isfinite(s):
            ref = gain_from_channel(compose(real, _moved(lay, 1, p)).H, refl, cov.R, a).min()
            assert s == pytest.approx(ref, rel=1e-9)

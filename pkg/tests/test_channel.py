import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marisac.channel import (
    bs_ris_channel,
    bs_user_channel,
    compose,
    equivalent_user_channel,
    field_response_matrix,
    field_response_vector,
    layout_is_feasible,
    layout_violations,
    rician_prm,
    ris_element_coordinates,
    ris_field_response_matrix,
    sample_realization,
    upa_layout,
)
from marisac.config import ScenarioConfig

LAM = 0.01
angle = st.floats(0.0, math.pi)
coord = st.floats(-0.05, 0.05)


def scalar_frv(t, thetas, phis, lam):
    out = []
    for th, ph in zip(thetas, phis):
        rho = t[0] * math.sin(th) * math.cos(ph) + t[1] * math.cos(th)
        out.append(complex(math.cos(2 * math.pi * rho / lam), math.sin(2 * math.pi * rho / lam)))
    return np.array(out)


def test_frv_origin_is_all_ones(rng):
    th, ph = rng.uniform(0, np.pi, 5), rng.uniform(0, np.pi, 5)
    np.testing.assert_allclose(field_response_vector([0, 0], th, ph, LAM), np.ones(5))


def test_frv_half_wavelength_shift():
    g = field_response_vector([LAM / 2, 0.0], [np.pi / 2], [0.0], LAM)
    np.testing.assert_allclose(g, [-1.0], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(x=coord, y=coord, th=st.lists(angle, min_size=4, max_size=4), ph=st.lists(angle, min_size=4, max_size=4))
def test_frv_matches_scalar_oracle(x, y, th, ph):
    g = field_response_vector([x, y], th, ph, LAM)
    np.testing.assert_allclose(np.abs(g), 1.0, atol=1e-14)
    np.testing.assert_allclose(g, scalar_frv((x, y), th, ph, LAM), atol=1e-9)


def test_frv_rejects_bad_position():
    with pytest.raises(ValueError):
        field_response_vector([0.0, 0.0, 0.0], [1.0], [1.0], LAM)


def test_frm_single_antenna_equals_frv(rng):
    th, ph = rng.uniform(0, np.pi, 3), rng.uniform(0, np.pi, 3)
    t = np.array([0.003, -0.004])
    np.testing.assert_allclose(field_response_matrix(t[:, None], th, ph, LAM)[:, 0], field_response_vector(t, th, ph, LAM))


def test_frm_coincident_antennas_identical_columns(rng):
    th, ph = rng.uniform(0, np.pi, 3), rng.uniform(0, np.pi, 3)
    G = field_response_matrix(np.tile([[0.01], [0.02]], (1, 4)), th, ph, LAM)
    np.testing.assert_allclose(G, np.repeat(G[:, :1], 4, axis=1))


def test_frm_columnwise_oracle(rng):
    th, ph = rng.uniform(0, np.pi, 2), rng.uniform(0, np.pi, 2)
    pos = rng.uniform(-0.02, 0.02, (2, 3))
    G = field_response_matrix(pos, th, ph, LAM)
    for m in range(3):
        np.testing.assert_allclose(G[:, m], scalar_frv(pos[:, m], th, ph, LAM), atol=1e-9)


def test_frm_rejects_bad_layout_shape():
    with pytest.raises(ValueError):
        field_response_matrix(np.zeros((3, 2)), [1.0], [1.0], LAM)
    with pytest.raises(ValueError):
        field_response_matrix(np.zeros((2, 2)), [1.0, 2.0], [1.0], LAM)


def test_ris_frm_cases(rng):
    th, ph = rng.uniform(0, np.pi, 3), rng.uniform(0, np.pi, 3)
    coords = ris_element_coordinates(4, LAM / 2)
    F = ris_field_response_matrix(coords, th, ph, LAM)
    np.testing.assert_allclose(F[:, 0], 1.0)
    for n in range(4):
        np.testing.assert_allclose(F[:, n], scalar_frv(coords[:, n], th, ph, LAM), atol=1e-9)
    F1 = ris_field_response_matrix(ris_element_coordinates(1, LAM / 2), th, ph, LAM)
    assert F1.shape == (3, 1)


@pytest.fixture
def real():
    return sample_realization(ScenarioConfig(M=3, N=5, K=2, L_t=3, L_r=2), 7)


def test_bs_ris_zero_sigma(real):
    r = dataclasses.replace(real, sigma=np.zeros_like(real.sigma))
    assert np.all(bs_ris_channel(r, upa_layout(3, LAM / 2)) == 0)


def test_bs_ris_single_path_rank_one():
    cfg = ScenarioConfig(M=4, N=6, L_t=1, L_r=1)
    r = sample_realization(cfg, 1)
    r = dataclasses.replace(r, sigma=np.ones((1, 1), dtype=complex))
    H = bs_ris_channel(r, upa_layout(4, LAM / 2))
    s = np.linalg.svd(H, compute_uv=False)
    assert s[1] <= 1e-12 * s[0]


@pytest.mark.parametrize("seed", range(5))
def test_bs_ris_triple_loop_oracle(seed):
    g = np.random.default_rng(seed)
    M, N, Lt, Lr = g.integers(1, 7, size=4)
    cfg = ScenarioConfig(M=int(M), N=int(N), L_t=int(Lt), L_r=int(Lr), region_side=0.1)
    r = sample_realization(cfg, seed)
    r = dataclasses.replace(r, sigma=g.standard_normal((Lr, Lt)) + 1j * g.standard_normal((Lr, Lt)))
    pos = g.uniform(-0.02, 0.02, (2, M))
    a = r.angles
    H = bs_ris_channel(r, pos)
    for n in range(N):
        f = scalar_frv(r.ris_coords[:, n], a.rx_theta, a.rx_phi, LAM)
        for m in range(M):
            gm = scalar_frv(pos[:, m], a.tx_theta, a.tx_phi, LAM)
            ref = sum(np.conj(f[i]) * r.sigma[i, j] * gm[j] for i in range(Lr) for j in range(Lt))
            assert abs(H[n, m] - ref) <= 1e-9 * max(1.0, abs(ref))


def test_bs_ris_rejects_mismatch(real):
    r = dataclasses.replace(real, sigma=np.ones((5, 5)))
    with pytest.raises(ValueError):
        bs_ris_channel(r, upa_layout(3, LAM / 2))


def test_bs_user_cases(real):
    lay = upa_layout(3, LAM / 2)
    zero = dataclasses.replace(real, sigma_users=tuple(np.zeros_like(s) for s in real.sigma_users))
    assert np.all(bs_user_channel(zero, lay, 0) == 0)
    # path-sum oracle
    a = real.angles
    h = bs_user_channel(real, lay, 1)
    for m in range(3):
        g = scalar_frv(lay[:, m], a.user_theta[1], a.user_phi[1], LAM)
        ref = real.sigma_users[1].sum(axis=0) @ g
        assert abs(h[m] - ref) <= 1e-12 * max(1.0, abs(ref))
    with pytest.raises(IndexError):
        bs_user_channel(real, lay, 2)


def test_bs_user_single_path_at_origin():
    cfg = ScenarioConfig(M=1, K=1, L_t=1, L_r=1)
    r = sample_realization(cfg, 3)
    h = bs_user_channel(r, np.zeros((2, 1)), 0)
    assert h[0] == pytest.approx(r.sigma_users[0][0, 0])


def test_equivalent_channel_cases(real, rng):
    lay = upa_layout(3, LAM / 2)
    phi = np.exp(1j * rng.uniform(0, 2 * np.pi, real.N))
    direct = bs_user_channel(real, lay, 0)
    no_ris = dataclasses.replace(real, h2=np.zeros_like(real.h2))
    np.testing.assert_allclose(equivalent_user_channel(no_ris, lay, phi, 0), direct)
    no_H = dataclasses.replace(real, sigma=np.zeros_like(real.sigma))
    np.testing.assert_allclose(equivalent_user_channel(no_H, lay, phi, 0), direct)
    H = bs_ris_channel(real, lay)
    ref = real.h2[0].conj()[None, :] @ np.diag(phi) @ H + direct[None, :]
    np.testing.assert_allclose(equivalent_user_channel(real, lay, np.diag(phi), 0), ref[0], atol=1e-20)
    np.testing.assert_allclose(compose(real, lay).user_rows(phi)[0], ref[0], atol=1e-20)


def test_sample_realization_deterministic():
    cfg = ScenarioConfig()
    a, b = sample_realization(cfg, 11), sample_realization(cfg, 11)
    np.testing.assert_array_equal(a.sigma, b.sigma)
    np.testing.assert_array_equal(a.h2, b.h2)
    np.testing.assert_array_equal(a.angles.tx_theta, b.angles.tx_theta)
    c = sample_realization(cfg, 12)
    assert not np.array_equal(a.sigma, c.sigma)


def test_sample_realization_angle_domains():
    r = sample_realization(ScenarioConfig(K=3), 5)
    a = r.angles
    for arr in [a.tx_theta, a.tx_phi, a.rx_theta, a.rx_phi, *a.user_theta, *a.ris_user_phi]:
        assert np.all((arr >= 0) & (arr <= np.pi))
    assert r.h2.shape == (3, 8) and len(r.sigma_users) == 3


def test_rician_large_kappa_limit(rng):
    S = rician_prm(rng, 4, 1.0, 1e12)
    assert np.all(np.abs(np.diag(S)[1:]) < 1e-5)


def test_rician_moment_monte_carlo():
    g = np.random.default_rng(0)
    kappa, k0 = 10.0, 1e-4
    samples = np.array([rician_prm(g, 3, k0, kappa)[0, 0] for _ in range(10_000)])
    assert np.mean(np.abs(samples) ** 2) == pytest.approx(k0 * kappa / (kappa + 1), rel=0.05)
    rest = np.array([rician_prm(g, 3, k0, kappa)[1, 1] for _ in range(10_000)])
    assert np.mean(np.abs(rest) ** 2) == pytest.approx(k0 / ((kappa + 1) * 2), rel=0.05)


@pytest.mark.parametrize("seed", range(3))
def test_norm_translation_invariant_single_path(seed):
    r = sample_realization(ScenarioConfig(M=4, L_t=1), seed)
    lay = upa_layout(4, LAM / 2)
    h0 = np.linalg.norm(bs_ris_channel(r, lay))
    h1 = np.linalg.norm(bs_ris_channel(r, lay + np.array([[0.007], [-0.003]])))
    assert h1 == pytest.approx(h0, rel=1e-12)


def test_upa_layout_and_feasibility(desk):
    lay = upa_layout(4, desk.D)
    np.testing.assert_allclose(lay.mean(axis=1), 0.0, atol=1e-15)
    assert layout_is_feasible(lay, desk)
    d = np.linalg.norm(lay[:, :, None] - lay[:, None, :], axis=0)
    assert d[~np.eye(4, dtype=bool)].min() == pytest.approx(desk.D)
    np.testing.assert_allclose(upa_layout(1, desk.D), [[0.0], [0.0]])
    bad = lay.copy()
    bad[:, 1] = bad[:, 0] + [desk.D / 4, 0]
    assert layout_violations(bad, desk)["spacing"] > 0
    bad = lay.copy()
    bad[0, 0] = desk.side
    assert layout_violations(bad, desk)["region"] > 0

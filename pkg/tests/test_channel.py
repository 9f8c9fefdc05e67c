import numpy as np
import pytest

from beamprecode.channel import (ChannelPowerMatrix, PathPosterior, PathSet,
                                 aggregate_beta, assemble_H, beta_from_speed,
                                 evolve_gauss_markov, jakes_alpha, path_channel,
                                 paths_to_omega, posterior_model,
                                 sample_beam_channel, sample_posterior,
                                 synth_paths)
from beamprecode.steering import (ArrayGeometry, build_grids,
                                  build_steering_matrices, ula_steering,
                                  upa_steering)

GEOM = ArrayGeometry(m_z=2, m_x=2, m_k=2)
GRID = build_grids(GEOM, (2, 2, 2))
MATS = build_steering_matrices(GEOM, GRID)


def test_synth_paths_deterministic():
    a = synth_paths(123, 5)
    b = synth_paths(123, 5)
    assert np.array_equal(a.gain, b.gain)
    assert np.array_equal(a.u_r, b.u_r)


def test_single_path_channel_is_rank_one():
    paths = synth_paths(1, 1)
    h = path_channel(paths, GEOM)
    s = np.linalg.svd(h, compute_uv=False)
    assert s[0] > 0 and np.all(s[1:] < 1e-12 * s[0])


def test_path_channel_matches_naive_loop():
    paths = synth_paths(2, 20)
    h = path_channel(paths, GEOM)
    ref = np.zeros_like(h)
    for i in range(paths.n_paths):
        ar = ula_steering(paths.u_r[i], GEOM.m_k, GEOM.delta_r)
        at = upa_steering(paths.u_t[i], paths.v_t[i], GEOM)
        for a in range(GEOM.m_k):
            for b in range(GEOM.m_t):
                ref[a, b] += paths.gain[i] * ar[a] * np.conj(at[b])
    assert np.max(np.abs(h - ref)) < 1e-12


def test_on_grid_path_lands_in_single_cell():
    i0, j0, l0 = 1, 2, 3
    paths = PathSet(u_r=[GRID.u_r[i0]], u_t=[GRID.u_t[j0]], v_t=[GRID.v_t[l0]],
                    power=[0.7], gain=[0.1 + 0.2j])
    power = paths_to_omega(paths, GRID, GEOM)
    expected = np.zeros((GRID.n_k, GRID.n_t))
    expected[i0, j0 * GRID.n_x + l0] = 0.7
    assert np.array_equal(power.omega, expected)


def test_same_cell_powers_add():
    u, ut, vt = GRID.u_r[0], GRID.u_t[1], GRID.v_t[1]
    paths = PathSet(u_r=[u, u + 1e-3], u_t=[ut, ut], v_t=[vt, vt],
                    power=[0.3, 0.4], gain=[0.0, 0.0])
    power = paths_to_omega(paths, GRID, GEOM)
    assert abs(power.omega.max() - 0.7) < 1e-15
    assert abs(power.omega.sum() - 0.7) < 1e-15


def test_binning_preserves_total_power():
    paths = synth_paths(9, 30, spread=0.4)
    power = paths_to_omega(paths, GRID, GEOM)
    assert abs(power.omega.sum() - paths.power.sum()) < 1e-12


def test_sample_beam_channel_zero_power():
    power = ChannelPowerMatrix.from_omega(np.zeros((GRID.n_k, GRID.n_t)))
    g = sample_beam_channel(power, np.random.default_rng(0))
    assert np.all(g.g_tilde == 0)


def test_sample_beam_channel_variance_and_support():
    omega = np.zeros((GRID.n_k, GRID.n_t))
    omega[1, 2] = 4.0
    power = ChannelPowerMatrix.from_omega(omega)
    rng = np.random.default_rng(3)
    draws = np.stack([sample_beam_channel(power, rng).g_tilde for _ in range(10000)])
    var = np.mean(np.abs(draws[:, 1, 2]) ** 2)
    assert abs(var - 4.0) < 0.4
    off = np.delete(np.abs(draws).reshape(len(draws), -1),
                    1 * GRID.n_t + 2, axis=1)
    assert np.all(off == 0)


def test_assemble_H_zero_and_selector():
    zero = np.zeros((GRID.n_k, GRID.n_t), dtype=complex)
    assert np.all(assemble_H(zero, MATS) == 0)
    g = zero.copy()
    g[2, 5] = 1.5 - 0.5j
    h = assemble_H(g, MATS)
    outer = (1.5 - 0.5j) * np.outer(MATS.u_mat[:, 2], MATS.v_mat[:, 5].conj())
    assert np.max(np.abs(h - outer)) < 1e-14


def test_assemble_H_matches_triple_loop():
    rng = np.random.default_rng(4)
    g = rng.standard_normal((GRID.n_k, GRID.n_t)) + 1j * rng.standard_normal((GRID.n_k, GRID.n_t))
    h = assemble_H(g, MATS)
    ref = np.zeros((GEOM.m_k, GEOM.m_t), dtype=complex)
    for i in range(GRID.n_k):
        for q in range(GRID.n_t):
            ref += g[i, q] * np.outer(MATS.u_mat[:, i], MATS.v_mat[:, q].conj())
    assert np.max(np.abs(h - ref)) < 1e-12


def test_assemble_H_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        assemble_H(np.zeros((2, 2)), MATS)


def test_gauss_markov_quasi_static_limit():
    power = ChannelPowerMatrix.from_omega(np.full((GRID.n_k, GRID.n_t), 0.5))
    rng = np.random.default_rng(5)
    g0 = sample_beam_channel(power, rng)
    g1 = evolve_gauss_markov(g0, power, 1.0, rng)
    assert np.array_equal(g1.g_tilde, g0.g_tilde)
    assert g1.block == g0.block + 1


def test_gauss_markov_full_decorrelation():
    power = ChannelPowerMatrix.from_omega(np.ones((4, 8)))
    rng = np.random.default_rng(6)
    prev, new = [], []
    for _ in range(400):
        g0 = sample_beam_channel(power, rng)
        g1 = evolve_gauss_markov(g0, power, 0.0, rng)
        prev.append(g0.g_tilde.ravel())
        new.append(g1.g_tilde.ravel())
    prev = np.concatenate(prev)
    new = np.concatenate(new)
    rho = np.abs(np.vdot(prev, new)) / (np.linalg.norm(prev) * np.linalg.norm(new))
    assert rho < 0.05


def test_gauss_markov_preserves_variance():
    omega = np.full((2, 4), 1.3)
    power = ChannelPowerMatrix.from_omega(omega)
    rng = np.random.default_rng(7)
    g = sample_beam_channel(power, rng)
    draws = []
    for _ in range(10000):
        g = evolve_gauss_markov(g, power, 0.7, rng)
        draws.append(g.g_tilde)
    var = np.mean(np.abs(np.stack(draws)) ** 2, axis=0)
    assert np.max(np.abs(var - omega) / omega) < 0.1


def test_gauss_markov_rejects_bad_alpha():
    power = ChannelPowerMatrix.from_omega(np.ones((2, 4)))
    with pytest.raises(ValueError):
        evolve_gauss_markov(np.zeros((2, 4)), power, 1.5, np.random.default_rng(0))


def test_aggregate_beta_constant():
    assert abs(aggregate_beta(lambda n: 0.8, 5) - 0.8) < 1e-12


def test_aggregate_beta_half_and_half():
    seq = [1.0] * 6 + [0.0] * 6  # lags 4..7 give two ones and two zeros
    assert abs(aggregate_beta(seq[:8] + [0.0] * 4, 4) - np.sqrt(0.5)) < 1e-12


def test_aggregate_beta_exponential_decay():
    rho, n_b = 0.9, 4
    beta = aggregate_beta(lambda n: rho ** n, n_b)
    direct = np.sqrt(sum(rho ** (2 * n) for n in range(n_b, 2 * n_b)) / n_b)
    assert abs(beta - direct) < 1e-12


def test_aggregate_beta_monotone_bound():
    # for a non-increasing alpha sequence, beta cannot exceed alpha(n_b)
    rng = np.random.default_rng(8)
    for _ in range(20):
        seq = np.sort(rng.uniform(0, 1, 12))[::-1]
        assert aggregate_beta(seq, 6) <= seq[6] + 1e-12


def test_aggregate_beta_errors():
    with pytest.raises(ValueError):
        aggregate_beta(lambda n: 0.5, 0)
    with pytest.raises(ValueError):
        aggregate_beta([0.5, 0.5], 4)


def test_beta_from_speed_ordering():
    slow = beta_from_speed(30.0, 4.8e9, 0.5e-3, 10)
    fast = beta_from_speed(250.0, 4.8e9, 0.5e-3, 10)
    assert 0.0 <= fast < slow <= 1.0
    assert jakes_alpha(0.0, 1e-4)(3) == 1.0


def test_posterior_perfect_csi_limit():
    power = ChannelPowerMatrix.from_omega(np.full((GRID.n_k, GRID.n_t), 0.2))
    rng = np.random.default_rng(9)
    g_prev = sample_beam_channel(power, rng)
    model = posterior_model(g_prev, 1.0, power, MATS)
    assert np.max(np.abs(model.h_bar - assemble_H(g_prev, MATS))) < 1e-14
    a = sample_posterior(model, np.random.default_rng(1))
    b = sample_posterior(model, np.random.default_rng(2))
    assert np.max(np.abs(a - b)) < 1e-14  # no random part left


def test_posterior_pure_statistical_limit():
    power = ChannelPowerMatrix.from_omega(np.full((GRID.n_k, GRID.n_t), 0.2))
    g_prev = sample_beam_channel(power, np.random.default_rng(10))
    model = posterior_model(g_prev, 0.0, power, MATS)
    assert np.all(model.h_bar == 0)


def test_posterior_sample_mean():
    power = ChannelPowerMatrix.from_omega(np.full((GRID.n_k, GRID.n_t), 0.4))
    rng = np.random.default_rng(11)
    model = posterior_model(sample_beam_channel(power, rng), 0.6, power, MATS)
    draws = sample_posterior(model, rng, size=10000)
    err = np.abs(draws.mean(axis=0) - model.h_bar).max()
    scale = np.sqrt((1 - 0.6 ** 2) * power.omega.sum() / 10000)
    assert err < 5 * scale


def test_posterior_distinct_seeds_differ():
    power = ChannelPowerMatrix.from_omega(np.ones((GRID.n_k, GRID.n_t)))
    model = posterior_model(sample_beam_channel(power, np.random.default_rng(0)),
                            0.5, power, MATS)
    a = sample_posterior(model, np.random.default_rng(1))
    b = sample_posterior(model, np.random.default_rng(2))
    assert np.max(np.abs(a - b)) > 1e-3


def test_path_posterior_moments():
    paths = synth_paths(12, 6)
    post = PathPosterior(paths, 0.8, GEOM)
    assert np.max(np.abs(post.mean - 0.8 * path_channel(paths, GEOM))) < 1e-12
    rng = np.random.default_rng(13)
    c = np.eye(GEOM.m_t)
    draws = post.sample(rng, size=40000)
    centred = draws - post.mean
    mc = np.einsum("nij,jk,nlk->il", centred, c, centred.conj()) / len(centred)
    an = post.eta(c)
    assert np.linalg.norm(mc - an) / np.linalg.norm(an) < 0.05


def test_power_matrix_validation():
    with pytest.raises(ValueError):
        ChannelPowerMatrix.from_omega(np.array([[-1.0]]))
    with pytest.raises(ValueError):
        ChannelPowerMatrix(omega=np.ones((2, 2)), m_factor=np.full((2, 2), 0.5))
    pm = ChannelPowerMatrix.from_omega(np.array([[4.0]]))
    assert pm.m_factor[0, 0] == 2.0

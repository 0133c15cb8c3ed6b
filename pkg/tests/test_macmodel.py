import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcsmac.macmodel import (
    ChainConvergenceError, EnergyParams, MacConfig, MacTiming, chain_residuals, energy_per_node_sf,
    event_probabilities, expected_energy_ri, field_energy, frame_pgf, frame_stats, node_energy_sf,
    prob_k_frames, prob_succ_given_frames, prob_sufficient, q_function, sf_success_pmf, solve_chain,
    success_given_contenders,
)

from oracles import enumerate_ri, multinomial_succ, sf_pmf

T = MacTiming()
EP = EnergyParams()


def test_timing_derived_quantities():
    assert T.t_p == 7 and T.l_s == 10 and T.l_c == 11
    assert T.w0 == 4 and T.mac_max_be == 7
    assert T.sf_len(3) == 64
    assert T.k_s_max(64) == 64 // 6


def test_timing_rejects_bad_values():
    with pytest.raises(ValueError):
        MacTiming(sf0=0)
    with pytest.raises(ValueError):
        MacTiming(nb=-1)


def test_config_validation():
    with pytest.raises(ValueError):
        MacConfig(2, (3,), 0.5)
    with pytest.raises(ValueError):
        MacConfig(1, (3,), 1.5)
    with pytest.raises(ValueError):
        MacConfig(0, (), 0.5)
    cfg = MacConfig.uniform(3, 4, 0.4)
    assert cfg.delay(T) == 3 * 128
    with pytest.raises(ValueError):
        MacConfig.uniform(11, 3, 0.5).check_bounds(T)
    with pytest.raises(ValueError):
        MacConfig.uniform(1, 9, 0.5).check_bounds(T)


@pytest.mark.parametrize("h", [1, 2, 5, 10, 20])
@pytest.mark.parametrize("bo", [2, 4, 6])
def test_chain_solution_satisfies_its_equations(h, bo):
    sol = solve_chain(h, T.sf_len(bo), T)
    assert all(0 <= x <= 1 for x in (sol.alpha, sol.beta, sol.phi, sol.p_d, sol.p_c))
    res = chain_residuals(sol, T)
    checked = res[:2] + res[3:] if sol.alpha_clamped else res
    assert max(abs(r) for r in checked) < 1e-8


def test_chain_frozen_values():
    # independent damped iteration run once and frozen
    sol = solve_chain(5, 128, T)
    assert sol.alpha == pytest.approx(0.6189194684068209, abs=1e-9)
    assert sol.beta == pytest.approx(0.3419333138800004, abs=1e-9)
    assert sol.phi == pytest.approx(0.06285899937451005, abs=1e-9)
    assert sol.p_d == pytest.approx(10 / 128)


def test_single_node_sees_idle_channel():
    sol = solve_chain(1, 128, T)
    assert sol.alpha == pytest.approx(0.0, abs=1e-12) or sol.p_c == pytest.approx(0.0, abs=1e-12)
    assert sol.p_c == pytest.approx(0.0, abs=1e-12)


def test_chain_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_chain(0, 64, T)
    assert issubclass(ChainConvergenceError, RuntimeError)


@pytest.mark.parametrize("h", [2, 5, 10])
def test_event_probabilities_sum_to_one(h):
    sol = solve_chain(h, 128, T)
    p = event_probabilities(sol, T)
    assert sum(p) == pytest.approx(1.0, abs=1e-12)
    assert all(x >= 0 for x in p)


@pytest.mark.parametrize("h", [2, 5])
def test_pgf_normalised_and_mean(h):
    sol = solve_chain(h, 256, T)
    st_ = frame_stats(sol, T)
    assert frame_pgf(1.0, sol, T) == pytest.approx(1.0, abs=1e-12)
    d = 1e-6
    mean = (frame_pgf(1 + d, sol, T) - frame_pgf(1 - d, sol, T)) / (2 * d)
    assert mean == pytest.approx(st_.t_bar, rel=1e-6)
    second = (frame_pgf(1 + d, sol, T) - 2 * frame_pgf(1.0, sol, T) + frame_pgf(1 - d, sol, T)) / d**2
    var = second + mean - mean**2
    assert var == pytest.approx(st_.sigma2, rel=1e-3)


def test_q_function():
    assert q_function(0.0) == 0.5
    assert q_function(1.96) == pytest.approx(0.0249979, abs=1e-6)


def test_prob_k_frames_bounds():
    st_ = frame_stats(solve_chain(5, 128, T), T)
    assert prob_k_frames(0, 128, st_) == 0.0
    assert prob_k_frames(st_.k_s_max + 1, 128, st_) == 0.0
    vals = [prob_k_frames(k, 128, st_) for k in range(1, st_.k_s_max + 1)]
    assert all(0 <= v <= 1 for v in vals)
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


@given(st.integers(0, 8), st.integers(0, 8),
       st.floats(0.01, 0.97), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_succ_given_frames_matches_multinomial(s, k, ps, pc_frac, pd_frac):
    pd = (1 - ps) * pd_frac
    pc = (1 - ps - pd) * pc_frac
    pf = 1 - ps - pd - pc

    class S:
        p_succ, p_coll, p_ccas, p_d = ps, pc, pf, pd

    assert prob_succ_given_frames(s, k, S) == pytest.approx(multinomial_succ(s, k, ps, pc, pd, pf),
                                                            rel=1e-9, abs=1e-14)


def test_succ_given_frames_rejects_negative():
    st_ = frame_stats(solve_chain(2, 64, T), T)
    with pytest.raises(ValueError):
        prob_succ_given_frames(-1, 3, st_)


@pytest.mark.parametrize("h,sf", [(1, 64), (3, 64), (6, 128), (4, 32)])
def test_sf_pmf_matches_frame_enumeration(h, sf):
    np.testing.assert_allclose(sf_success_pmf(h, sf, T), sf_pmf(h, sf, T), atol=1e-12)


def test_sf_pmf_short_superframe_is_all_deference():
    assert list(sf_success_pmf(4, 8, T)) == [1, 0, 0, 0, 0]
    assert list(sf_success_pmf(0, 64, T)) == [1]


@pytest.mark.parametrize("cfg,n,m,pr,en", [
    (MacConfig(2, (2, 3), 0.5), 6, 2, 0.662169721833692, 518.5207067432746),
    (MacConfig(3, (3, 3, 4), 0.4), 5, 3, 0.29235903602390206, 443.85722361159674),
    (MacConfig(1, (4,), 0.9), 4, 1, 0.9021841533245223, 1300.4729336669325),
])
def test_prob_and_energy_frozen(cfg, n, m, pr, en):
    assert prob_sufficient(cfg, n, m, T) == pytest.approx(pr, abs=1e-12)
    assert expected_energy_ri(cfg, n, m, T, EP) == pytest.approx(en, rel=1e-12)


def test_prob_sufficient_edge_cases():
    cfg = MacConfig.uniform(2, 3, 0.5)
    assert prob_sufficient(cfg, 10, 0, T) == 1.0
    assert prob_sufficient(MacConfig.uniform(2, 3, 0.0), 10, 1, T) == 0.0
    with pytest.raises(ValueError):
        prob_sufficient(cfg, 3, 4, T)
    assert expected_energy_ri(MacConfig.uniform(2, 3, 0.0), 5, 1, T, EP) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 6), st.floats(0.0, 1.0), st.lists(st.integers(0, 4), min_size=1, max_size=3))
def test_backward_pass_equals_forward(n, m, ps, bo):
    m = min(m, n)
    cfg = MacConfig(len(bo), tuple(bo), ps)
    r = success_given_contenders(cfg.bo, n, m, T)
    from scipy.stats import binom
    assert float(binom.pmf(np.arange(n + 1), n, ps) @ r) == pytest.approx(prob_sufficient(cfg, n, m, T), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 12), st.floats(0.05, 0.95), st.integers(2, 5))
def test_pr_nondecreasing_in_k_tau(n, ps, bo):
    m = max(1, n // 4)
    vals = [prob_sufficient(MacConfig.uniform(k, bo, ps), n, m, T) for k in range(1, 5)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_energy_deference_term_exact():
    for h in (2, 5, 10):
        sol = solve_chain(h, 128, T)
        assert energy_per_node_sf(sol, T, EP).e_d == pytest.approx(EP.e_idle * sol.p_d * T.l_s, abs=1e-12)


def test_energy_breakdown_frozen():
    e = energy_per_node_sf(solve_chain(5, 128, T), T, EP)
    assert e.e_b == pytest.approx(0.17661990154056567, rel=1e-9)
    assert e.e_ccas == pytest.approx(0.9035505326295509, rel=1e-9)
    assert e.e_suco == pytest.approx(1.2781533948195656, rel=1e-9)
    assert e.total == pytest.approx(e.e_b + e.e_ccas + e.e_suco + e.e_d)


def test_node_energy_short_superframe_is_idle():
    assert node_energy_sf(3, 8, T, EP) == pytest.approx(EP.e_idle * 8)


def test_field_energy_scales_with_m_t():
    cfg = MacConfig.uniform(2, 3, 0.5)
    assert field_energy(cfg, 6, 2, 10, T, EP) == pytest.approx(10 * expected_energy_ri(cfg, 6, 2, T, EP))


def test_energy_params_default_sensing_rate():
    assert EnergyParams().e_sens == EnergyParams().e_rx
    with pytest.raises(ValueError):
        EnergyParams(e_idle=-1)


def test_pr_is_probability_at_full_scale():
    cfg = MacConfig.uniform(3, 4, 0.4)
    p = prob_sufficient(cfg, 64, 16, T)
    assert 0.0 <= p <= 1.0 and math.isfinite(p)

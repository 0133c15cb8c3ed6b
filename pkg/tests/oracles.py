"""Independent reference implementations used to freeze expected values.

Each oracle recomputes a quantity by direct enumeration with scalar code,
sharing only the chain solution and per-superframe node energy with the
package.
"""
from __future__ import annotations

import functools
import itertools
import math

import numpy as np
from scipy.stats import norm

from gridcsmac.macmodel import MacConfig, MacTiming, event_probabilities, frame_stats, node_energy_sf, \
    solve_chain


def multinomial_succ(k_succ, k_frames, p_succ, p_coll, p_d, p_ccas):
    """Successes among k frames: explicit sum over collisions j, deferences k <= 1."""
    total = 0.0
    for j in range(k_frames - k_succ + 1):
        for d in (0, 1):
            l_ = k_frames - k_succ - j - d
            if l_ < 0:
                continue
            coef = math.factorial(k_frames) // (
                math.factorial(k_succ) * math.factorial(j) * math.factorial(d) * math.factorial(l_))
            total += coef * p_succ**k_succ * p_coll**j * p_d**d * p_ccas**l_
    return total


@functools.lru_cache(maxsize=None)
def sf_pmf(h, sf_len, timing):
    """Per-superframe success distribution by enumerating frame counts."""
    if h == 0 or sf_len <= timing.l_s:
        out = [0.0] * (h + 1)
        out[0] = 1.0
        return tuple(out)
    sol = solve_chain(h, sf_len, timing)
    st = frame_stats(sol, timing)
    ps, pc, pf, pd = event_probabilities(sol, timing)
    kmax = timing.k_s_max(sf_len)
    w = {k: float(norm.sf((k * st.t_bar - sf_len) / math.sqrt(k * st.sigma2))) for k in range(1, kmax + 1)}
    out = []
    for s in range(h + 1):
        ks = range(max(s, 1), kmax + 1)
        den = sum(w[k] for k in ks)
        num = sum(w[k] * multinomial_succ(s, k, ps, pc, pd, pf) for k in ks)
        out.append(num / den if den > 0 else 0.0)
    tot = sum(out)
    return tuple(x / tot for x in out)


def enumerate_ri(cfg: MacConfig, n_s: int, m_s: int, timing: MacTiming, ep=None):
    """(Pr{K_succ >= m_s}, expected energy on those outcomes) over all
    participant counts and all per-superframe success tuples."""
    lengths = cfg.sf_lengths(timing)
    pr = 0.0
    en = 0.0
    for h in range(n_s + 1):
        w_h = math.comb(n_s, h) * cfg.p_s**h * (1 - cfg.p_s) ** (n_s - h)
        if w_h == 0:
            continue
        for combo in itertools.product(range(h + 1), repeat=len(lengths)):
            if sum(combo) > h:
                continue
            p = w_h
            rem = h
            e = 0.0
            for s, sf in zip(combo, lengths):
                pmf = sf_pmf(rem, sf, timing)
                if s >= len(pmf) or pmf[s] == 0:
                    p = 0.0
                    break
                p *= pmf[s]
                if ep is not None and rem > 0:
                    e += rem * node_energy_sf(rem, sf, timing, ep)
                rem -= s
            if p and sum(combo) >= m_s:
                pr += p
                en += p * e
    return pr, en


def exhaustive_optimum(n_s, m_s, timing, p_suff, k_max, bo_values, p_grid, prob):
    """Minimum (delay, K, bo, p_s) over every beacon sequence and grid p_s.

    ``prob(cfg)`` evaluates feasibility. Every ordering of every sequence is
    tried, so the result is the true optimum on the grid.
    """
    best = None
    for k in range(1, k_max + 1):
        for bo in itertools.product(sorted(bo_values), repeat=k):
            for p in p_grid:
                cfg = MacConfig(k, bo, float(p))
                if prob(cfg) >= p_suff:
                    key = (cfg.delay(timing), k, bo, float(p))
                    if best is None or key < best:
                        best = key
                    break
    return best


def tdma_reference(n, l_s):
    return n * l_s


def haar_matrix(n):
    """Orthonormal Haar analysis matrix by the recursive definition."""
    if n == 1:
        return np.ones((1, 1))
    h = haar_matrix(n // 2)
    top = np.kron(h, [1.0, 1.0])
    bottom = np.kron(np.eye(n // 2), [1.0, -1.0])
    return np.vstack([top, bottom]) / math.sqrt(2)

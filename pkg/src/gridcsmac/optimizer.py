"""Delay-minimising MAC parameter search, TDMA baselines and channel counts.

The search covers K_tau = 1..K_tau,max superframes and beacon-order
sequences in a chosen order class. Pr{K_succ >= m_S} factors as sum_h Binom(h; n_S, p_s) R[h], where
R[h] is the success probability given h contenders. R is computed by a
backward pass over the superframes, so one pass serves every p_s. Beacon
sequences that share a suffix share that part of the pass, and a depth-first
walk over suffixes evaluates every sequence with one sparse product each.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import binom

from .macmodel import EnergyParams, MacConfig, MacTiming, terminal_values, transition_matrix


class InfeasibleError(ValueError):
    """No configuration in the search space meets the sufficiency target."""

    def __init__(self, message, best_prob=0.0, best_config=None):
        super().__init__(message)
        self.best_prob = best_prob
        self.best_config = best_config


@dataclass(frozen=True)
class SearchSpace:
    """Bounds of the parameter search.

    k_tau_max, bo_values: default to the timing bounds (1..K_tau,max, 0..BO_max).
    uniform: restrict to BO_i = BO for all superframes.
    order: which beacon sequences to visit. "any" is every sequence,
        "nondecreasing"/"nonincreasing" a monotone class, "monotone" both
        monotone classes, and "auto" picks "any" when the space holds at most
        ``any_limit`` sequences and "monotone" otherwise.
    p_values: explicit p_s grid; otherwise 0..1 in steps of ``p_step``.
    max_delay: skip sequences longer than this many slots.
    refine: bounded scalar maximisation of Pr around the best grid point,
        tried only when the grid maximum is within ``refine_margin`` of the
        target (between grid points Pr moves by far less than that).
    """

    k_tau_max: int | None = None
    bo_values: tuple[int, ...] | None = None
    uniform: bool = False
    p_step: float = 0.01
    p_values: tuple[float, ...] | None = None
    refine: bool = True
    refine_margin: float = 0.02
    max_delay: int | None = None
    order: str = "auto"
    any_limit: int = 200_000

    def __post_init__(self):
        if self.k_tau_max is not None and self.k_tau_max < 1:
            raise ValueError("k_tau_max must be >= 1")
        if self.bo_values is not None and (not self.bo_values or min(self.bo_values) < 0):
            raise ValueError("bo_values must be a nonempty set of non-negative integers")
        if self.p_values is not None and (not self.p_values or not all(0 <= p <= 1 for p in self.p_values)):
            raise ValueError("p_values must be a nonempty subset of [0, 1]")
        if self.order not in ("auto", "any", "nondecreasing", "nonincreasing", "monotone"):
            raise ValueError(f"unknown order {self.order!r}")
        if not 0 < self.p_step <= 1:
            raise ValueError("p_step must lie in (0, 1]")

    def grid(self) -> np.ndarray:
        if self.p_values is not None:
            return np.array(sorted(set(self.p_values)), float)
        n = int(round(1 / self.p_step))
        return np.round(np.linspace(0.0, 1.0, n + 1), 12)

    def bos(self, timing: MacTiming) -> tuple[int, ...]:
        vals = self.bo_values if self.bo_values is not None else range(timing.bo_max + 1)
        return tuple(sorted(set(int(b) for b in vals)))

    def kmax(self, timing: MacTiming) -> int:
        return self.k_tau_max or timing.k_tau_max

    def resolved_order(self, timing: MacTiming) -> str:
        if self.uniform:
            return "nondecreasing"
        if self.order != "auto":
            return self.order
        nb = len(self.bos(timing))
        size = sum(nb**k for k in range(1, self.kmax(timing) + 1))
        return "any" if size <= self.any_limit else "monotone"


@dataclass(frozen=True)
class OptResult:
    config: MacConfig
    delay: int
    prob: float
    evaluated: int


def _allowed(order, b, first):
    if first is None or order == "any":
        return True
    if order == "nondecreasing":
        return b <= first
    return b >= first  # nonincreasing


def _sequences(n_s, m_s, timing, space):
    """Yield (bo tuple, R) for every sequence in the space, once each."""
    order = space.resolved_order(timing)
    if order == "monotone":
        seen = set()
        for sub in ("nondecreasing", "nonincreasing"):
            for seq, r in _sequences(n_s, m_s, timing, replace(space, order=sub)):
                if seq not in seen:
                    seen.add(seq)
                    yield seq, r
        return
    bos = space.bos(timing)
    kmax = space.kmax(timing)
    mats = {b: transition_matrix(n_s, m_s, timing.sf_len(b), timing) for b in bos}
    m1 = m_s + 1
    budget = space.max_delay if space.max_delay is not None else math.inf

    def walk(seq, v, used):
        yield seq, v[::m1]
        if len(seq) == kmax:
            return
        first = seq[0] if seq else None
        for b in bos:
            if used + timing.sf_len(b) > budget:
                break
            if not _allowed(order, b, first) or (space.uniform and first is not None and b != first):
                continue
            yield from walk((b,) + seq, mats[b] @ v, used + timing.sf_len(b))

    for seq, r in walk((), terminal_values(n_s, m_s), 0):
        if seq:
            yield seq, r


def _pr(p, n_s, r):
    return float(binom.pmf(np.arange(n_s + 1), n_s, p) @ r)


def _refine(n_s, r, grid, j):
    """Maximise Pr over the bracket around grid index j."""
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    if hi <= lo:
        return grid[j], _pr(grid[j], n_s, r)
    res = minimize_scalar(lambda p: -_pr(p, n_s, r), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-6})
    return float(res.x), -float(res.fun)


def optimize_mac(n_s: int, m_s: int, timing: MacTiming | None = None, p_suff: float = 0.9,
                 space: SearchSpace | None = None) -> OptResult:
    """Minimum-delay (K_tau, {BO_i}, p_s) with Pr{K_succ >= m_S} >= p_suff.

    Ties on delay go to smaller K_tau, then the lexicographically smaller
    beacon sequence, then the smaller p_s. A sequence is feasible when some
    p_s reaches the target; the smallest such grid value is returned, or the
    refined maximiser when only it reaches the target.
    """
    timing = timing or MacTiming()
    space = space or SearchSpace()
    if not 0 < p_suff < 1:
        raise ValueError("p_suff must lie in (0, 1)")
    if n_s < 1 or m_s < 0 or m_s > n_s:
        raise ValueError(f"need 1 <= n_s and 0 <= m_s <= n_s, got ({n_s}, {m_s})")
    grid = space.grid()
    pmf = binom.pmf(np.arange(n_s + 1)[None, :], n_s, grid[:, None])

    rows = []
    for seq, r in _sequences(n_s, max(m_s, 0), timing, space):
        pr = pmf @ r
        j = int(np.argmax(pr))
        ok = np.flatnonzero(pr >= p_suff)
        rows.append((sum(timing.sf_len(b) for b in seq), len(seq), seq,
                     float(grid[ok[0]]) if ok.size else None, j, float(pr[j])))
    rows.sort(key=lambda t: t[:3])
    if not rows:
        raise InfeasibleError(f"no beacon sequence fits within {space.max_delay} slots")

    best = (0.0, None)
    for delay, k, seq, p_ok, j, pmax in rows:
        if p_ok is not None:
            cfg = MacConfig(k, seq, p_ok)
            return OptResult(cfg, delay, _pr(p_ok, n_s, _r_of(seq, n_s, m_s, timing)), len(rows))
        if space.refine and pmax >= p_suff - space.refine_margin:
            r = _r_of(seq, n_s, m_s, timing)
            p, val = _refine(n_s, r, grid, j)
            pmax = max(pmax, val)
            if val >= p_suff:
                return OptResult(MacConfig(k, seq, p), delay, val, len(rows))
        if pmax > best[0]:
            best = (pmax, MacConfig(k, seq, float(grid[j])))
    raise InfeasibleError(
        f"no configuration reaches Pr >= {p_suff} for n_s={n_s}, m_s={m_s}; best {best[0]:.4f} at {best[1]}",
        *best)


def _r_of(seq, n_s, m_s, timing):
    v = terminal_values(n_s, m_s)
    for b in reversed(seq):
        v = transition_matrix(n_s, m_s, timing.sf_len(b), timing) @ v
    return v[:: m_s + 1]


def optimize_partial(n_s: int, m_s: int, timing: MacTiming | None = None, p_suff: float = 0.9,
                     bo: int | None = None, p_s: float | None = None,
                     space: SearchSpace | None = None) -> OptResult:
    """:func:`optimize_mac` with every BO_i pinned to ``bo`` or p_s pinned."""
    if (bo is None) == (p_s is None):
        raise ValueError("pin exactly one of bo and p_s")
    space = space or SearchSpace()
    if bo is not None:
        space = replace(space, bo_values=(bo,), uniform=True)
    else:
        space = replace(space, p_values=(p_s,), refine=False)
    return optimize_mac(n_s, m_s, timing, p_suff, space)


def tdma_delay(n_nodes: int, timing: MacTiming | None = None, compressed: bool = False,
               m_s: int | None = None) -> int:
    """Slots for one dedicated slot (frame plus ACK) per report."""
    timing = timing or MacTiming()
    if n_nodes < 0:
        raise ValueError("n_nodes must be non-negative")
    if compressed:
        if m_s is None:
            raise ValueError("compressed TDMA needs m_s")
        return min(m_s, n_nodes) * timing.l_s
    return n_nodes * timing.l_s


def tdma_energy(n_nodes: int, timing: MacTiming | None = None, ep: EnergyParams | None = None,
                compressed: bool = False, m_s: int | None = None) -> float:
    """uJ per reporting interval: each report costs its frame, ACK wait and ACK.

    Nodes sleep outside their own slot.
    """
    timing = timing or MacTiming()
    ep = ep or EnergyParams()
    n = tdma_delay(n_nodes, timing, compressed, m_s) // timing.l_s
    per = ep.e_tx * timing.t_p + ep.e_idle * timing.t_ack + ep.e_rx * timing.l_ack
    return n * per


@dataclass(frozen=True)
class BandwidthScenario:
    n_total: int
    n_s_tdma: int
    n_s_csma_cs: int
    m_t: int
    n_t: int
    target_delay: int | None = None

    def __post_init__(self):
        if min(self.n_s_tdma, self.n_s_csma_cs, self.n_t) < 1 or self.m_t < 0:
            raise ValueError("group sizes and n_t must be >= 1")
        if self.n_total < max(self.n_s_tdma, self.n_s_csma_cs):
            raise ValueError("n_total must be at least the group sizes")
        if self.m_t > self.n_t:
            raise ValueError("m_t must not exceed n_t")


def channels_required(s: BandwidthScenario) -> tuple[int, int]:
    """(TDMA, CSMA-CS) channel counts for N nodes.

    TDMA needs ceil(N / n_S) channels, one per whole group. CSMA-CS groups
    report in m_T of every n_T intervals, so their load N/n_S * m_T/n_T is a
    time-shared channel count, rounded half up to whole channels.
    """
    tdma = math.ceil(s.n_total / s.n_s_tdma - 1e-12)
    cs = math.floor(s.n_total / s.n_s_csma_cs * s.m_t / s.n_t + 0.5)
    return tdma, max(cs, 1 if s.m_t else 0)


# m_S per group size for n_T = 256 synthetic injected-power fields.
REFERENCE_M_S = ((32, 10), (48, 13), (64, 16), (80, 19), (96, 22), (128, 30), (256, 80))


def reference_m_s(n_s: int) -> int:
    """Piecewise-linear m_S(n_S) through :data:`REFERENCE_M_S`, linear beyond."""
    xs, ys = zip(*REFERENCE_M_S)
    if n_s <= xs[0]:
        val = ys[0] + (n_s - xs[0]) * (ys[1] - ys[0]) / (xs[1] - xs[0])
    elif n_s >= xs[-1]:
        val = ys[-1] + (n_s - xs[-1]) * (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    else:
        val = float(np.interp(n_s, xs, ys))
    return int(min(n_s, max(1, math.ceil(val - 1e-9))))


def csma_delay(n_s: int, m_s: int, timing: MacTiming | None = None, p_suff: float = 0.9,
               space: SearchSpace | None = None) -> float:
    """Optimised delay, or inf when the target is unreachable."""
    try:
        return float(optimize_mac(n_s, m_s, timing, p_suff, space).delay)
    except InfeasibleError:
        return math.inf


def max_group_size(scheme: str, target_delay: int, timing: MacTiming | None = None,
                   m_s_of_n: Callable[[int], int] = reference_m_s, p_suff: float = 0.9,
                   n_max: int = 512, space: SearchSpace | None = None) -> int:
    """Largest n_S (up to ``n_max``) whose delay meets the target.

    scheme: "tdma", "tdma-cs", "csma" or "csma-cs". Delay is assumed to grow
    with n_S: the search doubles n_S until the target is missed, then bisects.
    Contention searches only consider sequences within the target delay.
    """
    timing = timing or MacTiming()
    if target_delay <= 0:
        raise ValueError("target_delay must be positive")
    space = replace(space or SearchSpace(), max_delay=target_delay)
    delay = {
        "tdma": lambda n: tdma_delay(n, timing),
        "tdma-cs": lambda n: tdma_delay(n, timing, True, m_s_of_n(n)),
        "csma": lambda n: csma_delay(n, n, timing, p_suff, space),
        "csma-cs": lambda n: csma_delay(n, m_s_of_n(n), timing, p_suff, space),
    }.get(scheme)
    if delay is None:
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "tdma":
        if target_delay < timing.l_s:
            raise InfeasibleError(f"even a single node exceeds target delay {target_delay}")
        return min(n_max, target_delay // timing.l_s)
    if delay(1) > target_delay:
        raise InfeasibleError(f"even a single node exceeds target delay {target_delay}")
    lo, hi = 1, 2
    while hi <= n_max and delay(hi) <= target_delay:
        lo, hi = hi, 2 * hi
    if hi > n_max:
        if delay(n_max) <= target_delay:
            return n_max
        hi = n_max
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if delay(mid) <= target_delay:
            lo = mid
        else:
            hi = mid
    return lo

"""Closed-form analytics of the slotted CSMA/CA superframe protocol.

Per superframe with ``h`` contenders the protocol is summarised by a Markov
chain fixed point (CCA busy probabilities and the CCA1 occupancy ``phi``),
from which the generic-frame event probabilities and length moments follow.
Those feed the reporting-interval level quantities: the probability that at
least ``m_S`` reports arrive, and the expected energy.

All times are in slots, energies in micro-joules.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import comb, erfc, sqrt

import numpy as np
from scipy import sparse
from scipy.special import gammaln
from scipy.stats import binom


@dataclass(frozen=True)
class MacTiming:
    """Slot-denominated protocol constants."""

    sf0: int = 8
    bo_max: int = 8
    k_tau_max: int = 10
    priority: int = 2
    nb: int = 5
    l_mac: int = 2
    l_ack: int = 2
    t_ack: int = 1
    t_ack_ti: int = 4

    def __post_init__(self):
        for name in ("sf0", "priority", "l_ack", "t_ack", "t_ack_ti", "k_tau_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.nb < 0 or self.bo_max < 0 or self.l_mac < 0:
            raise ValueError("nb, bo_max and l_mac must be non-negative")

    @property
    def t_p(self) -> int:
        return 5 + self.l_mac

    @property
    def l_s(self) -> int:
        """Slots occupied by a successful transmission incl. ACK."""
        return self.t_p + self.t_ack + self.l_ack

    @property
    def l_c(self) -> int:
        """Slots spent by a node whose transmission collided."""
        return self.t_p + self.t_ack_ti

    @property
    def w0(self) -> int:
        return 2 ** self.priority

    @property
    def mac_max_be(self) -> int:
        return self.priority + self.nb

    def window(self, stage: int) -> int:
        return self.w0 * 2 ** stage

    def sf_len(self, bo: int) -> int:
        return self.sf0 * 2 ** bo

    @property
    def k_s_frames_divisor(self) -> int:
        return min(self.nb + 1, self.l_s + 2)

    def k_s_max(self, sf_len: int) -> int:
        """Upper bound on generic frames per superframe."""
        return sf_len // self.k_s_frames_divisor


@dataclass(frozen=True)
class EnergyParams:
    """Per-slot energy rates (uJ/slot)."""

    e_idle: float = 0.228
    e_tx: float = 10.022
    e_rx: float = 11.290
    e_sens: float | None = None

    def __post_init__(self):
        if self.e_sens is None:
            object.__setattr__(self, "e_sens", self.e_rx)
        for name in ("e_idle", "e_tx", "e_rx", "e_sens"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class MacConfig:
    """Decision variables of one reporting interval."""

    k_tau: int
    bo: tuple[int, ...]
    p_s: float

    def __post_init__(self):
        object.__setattr__(self, "bo", tuple(int(b) for b in self.bo))
        if self.k_tau < 1:
            raise ValueError("k_tau must be >= 1")
        if len(self.bo) != self.k_tau:
            raise ValueError(f"bo has {len(self.bo)} entries, expected k_tau={self.k_tau}")
        if any(b < 0 for b in self.bo):
            raise ValueError("beacon orders must be non-negative")
        if not 0.0 <= self.p_s <= 1.0:
            raise ValueError(f"p_s={self.p_s} outside [0, 1]")

    @classmethod
    def uniform(cls, k_tau: int, bo: int, p_s: float) -> "MacConfig":
        return cls(k_tau, (bo,) * k_tau, p_s)

    def sf_lengths(self, timing: MacTiming) -> list[int]:
        return [timing.sf_len(b) for b in self.bo]

    def delay(self, timing: MacTiming) -> int:
        return sum(self.sf_lengths(timing))

    def check_bounds(self, timing: MacTiming) -> None:
        if self.k_tau > timing.k_tau_max:
            raise ValueError(f"k_tau={self.k_tau} exceeds k_tau_max={timing.k_tau_max}")
        if max(self.bo) > timing.bo_max:
            raise ValueError(f"beacon order {max(self.bo)} exceeds bo_max={timing.bo_max}")


class ChainConvergenceError(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class ChainSolution:
    h: int
    sf_len: int
    b00: float
    alpha: float
    beta: float
    phi: float
    lam: float
    p_d: float
    omega: float
    p_c: float
    p_ncol: float
    beta_ack: float
    l_star: float
    iterations: int = 0
    alpha_clamped: bool = False
    residuals: tuple[float, ...] = field(default=(), compare=False)


def _geo(x: float, n: int) -> float:
    # sum_{i<n} x^i, well defined at x == 1
    return float(sum(x**i for i in range(n)))


def _normalisation(alpha, beta, omega, p_d, timing: MacTiming) -> float:
    n = timing.nb + 1
    return (
        timing.w0 * _geo(2 * omega, n)
        + _geo(omega, n)
        * (3 + 2 * (1 - p_d) * (1 + (1 - alpha) * (1 + (1 - beta) * timing.l_s)))
    ) / 2


def _p_ncol(phi: float, h: int) -> float:
    p_any = 1 - (1 - phi) ** h
    if p_any <= 0:
        return 0.0
    return 1 - h * phi * (1 - phi) ** (h - 1) / p_any


def _beta_ack(phi: float, h: int) -> float:
    p_any = 1 - (1 - phi) ** h
    if p_any <= 0:
        return 0.0
    p_ncol = _p_ncol(phi, h)
    return (2 - p_ncol) / (2 - p_ncol + 1 / p_any)


def chain_residuals(sol: ChainSolution, timing: MacTiming) -> tuple[float, float, float, float]:
    """Residuals of the normalisation, phi-b00, phi-alpha and phi-beta relations."""
    a, b, phi, h = sol.alpha, sol.beta, sol.phi, sol.h
    omega = (a + b - a * b) * (1 - sol.p_d)
    r12 = 1 - sol.b00 * _normalisation(a, b, omega, sol.p_d, timing)
    r13 = phi - _geo(omega, timing.nb + 1) * sol.b00
    if h < 2:
        return (r12, r13, 0.0, 0.0)
    p_ncol = _p_ncol(phi, h)
    l_star = timing.t_p + timing.l_ack * (1 - p_ncol)
    base = 1 - a / (l_star * (1 - omega))
    r14 = phi - (1 - max(base, 0.0) ** (1 / (h - 1)))
    # phi-beta relation in power form; taking the h-th root of a number near
    # zero would only amplify round-off
    inner = 1 - b / ((1 - b) * (2 - p_ncol))
    r15 = (1 - phi) ** h - inner
    return (r12, r13, r14, r15)


def _chain_map(alpha, beta, h, p_d, timing):
    omega = (alpha + beta - alpha * beta) * (1 - p_d)
    b00 = 1 / _normalisation(alpha, beta, omega, p_d, timing)
    phi = _geo(omega, timing.nb + 1) * b00
    if h < 2:
        return 0.0, 0.0, phi, b00
    p_ncol = _p_ncol(phi, h)
    l_star = timing.t_p + timing.l_ack * (1 - p_ncol)
    alpha_new = l_star * (1 - omega) * (1 - (1 - phi) ** (h - 1))
    return min(alpha_new, 1.0), _beta_ack(phi, h), phi, b00


def _alpha_given_phi(phi, beta, h, p_d, timing):
    # the phi-alpha relation is linear in alpha once beta is fixed
    p_c = 1 - (1 - phi) ** (h - 1)
    l_star = timing.t_p + timing.l_ack * (1 - _p_ncol(phi, h))
    k = l_star * p_c
    alpha = k * (1 - (1 - p_d) * beta) / (1 + k * (1 - p_d) * (1 - beta))
    return min(alpha, 1.0)


def _solve_reduced(h, p_d, timing):
    """Bracketed root of the chain reduced to one equation in phi."""
    from scipy.optimize import brentq

    def gap(phi):
        beta = _beta_ack(phi, h)
        alpha = _alpha_given_phi(phi, beta, h, p_d, timing)
        return _chain_map(alpha, beta, 1, p_d, timing)[2] - phi

    phi = brentq(gap, 1e-12, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    beta = _beta_ack(phi, h)
    return _alpha_given_phi(phi, beta, h, p_d, timing), beta


def solve_chain(
    h: int,
    sf_len: int,
    timing: MacTiming,
    init: tuple[float, float] = (0.0, 0.0),
    damping: float = 0.5,
    max_iter: int = 10_000,
    tol: float = 1e-8,
) -> ChainSolution:
    """Fixed point of the CSMA/CA chain for ``h`` contenders in a superframe
    of ``sf_len`` slots.

    Damped substitution on (alpha, beta); if that stalls (it can oscillate at
    high contention) the system is reduced to a scalar equation in phi and
    bracketed instead.
    """
    if h < 1:
        raise ValueError("solve_chain needs h >= 1")
    if sf_len <= timing.l_s:
        raise ValueError(f"sf_len={sf_len} must exceed l_s={timing.l_s}")
    p_d = timing.l_s / sf_len
    alpha, beta = init
    for it in range(1, max_iter + 1):
        a_new, b_new, phi, b00 = _chain_map(alpha, beta, h, p_d, timing)
        step = max(abs(a_new - alpha), abs(b_new - beta))
        alpha = (1 - damping) * alpha + damping * a_new
        beta = (1 - damping) * beta + damping * b_new
        if step < tol * 1e-3:
            break
        if it >= 500 and step > 1e-4:
            break  # oscillating; hand over to the bracketed solve
    _, _, phi, b00 = _chain_map(alpha, beta, h, p_d, timing)
    sol = _build_solution(h, sf_len, alpha, beta, phi, b00, p_d, timing, it)
    residuals = chain_residuals(sol, timing)
    if h >= 2 and max(abs(r) for r in residuals) > tol:
        # stalled, or settled on the alpha <= 1 clip instead of a true root
        alpha, beta = _solve_reduced(h, p_d, timing)
        _, _, phi, b00 = _chain_map(alpha, beta, h, p_d, timing)
        sol = _build_solution(h, sf_len, alpha, beta, phi, b00, p_d, timing, it)
        residuals = chain_residuals(sol, timing)
    # at heavy load the alpha relation asks for a busy probability above one;
    # alpha is then pinned at 1 and that residual cannot vanish
    clamped = h >= 2 and alpha >= 1.0 and sol.l_star * (1 - sol.omega) * sol.p_c >= 1.0
    checked = residuals[:2] + residuals[3:] if clamped else residuals
    if max(abs(r) for r in checked) > tol:
        raise ChainConvergenceError(
            f"chain did not converge for h={h}, sf_len={sf_len} after {it} iterations",
            residuals,
        )
    return replace(sol, residuals=tuple(float(r) for r in residuals), alpha_clamped=clamped)


def _build_solution(h, sf_len, alpha, beta, phi, b00, p_d, timing, it):
    lam = alpha + beta - alpha * beta
    p_ncol = _p_ncol(phi, h) if h >= 2 else 0.0
    return ChainSolution(
        h=h,
        sf_len=sf_len,
        b00=b00,
        alpha=alpha,
        beta=beta,
        phi=phi,
        lam=lam,
        p_d=p_d,
        omega=lam * (1 - p_d),
        p_c=1 - (1 - phi) ** (h - 1),
        p_ncol=p_ncol,
        beta_ack=_beta_ack(phi, h) if h >= 2 else 0.0,
        l_star=timing.t_p + timing.l_ack * (1 - p_ncol),
        iterations=it,
    )


@lru_cache(maxsize=65536)
def _cached_chain(h: int, sf_len: int, timing: MacTiming) -> ChainSolution:
    return solve_chain(h, sf_len, timing)


# -- generic frame ---------------------------------------------------------


@dataclass(frozen=True)
class FrameStats:
    p_succ: float
    p_coll: float
    p_ccas: float
    p_d: float
    t_bar: float
    sigma2: float
    k_s_max: int


def _uniform_moments(w: int) -> tuple[float, float]:
    return (w - 1) / 2, (w * w - 1) / 12


def _cca_fail_moments(alpha: float, beta: float) -> tuple[float, float]:
    """Mean and variance of the slots burnt by one failed CCA pair."""
    lam = alpha + beta - alpha * beta
    if lam <= 0:
        return 1.0, 0.0
    p1 = alpha / lam
    p2 = (1 - alpha) * beta / lam
    mean = p1 + 2 * p2
    return mean, p1 + 4 * p2 - mean * mean


def branch_moments(sol: ChainSolution, timing: MacTiming) -> dict[str, tuple[float, float]]:
    """(mean, variance) of the success, collision, CCA-failure and deference
    frame durations."""
    nb = timing.nb
    lam = sol.lam
    m_c, v_c = _cca_fail_moments(sol.alpha, sol.beta)
    mb = [_uniform_moments(timing.window(j)) for j in range(nb + 1)]
    cum_m = np.cumsum([m for m, _ in mb])
    cum_v = np.cumsum([v for _, v in mb])

    # stage at which the channel is finally found idle, truncated geometric
    if lam >= 1:
        weights = np.zeros(nb + 1)
        weights[-1] = 1.0
    else:
        weights = np.array([lam**i * (1 - lam) for i in range(nb + 1)])
        weights /= weights.sum()
    stage_m = cum_m + np.arange(nb + 1) * m_c
    stage_v = cum_v + np.arange(nb + 1) * v_c
    mix_m = float(weights @ stage_m)
    mix_v = float(weights @ (stage_v + stage_m**2) - mix_m**2)

    out = {
        "succ": (mix_m + 2 + timing.l_s, mix_v),
        "coll": (mix_m + 2 + timing.l_c, mix_v),
        "ccas": (float(cum_m[-1] + (nb + 1) * m_c), float(cum_v[-1] + (nb + 1) * v_c)),
        "d": (float(timing.l_s), 0.0),
    }
    return out


def event_probabilities(sol: ChainSolution, timing: MacTiming) -> tuple[float, float, float, float]:
    lam_n = sol.lam ** (timing.nb + 1)
    p_ccas = (1 - sol.p_d) * lam_n
    p_coll = sol.p_c * (1 - sol.p_d) * (1 - lam_n)
    p_succ = 1 - p_coll - p_ccas - sol.p_d
    return p_succ, p_coll, p_ccas, sol.p_d


def frame_stats(sol: ChainSolution, timing: MacTiming) -> FrameStats:
    p_succ, p_coll, p_ccas, p_d = event_probabilities(sol, timing)
    mom = branch_moments(sol, timing)
    probs = {"succ": p_succ, "coll": p_coll, "ccas": p_ccas, "d": p_d}
    t_bar = sum(probs[k] * mom[k][0] for k in probs)
    second = sum(probs[k] * (mom[k][1] + mom[k][0] ** 2) for k in probs)
    return FrameStats(
        p_succ=p_succ,
        p_coll=p_coll,
        p_ccas=p_ccas,
        p_d=p_d,
        t_bar=t_bar,
        sigma2=max(second - t_bar * t_bar, 0.0),
        k_s_max=timing.k_s_max(sol.sf_len),
    )


def frame_pgf(z: complex | float, sol: ChainSolution, timing: MacTiming) -> complex | float:
    """Generic-frame length PGF T(z), evaluated directly from its branches."""
    nb = timing.nb
    lam = sol.lam

    def backoff(j):
        w = timing.window(j)
        return sum(z**k for k in range(w)) / w

    if lam > 0:
        cf = (sol.alpha * z + (1 - sol.alpha) * sol.beta * z**2) / lam
    else:
        cf = z
    prod_b = []
    acc = 1
    for j in range(nb + 1):
        acc = acc * backoff(j)
        prod_b.append(acc)
    norm = 1 - lam ** (nb + 1)
    ts = tc = 0
    for i in range(nb + 1):
        w = lam**i * (1 - lam) / norm if norm > 0 else (1.0 if i == nb else 0.0)
        core = w * prod_b[i] * cf**i * z**2
        ts += core * z**timing.l_s
        tc += core * z**timing.l_c
    tf = prod_b[nb] * cf ** (nb + 1)
    td = z**timing.l_s
    p_succ, p_coll, p_ccas, p_d = event_probabilities(sol, timing)
    return p_succ * ts + p_coll * tc + p_ccas * tf + p_d * td


def q_function(x: float) -> float:
    """Standard normal upper tail."""
    return 0.5 * erfc(x / sqrt(2))


def prob_k_frames(k: int, sf_len: int, stats: FrameStats) -> float:
    """Gaussian likelihood that ``k`` generic frames fill the superframe.

    Evaluated as Q((k T - SF)/sqrt(k sigma^2)), the normal probability that
    k frames fit in ``sf_len`` slots, so it tends to 1 when SF >> k T and is
    0.5 at SF = k T. Zero for k outside [1, k_s_max].
    """
    if k < 1 or k > stats.k_s_max:
        return 0.0
    gap = sf_len - k * stats.t_bar
    spread = sqrt(k * stats.sigma2)
    if spread == 0:
        return 0.5 if gap == 0 else float(gap > 0)
    return q_function(-gap / spread)


def prob_succ_given_frames(k_succ: int, k_frames: int, stats: FrameStats) -> float:
    """Probability of ``k_succ`` successes among ``k_frames`` generic frames,
    allowing at most one deference frame."""
    if k_succ < 0 or k_frames < 0:
        raise ValueError("frame counts must be non-negative")
    if k_succ > k_frames:
        return 0.0
    fail = stats.p_coll + stats.p_ccas
    rest = k_frames - k_succ
    head = comb(k_frames, k_succ) * stats.p_succ**k_succ
    total = head * fail**rest
    if rest >= 1:
        # one deference among the non-successes: choose its position
        total += head * rest * stats.p_d * fail ** (rest - 1)
    return total


# -- superframe and reporting interval ---------------------------------------


def _frame_weights(sf_len: int, stats: FrameStats) -> np.ndarray:
    k = np.arange(1, stats.k_s_max + 1, dtype=float)
    gap = sf_len - k * stats.t_bar
    if stats.sigma2 > 0:
        return 0.5 * np.array([erfc(x) for x in (-gap / np.sqrt(2 * k * stats.sigma2))])
    return np.where(gap > 0, 1.0, np.where(gap == 0, 0.5, 0.0))


def _succ_matrix(s_max: int, stats: FrameStats) -> np.ndarray:
    """Row s, column k-1: successes-given-frames for k = 1..k_s_max."""
    kk = np.arange(1, stats.k_s_max + 1)
    ss = np.arange(s_max + 1)[:, None]
    rest = kk[None, :] - ss
    ok = rest >= 0
    r = np.where(ok, rest, 0)
    logc = gammaln(kk + 1)[None, :] - gammaln(ss + 1) - gammaln(r + 1)
    fail = stats.p_coll + stats.p_ccas
    with np.errstate(divide="ignore", invalid="ignore"):
        head = np.exp(logc) * np.power(stats.p_succ, ss)
        tail = np.power(fail, r) + r * stats.p_d * np.power(fail, np.maximum(r - 1, 0))
    return np.where(ok, head * tail, 0.0)


@lru_cache(maxsize=65536)
def sf_success_pmf(h: int, sf_len: int, timing: MacTiming) -> np.ndarray:
    """Distribution of the number of successes in one superframe with ``h``
    contenders, as an array over 0..h.

    For each success count s the frame-count likelihoods are renormalised over
    k in [max(s, 1), k_s_max]; the resulting weights over s are then
    normalised, so the vector is a proper distribution over 0..h.
    """
    if h == 0 or sf_len <= timing.l_s:
        # nobody contends, or no transmission fits: everyone defers
        out = np.zeros(h + 1)
        out[0] = 1.0
        return out
    stats = frame_stats(_cached_chain(h, sf_len, timing), timing)
    w = _frame_weights(sf_len, stats)
    s_max = min(h, stats.k_s_max)
    m = _succ_matrix(s_max, stats)
    cum = np.cumsum(w[::-1])[::-1]  # cum[j] = sum of w[j:]
    out = np.zeros(h + 1)
    for s in range(s_max + 1):
        lo = max(s, 1) - 1
        if cum[lo] > 0:
            out[s] = float(w[lo:] @ m[s, lo:]) / cum[lo]
    tot = out.sum()
    if tot <= 0:
        out[:] = 0.0
        out[0] = 1.0
        return out
    out /= tot
    out.setflags(write=False)
    return out


def _initial_mass(n_s: int, m_s: int, p_s: float) -> np.ndarray:
    p = np.zeros((n_s + 1, m_s + 1))
    p[:, 0] = binom.pmf(np.arange(n_s + 1), n_s, p_s)
    return p


def _sf_step(p, acc, sf_len, timing, node_energy=None):
    """Advance (contenders, capped successes) mass by one superframe."""
    n1, m1 = p.shape
    m_s = m1 - 1
    q = np.zeros_like(p)
    qa = None if acc is None else np.zeros_like(acc)
    cols = np.arange(m1)
    for h in range(n1):
        row = p[h]
        if not row.any():
            continue
        pmf = sf_success_pmf(h, sf_len, timing)
        gain = 0.0 if (acc is None or h == 0) else h * node_energy(h, sf_len)
        for s, ps in enumerate(pmf):
            if ps == 0:
                continue
            tgt = np.minimum(cols + s, m_s)
            np.add.at(q[h - s], tgt, row * ps)
            if acc is not None:
                np.add.at(qa[h - s], tgt, (acc[h] + row * gain) * ps)
    return q, qa


@lru_cache(maxsize=1024)
def transition_matrix(n_s: int, m_s: int, sf_len: int, timing: MacTiming) -> sparse.csr_matrix:
    """One-superframe kernel on states (contenders h, capped successes c).

    Row h*(m_s+1)+c holds Pr{s successes | h} at column
    (h-s)*(m_s+1)+min(c+s, m_s); a value vector over end states maps to the
    value one superframe earlier by ``T @ v``.
    """
    m1 = m_s + 1
    rows, cols, vals = [], [], []
    c = np.arange(m1)
    for h in range(n_s + 1):
        pmf = sf_success_pmf(h, sf_len, timing)
        for s in np.flatnonzero(pmf):
            rows.append(h * m1 + c)
            cols.append((h - s) * m1 + np.minimum(c + s, m_s))
            vals.append(np.full(m1, pmf[s]))
    size = (n_s + 1) * m1
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(size, size))


def terminal_values(n_s: int, m_s: int) -> np.ndarray:
    """Indicator of reaching m_s successes, flattened over (h, c)."""
    v = np.zeros((n_s + 1, m_s + 1))
    v[:, m_s] = 1.0
    return v.ravel()


def success_given_contenders(bo_or_lengths, n_s: int, m_s: int, timing: MacTiming | None = None,
                             as_lengths: bool = False) -> np.ndarray:
    """R[h] = Pr{at least m_s successes | h nodes contend}, h = 0..n_s.

    Pr{K_succ >= m_s} for participation probability p_s is then
    sum_h Binom(h; n_s, p_s) R[h].
    """
    timing = timing or MacTiming()
    lengths = list(bo_or_lengths) if as_lengths else [timing.sf_len(b) for b in bo_or_lengths]
    m_cap = max(m_s, 0)
    v = terminal_values(n_s, m_cap)
    for sf_len in reversed(lengths):
        v = transition_matrix(n_s, m_cap, sf_len, timing) @ v
    return v.reshape(n_s + 1, m_cap + 1)[:, 0].copy()


def prob_sufficient(cfg: MacConfig, n_s: int, m_s: int, timing: MacTiming | None = None) -> float:
    """Pr{at least m_s reports arrive within the reporting interval}.

    Dynamic program over (superframe, remaining contenders, successes so far)
    started from the binomial number of participants; contenders that succeed
    leave the contention.
    """
    timing = timing or MacTiming()
    if m_s > n_s:
        raise ValueError("m_s must not exceed n_s")
    if m_s <= 0:
        return 1.0
    p = _initial_mass(n_s, m_s, cfg.p_s)
    for sf_len in cfg.sf_lengths(timing):
        p, _ = _sf_step(p, None, sf_len, timing)
    return float(min(max(p[:, m_s].sum(), 0.0), 1.0))


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-node energy per slot of superframe contention, by activity (uJ)."""

    e_b: float
    e_ccas: float
    e_suco: float
    e_d: float

    @property
    def total(self) -> float:
        return self.e_b + self.e_ccas + self.e_suco + self.e_d


def energy_per_node_sf(sol: ChainSolution, timing: MacTiming, ep: EnergyParams) -> EnergyBreakdown:
    """Backoff, CCA, transmission and deference energy of one node.

    The chain states are per-slot occupancy probabilities, so each term is an
    average energy per slot; multiply by the superframe length for the energy
    spent over one superframe.
    """
    n = timing.nb + 1
    e_b = ep.e_idle / 2 * (timing.w0 * sol.b00 * _geo(2 * sol.omega, n) + 3 * sol.phi)
    e_ccas = ep.e_sens * (1 - sol.p_d) * (2 - sol.alpha) * sol.phi
    p_c = sol.p_c
    e_suco = (1 - sol.lam) * (1 - sol.p_d) * sol.phi * (
        ep.e_tx * timing.t_p
        + ep.e_rx * timing.l_ack * (1 - p_c)
        + ep.e_idle * (timing.t_ack * (1 - p_c) + timing.t_ack_ti * p_c)
    )
    e_d = ep.e_idle * sol.p_d * timing.l_s
    return EnergyBreakdown(e_b, e_ccas, e_suco, e_d)


def node_energy_sf(h: int, sf_len: int, timing: MacTiming, ep: EnergyParams) -> float:
    """Energy (uJ) one of ``h`` contenders spends over a superframe."""
    if sf_len <= timing.l_s:
        return ep.e_idle * sf_len
    return energy_per_node_sf(_cached_chain(h, sf_len, timing), timing, ep).total * sf_len


def expected_energy_ri(
    cfg: MacConfig, n_s: int, m_s: int, timing: MacTiming | None = None, ep: EnergyParams | None = None
) -> float:
    """Expected contention energy of a reporting interval (uJ).

    Sums h_i times the per-node superframe energy over the superframes,
    weighted by the probability of each contender trajectory, restricted to
    trajectories that deliver at least ``m_s`` reports.
    """
    timing = timing or MacTiming()
    ep = ep or EnergyParams()
    if m_s > n_s:
        raise ValueError("m_s must not exceed n_s")
    if cfg.p_s == 0:
        return 0.0
    m_cap = max(m_s, 0)
    p = _initial_mass(n_s, m_cap, cfg.p_s)
    acc = np.zeros_like(p)
    node_e = lambda h, sf: node_energy_sf(h, sf, timing, ep)  # noqa: E731
    for sf_len in cfg.sf_lengths(timing):
        p, acc = _sf_step(p, acc, sf_len, timing, node_e)
    return float(acc[:, m_cap].sum())


def field_energy(cfg: MacConfig, n_s: int, m_s: int, m_t: int, timing=None, ep=None) -> float:
    """Energy to report one data field: m_t reporting intervals."""
    return m_t * expected_energy_ri(cfg, n_s, m_s, timing, ep)

"""Slot-accurate simulation of superframe contention and reporting campaigns.

The per-slot protocol logic lives in the compiled kernel ``_simcore``; this
module wraps it into traces, reporting-interval runs, chain-level statistics
used to cross-check the analytics, and rolling multi-interval campaigns that
feed the compressed-sensing codec.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _simcore as core
from .cscodec import ReconstructionConfig, SamplingPlan, WaveletBasis, mse, observe, reconstruct
from .macmodel import EnergyParams, MacConfig, MacTiming

EVENT_NAMES = {core.EV_SUCC: "success", core.EV_COLL: "collision",
               core.EV_CCAS: "cca_failure", core.EV_DEFER: "deference"}


@dataclass(frozen=True)
class ProtocolOptions:
    """Behaviours the protocol description leaves open.

    retry: collided and CCA-failed nodes start a fresh frame in the same
        interval (they stay contenders until they succeed).
    reset_on_defer: a deferred node restarts at backoff stage 0 in the next
        superframe instead of keeping its stage.
    """

    retry: bool = True
    reset_on_defer: bool = False


def _timing_args(timing: MacTiming):
    return (timing.t_p, timing.t_ack, timing.l_ack, timing.t_ack_ti, timing.w0, timing.nb)


def _energy_args(ep: EnergyParams):
    return (ep.e_idle, ep.e_sens, ep.e_tx, ep.e_rx)


@dataclass
class SfTrace:
    """One superframe of one reporting interval."""

    sf_index: int
    sf_len: int
    contenders: int
    n_succ: int
    n_coll: int
    n_ccas: int
    n_defer: int
    channel: np.ndarray  # per-slot occupancy code, 0 idle / 1 data / 2 ack
    events: list = field(default_factory=list)  # (slot, node, event name)

    @property
    def n_frames(self) -> int:
        return self.n_succ + self.n_coll + self.n_ccas + self.n_defer


@dataclass
class RiResult:
    n_succ: int
    delay: int
    traces: list
    node_energy: np.ndarray
    success_sf: np.ndarray  # superframe of first success, -1 none, -2 idle node
    participants: np.ndarray


def _run(participate, sf_lens, timing, ep, opts, saturated=False, record=True):
    n = participate.shape[0]
    k = len(sf_lens)
    counters = np.zeros(core.N_COUNTERS, np.int64)
    sf_table = np.zeros((k, core.N_SF_COLS), np.int64)
    frames = np.zeros((4, 3))
    energy = np.zeros(n)
    succ_sf = np.zeros(n, np.int64)
    cap = 16 * (n + 1) * k * 8 if record else 0
    events = np.zeros((cap, 4), np.int64)
    channel = np.zeros(int(np.sum(sf_lens)) if record else 0, np.int8)
    n_ev = core.run_interval(
        participate, np.asarray(sf_lens, np.int64), *_timing_args(timing),
        saturated, opts.retry, opts.reset_on_defer, *_energy_args(ep),
        counters, sf_table, frames, energy, succ_sf, events, channel,
    )
    if record and n_ev > cap:  # rerun with room for every event; same seed path not needed
        raise RuntimeError("event buffer overflow")
    return counters, sf_table, frames, energy, succ_sf, events[: min(n_ev, cap)], channel


def _traces(sf_lens, sf_table, events, channel):
    out = []
    start = 0
    for i, length in enumerate(sf_lens):
        ev = [(int(s), int(nd), EVENT_NAMES[int(c)]) for s, sf, nd, c in events if sf == i]
        row = sf_table[i]
        out.append(SfTrace(
            sf_index=i, sf_len=int(length), contenders=int(row[core.S_CONTENDERS]),
            n_succ=int(row[core.S_SUCC]), n_coll=int(row[core.S_COLL]),
            n_ccas=int(row[core.S_CCAS]), n_defer=int(row[core.S_DEFER]),
            channel=channel[start:start + length].copy() if channel.size else channel,
            events=ev,
        ))
        start += length
    return out


def run_sf(h: int, sf_len: int, timing: MacTiming | None = None, seed: int = 0,
           ep: EnergyParams | None = None, opts: ProtocolOptions | None = None) -> SfTrace:
    """Simulate ``h`` contenders in a single superframe."""
    timing = timing or MacTiming()
    core.seed_rng(seed)
    res = _run(np.ones(h, np.bool_), [sf_len], timing, ep or EnergyParams(), opts or ProtocolOptions())
    _, sf_table, _, energy, _, events, channel = res
    tr = _traces([sf_len], sf_table, events, channel)[0]
    tr.node_energy = energy
    return tr


def run_ri(n_s: int, cfg: MacConfig, timing: MacTiming | None = None, seed: int = 0,
           ep: EnergyParams | None = None, opts: ProtocolOptions | None = None) -> RiResult:
    """One reporting interval: Bernoulli(p_s) participation, then K_tau
    superframes in which successful nodes leave the contention."""
    timing = timing or MacTiming()
    rng = np.random.default_rng(seed)
    participate = rng.random(n_s) < cfg.p_s
    core.seed_rng(int(rng.integers(2**31)))
    sf_lens = cfg.sf_lengths(timing)
    _, sf_table, _, energy, succ_sf, events, channel = _run(
        participate, sf_lens, timing, ep or EnergyParams(), opts or ProtocolOptions())
    traces = _traces(sf_lens, sf_table, events, channel)
    return RiResult(
        n_succ=int(sf_table[:, core.S_SUCC].sum()),
        delay=int(sum(sf_lens)),
        traces=traces,
        node_energy=energy,
        success_sf=succ_sf,
        participants=participate,
    )


def ri_success_counts(n_s: int, cfg: MacConfig, n_ri: int, timing: MacTiming | None = None,
                      seed: int = 0, ep: EnergyParams | None = None,
                      opts: ProtocolOptions | None = None):
    """Success counts and total energy of ``n_ri`` independent intervals."""
    timing = timing or MacTiming()
    ep = ep or EnergyParams()
    opts = opts or ProtocolOptions()
    return core.batch_ri_successes(
        n_s, float(cfg.p_s), np.asarray(cfg.sf_lengths(timing), np.int64), n_ri, seed,
        *_timing_args(timing), opts.retry, opts.reset_on_defer, *_energy_args(ep),
    )


def empirical_prob_sufficient(n_s, m_s, cfg, n_ri=10_000, timing=None, seed=0, opts=None) -> float:
    counts, _ = ri_success_counts(n_s, cfg, n_ri, timing, seed, opts=opts)
    return float(np.mean(counts >= m_s))


@dataclass
class SfStatistics:
    """Chain-level frequencies measured over many superframes."""

    alpha: float
    beta: float
    phi: float
    p_succ: float
    p_coll: float
    p_ccas: float
    p_d: float
    t_bar: float
    sigma2: float
    energy_per_node_slot: float
    n_frames: int


def sf_statistics(h: int, sf_len: int, n_sf: int, timing: MacTiming | None = None,
                  seed: int = 0, ep: EnergyParams | None = None,
                  saturated: bool = True, opts: ProtocolOptions | None = None) -> SfStatistics:
    """Measure the quantities the Markov chain predicts.

    In saturated mode a node that finishes a frame (any outcome) immediately
    starts a new one, which is the regime the chain describes: ``h`` nodes
    contending throughout the superframe.
    """
    timing = timing or MacTiming()
    ep = ep or EnergyParams()
    opts = opts or ProtocolOptions()
    counters, _, frames, e_tot = core.batch_sf_stats(
        h, sf_len, n_sf, seed, *_timing_args(timing), saturated, opts.retry,
        opts.reset_on_defer, *_energy_args(ep),
    )
    n_fr = frames[:, 0].sum()
    p = frames[:, 0] / n_fr
    mean = frames[:, 1].sum() / n_fr
    var = frames[:, 2].sum() / n_fr - mean * mean
    return SfStatistics(
        alpha=float(counters[core.C_CCA1_BUSY] / max(counters[core.C_CCA1], 1)),
        beta=float(counters[core.C_CCA2_BUSY] / max(counters[core.C_CCA2], 1)),
        phi=float(counters[core.C_CCA1] / max(counters[core.C_CONTEND_SLOTS], 1)),
        p_succ=float(p[core.EV_SUCC]), p_coll=float(p[core.EV_COLL]),
        p_ccas=float(p[core.EV_CCAS]), p_d=float(p[core.EV_DEFER]),
        t_bar=float(mean), sigma2=float(var),
        energy_per_node_slot=float(e_tot / (h * sf_len * n_sf)),
        n_frames=int(n_fr),
    )


def measure_energy(node_energy) -> tuple[np.ndarray, float]:
    """Per-node and aggregate energy (uJ) of a run."""
    e = np.asarray(node_energy, float)
    return e, float(e.sum())


def write_events_csv(path, traces) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sf", "slot", "node", "event"])
        for tr in traces:
            for slot, node, name in tr.events:
                w.writerow([tr.sf_index, slot, node, name])


@dataclass
class CampaignResult:
    """Rolling reporting campaign over a field of n_S x T intervals."""

    n_t: int
    m_s: int
    m_t: int
    requested: np.ndarray  # requested interval indices, ascending
    n_succ: np.ndarray  # successes per requested interval
    delays: np.ndarray  # slots used per requested interval
    energy: np.ndarray  # uJ per requested interval, all nodes
    delivered: np.ndarray  # (n_S, T) bool, samples that reached the centre
    windows: list  # (last interval, requested intervals in window, MSE or nan)

    @property
    def deficient(self) -> np.ndarray:
        """Requested intervals that delivered fewer than m_S reports."""
        return self.requested[self.n_succ < self.m_s]

    @property
    def frac_sufficient(self) -> float:
        return float(np.mean(self.n_succ >= self.m_s)) if self.n_succ.size else 1.0

    @property
    def mse(self) -> np.ndarray:
        return np.array([w[2] for w in self.windows], float)


def run_campaign(field, m_s: int, m_t: int, cfg: MacConfig, timing: MacTiming | None = None,
                 seed: int = 0, n_t: int | None = None, ep: EnergyParams | None = None,
                 opts: ProtocolOptions | None = None, basis: str = "haar",
                 recon: ReconstructionConfig | None = None, recon_stride: int | None = None,
                 reconstruct_windows: bool = True) -> CampaignResult:
    """Request blocks so every n_T-interval window holds at least m_T of them.

    The first window gets m_T random intervals; afterwards the newest
    interval is requested whenever the sliding window would drop below m_T.
    Each request runs one reporting interval; the reports that arrive are
    the field samples available to the reconstruction. Windows ending every
    ``recon_stride`` intervals (default n_T) are reconstructed from their
    delivered samples.
    """
    timing = timing or MacTiming()
    ep = ep or EnergyParams()
    z = np.asarray(getattr(field, "values", field), float)
    n_s, total = z.shape
    n_t = n_t or total
    if not (0 <= m_s <= n_s and 1 <= m_t <= n_t <= total):
        raise ValueError("need m_s <= n_s and 1 <= m_t <= n_t <= field length")
    rng = np.random.default_rng(seed)
    req = set(int(i) for i in rng.choice(n_t, m_t, replace=False))
    for t in range(n_t, total):
        if sum(1 for i in req if i > t - n_t) < m_t:
            req.add(t)
    requested = np.array(sorted(req), np.int64)

    delivered = np.zeros((n_s, total), bool)
    n_succ = np.zeros(requested.size, np.int64)
    delays = np.zeros(requested.size, np.int64)
    energy = np.zeros(requested.size)
    for j, t in enumerate(requested):
        ri = run_ri(n_s, cfg, timing, int(rng.integers(2**31)), ep, opts)
        got = ri.success_sf >= 0
        delivered[got, t] = True
        n_succ[j], delays[j], energy[j] = ri.n_succ, ri.delay, ri.node_energy.sum()

    windows = []
    stride = recon_stride or n_t
    recon = recon or ReconstructionConfig(max_iterations=100, tol=1e-7)
    bs, bt = WaveletBasis(n_s, basis), WaveletBasis(n_t, basis)
    for end in range(n_t - 1, total, stride):
        lo = end - n_t + 1
        in_win = requested[(requested >= lo) & (requested <= end)]
        err = np.nan
        if reconstruct_windows:
            zw = z[:, lo:end + 1]
            plan = SamplingPlan.from_mask(delivered[:, lo:end + 1])
            err = mse(zw, reconstruct(observe(zw, plan), plan, bs, bt, recon).z_hat)
        windows.append((int(end), in_win, float(err)))
    return CampaignResult(n_t, m_s, m_t, requested, n_succ, delays, energy, delivered, windows)

"""Empirical sample-count calibration for the 2-D codec.

For each number of samples M, estimate the probability that reconstruction
from M randomly chosen field entries meets the MSE target. Three layouts:
space-1D (m_S nodes, every interval), time-1D (every node, m_T intervals)
and 2D (m_S nodes x m_T intervals along a fixed ratio).
"""
from __future__ import annotations

import csv
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cscodec import ReconstructionConfig, SamplingPlan, WaveletBasis, mse, observe, reconstruct
from .griddata import gen_field

log = logging.getLogger(__name__)

MODES = ("space", "time", "2d")


@dataclass
class CalibrationSpec:
    n_s: int
    n_t: int
    target_mse: float = 0.05
    target_success: float = 0.95
    trials: int = 1000
    grid: list | None = None
    seed: int = 0
    basis: str = "haar"
    recon: ReconstructionConfig = field(default_factory=lambda: ReconstructionConfig(max_iterations=100, tol=1e-7))

    def __post_init__(self):
        if self.target_mse <= 0:
            raise ValueError("target_mse must be positive")
        if not 0 < self.target_success < 1:
            raise ValueError("target_success must lie in (0, 1)")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.trials < 20:
            log.warning("only %d trials: success rates will have wide variance", self.trials)


@dataclass
class SuccessCurve:
    mode: str
    points: list  # [(M, rate)]

    def __post_init__(self):
        ms = [m for m, _ in self.points]
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("M values must be strictly increasing")
        if any(not 0 <= r <= 1 for _, r in self.points):
            raise ValueError("rates must lie in [0, 1]")


def realistic_source(n_s: int, n_t: int) -> Callable[[int], np.ndarray]:
    """Fresh synthetic injected-power field per seed, random start in the day."""

    def source(seed: int) -> np.ndarray:
        start = int(np.random.default_rng(seed).integers(288))
        return gen_field(n_s, n_t, seed=seed, start=start).values

    return source


def _memo(source, spec):
    """Cache fields per seed: every layout point reuses the same trial fields."""
    if getattr(source, "cache_info", None):
        return source
    return functools.lru_cache(maxsize=spec.trials)(source)


def dims_for(mode: str, m_total: int, n_s: int, n_t: int, ratio: float = 1.0) -> tuple[int, int]:
    """(m_S, m_T) realising about ``m_total`` samples in the given layout."""
    if m_total <= 0:
        return 0, 0
    if mode == "space":
        return min(n_s, math.ceil(m_total / n_t)), n_t
    if mode == "time":
        return n_s, min(n_t, math.ceil(m_total / n_s))
    if mode == "2d":
        m_s = min(n_s, max(1, round(math.sqrt(m_total * ratio))))
        return m_s, min(n_t, math.ceil(m_total / m_s))
    raise ValueError(f"unknown mode {mode!r}")


def _bases(mode, n_s, n_t, kind):
    bs = WaveletBasis(n_s, kind if mode != "time" else "identity")
    bt = WaveletBasis(n_t, kind if mode != "space" else "identity")
    return bs, bt


def trial_success(z: np.ndarray, mode: str, m_s: int, m_t: int, seed: int, spec: CalibrationSpec) -> bool:
    """One reconstruction from a random subset; True if the MSE target is met."""
    n_s, n_t = z.shape
    if m_s == 0 or m_t == 0:
        return False
    plan = SamplingPlan.random_subset(n_s, n_t, m_s, m_t, seed)
    bs, bt = _bases(mode, n_s, n_t, spec.basis)
    res = reconstruct(observe(z, plan), plan, bs, bt, spec.recon)
    return mse(z, res.z_hat) <= spec.target_mse


def default_grid(mode: str, n_s: int, n_t: int, ratio: float = 1.0, points: int = 32) -> list[int]:
    n = n_s * n_t
    if mode == "space":
        return sorted({n_t * max(1, round(k)) for k in np.linspace(1, n_s, points)})
    if mode == "time":
        return sorted({n_s * max(1, round(k)) for k in np.linspace(1, n_t, points)})
    return sorted({int(round(m)) for m in np.geomspace(max(4, n // 64), n, points)})


def _rate(spec, mode, dims, source, stop_fail=None):
    """Success rate at one layout; stops once failures exceed ``stop_fail``.

    An early stop returns the best rate still attainable, which is below the
    target that set ``stop_fail``.
    """
    wins = fails = 0
    for k in range(spec.trials):
        s = spec.seed + 7919 * k
        z = source(s)
        if z.shape != (spec.n_s, spec.n_t):
            raise ValueError(f"source produced {z.shape}, expected {(spec.n_s, spec.n_t)}")
        if trial_success(z, mode, dims[0], dims[1], s + 1, spec):
            wins += 1
        else:
            fails += 1
            if stop_fail is not None and fails > stop_fail:
                return (spec.trials - fails) / spec.trials
    return wins / spec.trials


def _layouts(mode, grid, spec, ratio):
    out = []
    for m_total in grid:
        dims = dims_for(mode, m_total, spec.n_s, spec.n_t, ratio)
        if not out or dims != out[-1]:
            out.append(dims)
    return out


def success_curve(spec: CalibrationSpec, mode: str, source: Callable[[int], np.ndarray] | None = None,
                  grid=None, ratio: float = 1.0, stop_at: float | None = None) -> SuccessCurve:
    """Success rate at each grid M over ``spec.trials`` fresh fields and subsets.

    With ``stop_at`` the sweep ends at the first point reaching that rate.
    """
    source = _memo(source or realistic_source(spec.n_s, spec.n_t), spec)
    grid = grid or spec.grid or default_grid(mode, spec.n_s, spec.n_t, ratio)
    if not grid:
        raise ValueError("empty grid")
    pts = []
    for dims in _layouts(mode, grid, spec, ratio):
        rate = 0.0 if 0 in dims else _rate(spec, mode, dims, source)
        pts.append((dims[0] * dims[1], rate))
        log.info("%s M=%d (%d x %d): %.3f", mode, dims[0] * dims[1], dims[0], dims[1], rate)
        if stop_at is not None and rate >= stop_at:
            break
    return SuccessCurve(mode, pts)


def bisect_curve(spec: CalibrationSpec, mode: str, source=None, grid=None, ratio: float = 1.0) -> SuccessCurve:
    """Locate the target crossing by bisection over the grid.

    Assumes the rate grows with M. A point is abandoned as soon as it has
    too many failures to reach ``spec.target_success``, so only points at or
    above the target cost the full number of trials. The returned curve holds
    the evaluated points only.
    """
    source = _memo(source or realistic_source(spec.n_s, spec.n_t), spec)
    grid = grid or spec.grid or default_grid(mode, spec.n_s, spec.n_t, ratio)
    lays = _layouts(mode, grid, spec, ratio)
    stop_fail = math.floor((1 - spec.target_success) * spec.trials + 1e-9)
    seen = {}

    def ok(i):
        dims = lays[i]
        rate = 0.0 if 0 in dims else _rate(spec, mode, dims, source, stop_fail)
        seen[dims[0] * dims[1]] = rate
        log.info("%s M=%d (%d x %d): %.3f", mode, dims[0] * dims[1], dims[0], dims[1], rate)
        return rate >= spec.target_success

    lo, hi = -1, len(lays) - 1
    if not ok(hi):
        return SuccessCurve(mode, sorted(seen.items()))
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return SuccessCurve(mode, sorted(seen.items()))


def threshold(curve: SuccessCurve, target_success: float) -> int:
    """Smallest grid M whose success rate reaches the target."""
    for m, r in curve.points:
        if r >= target_success:
            return m
    best = max((r for _, r in curve.points), default=0.0)
    raise ValueError(f"target {target_success} never reached (max rate {best:.3f})")


def split(n_s: int, n_t: int, m_s_thresh: int, m_t_thresh: int, m_thresh: int, search: int = 3) -> tuple[int, int]:
    """(m_S, m_T) with m_S m_T >= M_thresh near m_S/m_T = (n_S/n_T)(M_S/M_T).

    Candidates are m_S within +-search of the exact ratio point with m_T the
    smallest count that covers M_thresh; the smallest product wins, then the
    ratio closest to the target.
    """
    if min(n_s, n_t, m_s_thresh, m_t_thresh, m_thresh) <= 0:
        raise ValueError("all inputs must be positive")
    if m_thresh > n_s * n_t:
        raise ValueError("M_thresh exceeds the field size")
    ratio = (n_s / n_t) * (m_s_thresh / m_t_thresh)
    centre = round(math.sqrt(m_thresh * ratio))
    best = None
    for m_s in range(centre - search, centre + search + 1):
        if not 1 <= m_s <= n_s:
            continue
        m_t = math.ceil(m_thresh / m_s)
        if m_t > n_t:
            continue
        key = (m_s * m_t, abs(m_s / m_t - ratio))
        if best is None or key < best[0]:
            best = (key, (m_s, m_t))
    if best is None:
        # ratio pushes outside the field; fall back to the widest feasible m_S
        m_s = n_s
        return m_s, math.ceil(m_thresh / m_s)
    return best[1]


@dataclass
class CalibrationResult:
    m_s_thresh: int
    m_t_thresh: int
    m_thresh: int
    m_s: int
    m_t: int
    curves: dict


def calibrate_full(spec: CalibrationSpec, source=None, search: str = "bisect") -> CalibrationResult:
    """1-D thresholds, the 2-D threshold along their ratio, and the split.

    search "bisect" uses :func:`bisect_curve`; "scan" evaluates the grid in
    order up to the first crossing.
    """
    source = _memo(source or realistic_source(spec.n_s, spec.n_t), spec)

    def curve(mode, ratio=1.0):
        if search == "bisect":
            return bisect_curve(spec, mode, source, ratio=ratio)
        return success_curve(spec, mode, source, ratio=ratio, stop_at=spec.target_success)

    c_s, c_t = curve("space"), curve("time")
    m_s_th, m_t_th = threshold(c_s, spec.target_success), threshold(c_t, spec.target_success)
    ratio = (spec.n_s / spec.n_t) * (m_s_th / m_t_th)
    c_2 = curve("2d", ratio)
    m_th = threshold(c_2, spec.target_success)
    m_s, m_t = split(spec.n_s, spec.n_t, m_s_th, m_t_th, m_th)
    return CalibrationResult(m_s_th, m_t_th, m_th, m_s, m_t, {"space": c_s, "time": c_t, "2d": c_2})


def write_curves_csv(path, curves: dict, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(["mode", "M", "success_rate"])
        for mode, c in curves.items():
            for m, r in c.points:
                w.writerow([mode, m, r])

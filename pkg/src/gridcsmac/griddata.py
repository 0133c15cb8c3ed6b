"""Synthetic injected-power fields and the time-series models behind them.

A series is a deterministic daily harmonic trend plus an AR(1) term whose
coefficient varies with the 5-minute interval of the day. Wind speeds follow
the same model with spatially correlated innovations and are mapped to power
through a turbine curve. Injected power at a node is generation minus load.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

PERIOD = 288  # 5-minute intervals per day


@dataclass(frozen=True)
class HarmonicModel:
    """chi0 + sum_i chi_re_i sin(2 pi k_i t / period) + chi_im_i cos(...)."""

    chi0: float = 0.0
    harmonics: tuple = ()  # ((k, chi_re, chi_im), ...)
    period: int = PERIOD

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        object.__setattr__(self, "harmonics", tuple(tuple(h) for h in self.harmonics))
        for k, _, _ in self.harmonics:
            if not 1 <= k <= self.period // 2:
                raise ValueError(f"harmonic index {k} outside [1, {self.period // 2}]")

    @property
    def m_h(self) -> int:
        return len(self.harmonics)

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, float)
        out = np.full(t.shape, float(self.chi0))
        for k, re, im in self.harmonics:
            w = 2 * np.pi * k * t / self.period
            out += re * np.sin(w) + im * np.cos(w)
        return out


@dataclass(frozen=True)
class Ar1Model:
    """X_{t+1} = phi_t X_t + U_t with Var U_t = noise_scale * (1 - phi_t).

    ``phi`` holds one coefficient per interval of the day (a scalar is
    broadcast). noise_scale = 1 is the unit-variance rule; 0 removes the noise.
    """

    phi: np.ndarray = field(default_factory=lambda: np.zeros(PERIOD))
    noise_scale: float = 1.0
    clipped: bool = False
    degenerate: bool = False

    def __post_init__(self):
        phi = np.atleast_1d(np.asarray(self.phi, float))
        if np.any(np.abs(phi) >= 1):
            raise ValueError("AR(1) coefficients must satisfy |phi| < 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        object.__setattr__(self, "phi", phi)

    def coef(self, t) -> np.ndarray:
        return self.phi[np.asarray(t) % self.phi.size]

    def noise_std(self, t) -> np.ndarray:
        return np.sqrt(self.noise_scale * (1 - self.coef(t)))


@dataclass(frozen=True)
class WindTurbineCurve:
    """Piecewise power curve; the ramp is the quadratic through (v_ci, 0),
    ((v_ci + v_r)/2, P_r/4) and (v_r, P_r)."""

    v_ci: float = 3.0
    v_r: float = 12.0
    v_co: float = 25.0
    p_r: float = 1.0

    def __post_init__(self):
        if not 0 < self.v_ci < self.v_r < self.v_co:
            raise ValueError("need 0 < v_ci < v_r < v_co")
        if self.p_r <= 0:
            raise ValueError("rated power must be positive")

    @property
    def coefficients(self) -> tuple[float, float, float]:
        """(A, B, C) with ramp power A + B v + C v^2."""
        xs = np.array([self.v_ci, (self.v_ci + self.v_r) / 2, self.v_r])
        ys = np.array([0.0, self.p_r / 4, self.p_r])
        a, b, c = np.linalg.solve(np.vander(xs, 3, increasing=True), ys)
        return float(a), float(b), float(c)


def wind_power(v, curve: WindTurbineCurve):
    """Turbine output (kW) for wind speed ``v`` (m/s); scalar or array."""
    v_arr = np.asarray(v, float)
    if np.any(v_arr < 0):
        raise ValueError("wind speed must be non-negative")
    a, b, c = curve.coefficients
    ramp = a + b * v_arr + c * v_arr**2
    out = np.where(v_arr <= curve.v_ci, 0.0,
                   np.where(v_arr <= curve.v_r, ramp,
                            np.where(v_arr <= curve.v_co, curve.p_r, 0.0)))
    return float(out) if np.ndim(v) == 0 else out


@dataclass(frozen=True)
class SpatialCorrelation:
    """rho_ij = exp(-d_ij / d_scale) for pairwise distances in km."""

    distances: np.ndarray
    d_scale: float = 20.0

    def __post_init__(self):
        d = np.asarray(self.distances, float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("distances must be a square matrix")
        if not np.allclose(d, d.T) or np.any(np.diag(d) != 0):
            raise ValueError("distances must be symmetric with zero diagonal")
        if self.d_scale <= 0:
            raise ValueError("d_scale must be positive")
        object.__setattr__(self, "distances", d)

    @classmethod
    def random(cls, n: int, seed: int = 0, max_km: float = 1.0, d_scale: float = 20.0):
        """Distances in (0, max_km] between nodes placed uniformly in a disc of
        diameter ``max_km``.

        Drawing each d_ij independently would generally give an indefinite
        correlation matrix; Euclidean distances keep exp(-d/d_scale) positive
        definite.
        """
        rng = np.random.default_rng(seed)
        r = 0.5 * max_km * np.sqrt(rng.random(n))
        a = 2 * np.pi * rng.random(n)
        pts = np.column_stack([r * np.cos(a), r * np.sin(a)])
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        return cls(d, d_scale)

    def matrix(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(-self.distances / self.d_scale)

    def factor(self) -> np.ndarray:
        """Symmetric square root of the correlation matrix (PSD checked)."""
        rho = self.matrix()
        if np.array_equal(rho, np.eye(rho.shape[0])):
            return rho
        w, v = np.linalg.eigh(rho)
        if w[0] < -1e-10:
            raise ValueError(f"correlation matrix not PSD: eigenvalue {w[0]:.3e}")
        return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


@dataclass
class DataField:
    values: np.ndarray  # n_S x n_T, kW
    ri_minutes: float = 5.0
    generation_nodes: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.ndim != 2 or not np.all(np.isfinite(self.values)):
            raise ValueError("field must be a finite 2-D matrix")

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh)
            w.writerow([f"t{j}" for j in range(self.values.shape[1])])
            for row in self.values:
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "DataField":
        rows = [ln for ln in open(path) if not ln.startswith("#")]
        return cls(np.loadtxt(rows[1:], delimiter=",", ndmin=2))


def _ar1_path(ar: Ar1Model, innovations: np.ndarray, start: int = 0) -> np.ndarray:
    """Run the AR(1) recursion over unit innovations of shape (..., length)."""
    length = innovations.shape[-1]
    t = np.arange(start, start + length)
    coef = ar.coef(t)
    std = ar.noise_std(t)
    x = np.empty_like(innovations)
    # stationary start for the first interval's coefficient
    x[..., 0] = innovations[..., 0] * np.sqrt(ar.noise_scale / (1 + coef[0]))
    for i in range(1, length):
        x[..., i] = coef[i - 1] * x[..., i - 1] + std[i - 1] * innovations[..., i]
    return x


def gen_series(h: HarmonicModel, a: Ar1Model, length: int, seed: int = 0, start: int = 0) -> np.ndarray:
    """Harmonic trend plus AR(1) noise, ``length`` samples from index ``start``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    z = np.random.default_rng(seed).standard_normal(length)
    t = np.arange(start, start + length)
    return h.evaluate(t) + _ar1_path(a, z, start)


def correlate_nodes(innovations: np.ndarray, corr: SpatialCorrelation) -> np.ndarray:
    """Mix independent per-node innovations so rows correlate as rho_ij."""
    innovations = np.asarray(innovations, float)
    if innovations.shape[0] != corr.distances.shape[0]:
        raise ValueError("innovation rows must match the number of nodes")
    return corr.factor() @ innovations


def default_load_model() -> tuple[HarmonicModel, Ar1Model]:
    """Daily residential-like load in kW."""
    return (
        HarmonicModel(1.0, ((1, -0.3, -0.25), (2, 0.1, -0.08), (3, 0.04, 0.03))),
        Ar1Model(np.full(PERIOD, 0.9), noise_scale=0.01),
    )


def default_wind_model() -> tuple[HarmonicModel, Ar1Model]:
    """Wind speed in m/s with a mild diurnal cycle."""
    return (
        HarmonicModel(8.0, ((1, 1.5, -1.0),)),
        Ar1Model(np.full(PERIOD, 0.95), noise_scale=7.8),
    )


def _per_node(models, n):
    if isinstance(models, tuple) and len(models) == 2 and isinstance(models[0], HarmonicModel):
        return [models] * n
    models = list(models)
    if len(models) != n:
        raise ValueError(f"expected {n} models, got {len(models)}")
    return models


def gen_field(
    n_s: int,
    n_t: int,
    load_models=None,
    wind_models=None,
    curve: WindTurbineCurve | None = None,
    corr: SpatialCorrelation | None = None,
    wind_fraction: float = 0.5,
    seed: int = 0,
    start: int = 0,
    layout: str = "block",
) -> DataField:
    """Injected power S = S_g - S_l for ``n_s`` nodes over ``n_t`` intervals.

    round(wind_fraction * n_s) nodes carry generation: a contiguous block of
    node indices for layout "block" (nodes numbered along the feeder, with
    generation clustered), or a seeded random subset for "random". Their wind
    innovations share the spatial correlation.
    """
    if layout not in ("block", "random"):
        raise ValueError(f"unknown layout {layout!r}")
    if not 0 <= wind_fraction <= 1:
        raise ValueError("wind_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    loads = _per_node(load_models or default_load_model(), n_s)
    t = np.arange(start, start + n_t)
    load = np.empty((n_s, n_t))
    z_load = rng.standard_normal((n_s, n_t))
    if all(m is loads[0] for m in loads):
        hm, ar = loads[0]
        load[:] = hm.evaluate(t) + _ar1_path(ar, z_load, start)
    else:
        for i, (hm, ar) in enumerate(loads):
            load[i] = hm.evaluate(t) + _ar1_path(ar, z_load[i], start)

    n_g = int(round(wind_fraction * n_s))
    perm = rng.permutation(n_s)
    gen_nodes = np.arange(n_g) if layout == "block" else np.sort(perm[:n_g])
    gen = np.zeros((n_s, n_t))
    if n_g:
        winds = _per_node(wind_models or default_wind_model(), n_s)
        curve = curve or WindTurbineCurve()
        if corr is None:
            corr = SpatialCorrelation.random(n_s, seed=int(rng.integers(2**31)))
        sub = SpatialCorrelation(corr.distances[np.ix_(gen_nodes, gen_nodes)], corr.d_scale)
        z = correlate_nodes(rng.standard_normal((n_g, n_t)), sub)
        if all(m is winds[0] for m in winds):
            hm, ar = winds[0]
            v = hm.evaluate(t) + _ar1_path(ar, z, start)
            gen[gen_nodes] = wind_power(np.clip(v, 0, None), curve)
        else:
            for r, i in enumerate(gen_nodes):
                hm, ar = winds[i]
                v = hm.evaluate(t) + _ar1_path(ar, z[r], start)
                gen[i] = wind_power(np.clip(v, 0, None), curve)
    mask = np.zeros(n_s, bool)
    mask[gen_nodes] = True
    return DataField(gen - load, generation_nodes=mask)


# -- fitting ---------------------------------------------------------------


def _design(t, ks, period):
    cols = [np.ones_like(t, dtype=float)]
    for k in ks:
        w = 2 * np.pi * k * t / period
        cols += [np.sin(w), np.cos(w)]
    return np.column_stack(cols)


def fit_harmonics(series, max_harmonics: int = 5, period: int = PERIOD, start: int = 0) -> HarmonicModel:
    """OLS harmonic trend with the number of harmonics chosen by BIC.

    Candidate frequencies are ranked by how much variance each explains on its
    own; models with the top 0..max_harmonics of them are compared by BIC.
    """
    x = np.asarray(series, float)
    n = x.size
    if n < period:
        raise ValueError("series shorter than one period")
    t = np.arange(start, start + n, dtype=float)
    xc = x - x.mean()
    gains = []
    for k in range(1, period // 2 + 1):
        d = _design(t, [k], period)[:, 1:]
        coef, *_ = np.linalg.lstsq(d, xc, rcond=None)
        gains.append((float(np.sum((d @ coef) ** 2)), k))
    ranked = [k for _, k in sorted(gains, key=lambda g: (-g[0], g[1]))]
    floor = 1e-12 * float(np.mean(x * x)) + 1e-300
    best = None
    for m in range(0, max_harmonics + 1):
        ks = sorted(ranked[:m])
        d = _design(t, ks, period)
        coef, *_ = np.linalg.lstsq(d, x, rcond=None)
        rss = float(np.sum((x - d @ coef) ** 2))
        bic = n * np.log(max(rss / n, floor)) + (2 * m + 1) * np.log(n)
        if best is None or bic < best[0] - 1e-9:
            best = (bic, ks, coef)
    _, ks, coef = best
    harm = tuple((k, float(coef[1 + 2 * i]), float(coef[2 + 2 * i])) for i, k in enumerate(ks))
    return HarmonicModel(float(coef[0]), harm, period)


def fit_ar1(residual, period: int = PERIOD, start: int = 0, noise_scale: float = 1.0) -> Ar1Model:
    """Per-interval OLS slope of x_{t+1} on x_t.

    Coefficients outside (-1, 1) are clipped (``clipped`` flag); a group with
    no variation gives phi = 0 (``degenerate`` flag).
    """
    x = np.asarray(residual, float)
    if x.size < 2:
        raise ValueError("need at least two observations")
    idx = (np.arange(start, start + x.size - 1)) % period
    prev, nxt = x[:-1], x[1:]
    phi = np.zeros(period)
    clipped = degenerate = False
    lim = 1 - 1e-6
    for g in range(period):
        sel = idx == g
        if sel.sum() < 2:
            raise ValueError(f"interval {g} has fewer than two observations")
        den = float(prev[sel] @ prev[sel])
        if den <= 1e-300:
            degenerate = True
            continue
        p = float(prev[sel] @ nxt[sel]) / den
        if abs(p) >= lim:
            clipped = True
            p = float(np.clip(p, -lim, lim))
        phi[g] = p
    return Ar1Model(phi, noise_scale=noise_scale, clipped=clipped, degenerate=degenerate)

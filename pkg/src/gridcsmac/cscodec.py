"""Separable (space x time) compressed sensing of data fields.

Z (n_S x n_T) is sparse in a 2-D wavelet basis, A = Psi_S^T Z Psi_T, and is
observed as Y = Phi_S Z Phi_T^T. Vectorisation stacks rows (numpy C order),
so vec(Y) = (Phi_S kron Phi_T) vec(Z). All operators are applied in factored
form; the Kronecker product is never built.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, idct

from .griddata import DataField


def _check_pow2(n: int) -> None:
    if n < 1 or n & (n - 1):
        raise ValueError(f"dimension {n} is not a power of two")


def _haar_fwd(x: np.ndarray, axis: int) -> np.ndarray:
    x = np.moveaxis(np.array(x, float), axis, 0)
    n = x.shape[0]
    out = x.copy()
    m = n
    s = np.sqrt(0.5)
    while m > 1:
        a = out[:m]
        even, odd = a[0::2].copy(), a[1::2].copy()
        out[: m // 2] = (even + odd) * s
        out[m // 2: m] = (even - odd) * s
        m //= 2
    return np.moveaxis(out, 0, axis)


def _haar_inv(c: np.ndarray, axis: int) -> np.ndarray:
    c = np.moveaxis(np.array(c, float), axis, 0)
    n = c.shape[0]
    out = c.copy()
    m = 2
    s = np.sqrt(0.5)
    while m <= n:
        a, d = out[: m // 2].copy(), out[m // 2: m].copy()
        out[0:m:2] = (a + d) * s
        out[1:m:2] = (a - d) * s
        m *= 2
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True)
class WaveletBasis:
    """Orthonormal basis Psi (columns are atoms): x = Psi a, a = Psi^T x.

    kind "haar" uses the fast orthonormal Haar transform, "dct" the
    orthonormal DCT-II (smooth, delocalised atoms) and "identity" leaves the
    axis uncompressed.
    """

    dimension: int
    kind: str = "haar"

    def __post_init__(self):
        if self.kind not in ("haar", "dct", "identity"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        _check_pow2(self.dimension)

    def analyze(self, x, axis: int = 0) -> np.ndarray:
        if self.kind == "haar":
            return _haar_fwd(x, axis)
        if self.kind == "dct":
            return dct(np.asarray(x, float), type=2, norm="ortho", axis=axis)
        return np.array(x, float)

    def synthesize(self, a, axis: int = 0) -> np.ndarray:
        if self.kind == "haar":
            return _haar_inv(a, axis)
        if self.kind == "dct":
            return idct(np.asarray(a, float), type=2, norm="ortho", axis=axis)
        return np.array(a, float)

    @property
    def matrix(self) -> np.ndarray:
        return _basis_matrix(self.dimension, self.kind).copy()


@functools.lru_cache(maxsize=32)
def _basis_matrix(n: int, kind: str) -> np.ndarray:
    m = WaveletBasis(n, kind).synthesize(np.eye(n), axis=0)
    m.setflags(write=False)
    return m


def _values(z):
    return z.values if isinstance(z, DataField) else np.asarray(z, float)


def analyze(z, basis_s: WaveletBasis, basis_t: WaveletBasis) -> np.ndarray:
    """A = Psi_S^T Z Psi_T."""
    v = _values(z)
    if v.shape != (basis_s.dimension, basis_t.dimension):
        raise ValueError(f"field {v.shape} does not match bases "
                         f"({basis_s.dimension}, {basis_t.dimension})")
    return basis_t.analyze(basis_s.analyze(v, 0), 1)


def synthesize(a, basis_s: WaveletBasis, basis_t: WaveletBasis) -> np.ndarray:
    """Z = Psi_S A Psi_T^T."""
    a = np.asarray(a, float)
    if a.shape != (basis_s.dimension, basis_t.dimension):
        raise ValueError("coefficient shape does not match bases")
    return basis_t.synthesize(basis_s.synthesize(a, 0), 1)


@dataclass(frozen=True)
class SamplingPlan:
    """Space and time observation operators.

    In subset mode ``rows``/``cols`` index the sampled nodes and intervals.
    Dense mode holds explicit matrices with i.i.d. uniform entries. Mask mode
    samples an arbitrary set of entries (observations are a flat vector in
    row-major order), e.g. the reports that actually arrived.
    """

    n_s: int
    n_t: int
    mode: str = "subset"
    rows: tuple = ()
    cols: tuple = ()
    phi_s: np.ndarray | None = field(default=None, compare=False)
    phi_t: np.ndarray | None = field(default=None, compare=False)
    seed: int | None = None
    mask: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.mode == "subset":
            rows, cols = tuple(int(r) for r in self.rows), tuple(int(c) for c in self.cols)
            if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
                raise ValueError("subset indices must be distinct")
            if any(not 0 <= r < self.n_s for r in rows) or any(not 0 <= c < self.n_t for c in cols):
                raise ValueError("subset index out of range")
            object.__setattr__(self, "rows", rows)
            object.__setattr__(self, "cols", cols)
        elif self.mode == "dense":
            if self.phi_s is None or self.phi_t is None:
                raise ValueError("dense plan needs phi_s and phi_t")
            if self.phi_s.shape[1] != self.n_s or self.phi_t.shape[1] != self.n_t:
                raise ValueError("dense operator widths must equal n_s, n_t")
            if self.phi_s.shape[0] > self.n_s or self.phi_t.shape[0] > self.n_t:
                raise ValueError("more measurements than dimension")
        elif self.mode == "mask":
            if self.mask is None or np.shape(self.mask) != (self.n_s, self.n_t):
                raise ValueError("mask plan needs an (n_s, n_t) boolean mask")
            object.__setattr__(self, "mask", np.asarray(self.mask, bool))
        else:
            raise ValueError(f"unknown sampling mode {self.mode!r}")

    @classmethod
    def random_subset(cls, n_s, n_t, m_s, m_t, seed=0):
        if not (0 <= m_s <= n_s and 0 <= m_t <= n_t):
            raise ValueError("need m_s <= n_s and m_t <= n_t")
        rng = np.random.default_rng(seed)
        rows = np.sort(rng.choice(n_s, m_s, replace=False))
        cols = np.sort(rng.choice(n_t, m_t, replace=False))
        return cls(n_s, n_t, "subset", tuple(rows), tuple(cols), seed=seed)

    @classmethod
    def random_dense(cls, n_s, n_t, m_s, m_t, seed=0, low=0.0, high=1.0):
        rng = np.random.default_rng(seed)
        return cls(n_s, n_t, "dense", phi_s=rng.uniform(low, high, (m_s, n_s)),
                   phi_t=rng.uniform(low, high, (m_t, n_t)), seed=seed)

    @classmethod
    def from_mask(cls, mask, seed=None):
        mask = np.asarray(mask, bool)
        return cls(mask.shape[0], mask.shape[1], "mask", seed=seed, mask=mask)

    @property
    def m_s(self) -> int:
        """Sampled nodes (in mask mode: nodes with at least one sample)."""
        if self.mode == "mask":
            return int(self.mask.any(axis=1).sum())
        return len(self.rows) if self.mode == "subset" else self.phi_s.shape[0]

    @property
    def m_t(self) -> int:
        if self.mode == "mask":
            return int(self.mask.any(axis=0).sum())
        return len(self.cols) if self.mode == "subset" else self.phi_t.shape[0]

    @property
    def n_measurements(self) -> int:
        if self.mode == "mask":
            return int(self.mask.sum())
        return self.m_s * self.m_t

    @property
    def obs_shape(self) -> tuple:
        return (self.n_measurements,) if self.mode == "mask" else (self.m_s, self.m_t)

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        if self.mode == "mask":
            raise ValueError("a mask plan is not separable")
        if self.mode == "dense":
            return self.phi_s, self.phi_t
        return np.eye(self.n_s)[list(self.rows)], np.eye(self.n_t)[list(self.cols)]

    def to_dict(self) -> dict:
        d = {"n_s": self.n_s, "n_t": self.n_t, "mode": self.mode, "seed": self.seed}
        if self.mode == "subset":
            d.update(rows=list(self.rows), cols=list(self.cols))
        elif self.mode == "mask":
            d.update(entries=np.argwhere(self.mask).tolist())
        return d


def observe(z, plan: SamplingPlan) -> np.ndarray:
    """Y = Phi_S Z Phi_T^T."""
    v = _values(z)
    if v.shape != (plan.n_s, plan.n_t):
        raise ValueError(f"field {v.shape} does not match plan ({plan.n_s}, {plan.n_t})")
    if plan.mode == "subset":
        return v[np.ix_(plan.rows, plan.cols)]
    if plan.mode == "mask":
        return v[plan.mask]
    return plan.phi_s @ v @ plan.phi_t.T


def vec(m: np.ndarray) -> np.ndarray:
    """Row-stacking vectorisation used throughout."""
    return np.asarray(m).reshape(-1)


@dataclass(frozen=True)
class ReconstructionConfig:
    epsilon: float = 0.0
    max_iterations: int = 2000
    solver: str = "bpdn"  # "bpdn" (l1) or "omp"
    tol: float = 1e-10

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.solver not in ("bpdn", "omp"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass
class ReconstructionResult:
    z_hat: np.ndarray
    coeffs: np.ndarray
    residual_norm: float
    sparsity: int
    iterations: int
    converged: bool


class _Operator:
    """A -> Phi_S Psi_S A Psi_T^T Phi_T^T with orthonormal rows.

    Dense plans are whitened (Phi = L Q, Q with orthonormal rows) so the
    same orthonormal-row machinery applies; ``scale`` bounds how much the
    whitening can shrink a residual. Separable plans are applied as
    Gs A Gt^T with Gs = Q_S Psi_S and Gt = Q_T Psi_T precomputed.
    """

    def __init__(self, plan, bs, bt):
        self.plan, self.bs, self.bt = plan, bs, bt
        if plan.mode == "dense":
            self.ls, self.qs = _lq(plan.phi_s)
            self.lt, self.qt = _lq(plan.phi_t)
            self.scale = np.linalg.norm(self.ls, 2) * np.linalg.norm(self.lt, 2)
            self.gs = self.qs @ _basis_matrix(bs.dimension, bs.kind)
            self.gt = self.qt @ _basis_matrix(bt.dimension, bt.kind)
        elif plan.mode == "subset":
            self.gs = _basis_matrix(bs.dimension, bs.kind)[list(plan.rows)]
            self.gt = _basis_matrix(bt.dimension, bt.kind)[list(plan.cols)]

    def whiten(self, y):
        if self.plan.mode != "dense":
            return y
        tmp = np.linalg.solve(self.ls, y)
        return np.linalg.solve(self.lt, tmp.T).T

    def fwd(self, a):
        if self.plan.mode == "mask":
            return synthesize(a, self.bs, self.bt)[self.plan.mask]
        return self.gs @ a @ self.gt.T

    def adj(self, r):
        p = self.plan
        if p.mode == "mask":
            z = np.zeros((p.n_s, p.n_t))
            z[p.mask] = r
            return analyze(z, self.bs, self.bt)
        return self.gs.T @ r @ self.gt

    def columns(self, idx, shape):
        """Images of the unit coefficients at flat indices ``idx``."""
        if self.plan.mode == "mask":
            e = np.zeros(int(np.prod(shape)))
            out = np.empty((self.plan.n_measurements, len(idx)))
            for j, i in enumerate(idx):
                e[i] = 1.0
                out[:, j] = self.fwd(e.reshape(shape))
                e[i] = 0.0
            return out
        ii, jj = np.unravel_index(np.asarray(idx, int), shape)
        return (self.gs[:, ii][:, None, :] * self.gt[:, jj][None, :, :]).reshape(-1, len(ii))

    def raw_residual(self, a, y):
        z = synthesize(a, self.bs, self.bt)
        return float(np.linalg.norm(observe(z, self.plan) - y))


def _lq(phi):
    q, r = np.linalg.qr(phi.T)
    return r.T, q.T


def _project(x, op, yw, eps):
    """Nearest point with ||op(x) - yw|| <= eps (rows of op are orthonormal)."""
    r = op.fwd(x) - yw
    nr = np.linalg.norm(r)
    if nr <= eps:
        return x
    return x - op.adj(r * (1 - eps / nr))


def _polish(x, op, yw, eps, max_support):
    """Least-squares refit on the support of an l1 solution."""
    mag = np.abs(x).ravel()
    if mag.max() == 0:
        return x
    order = np.argsort(-mag)
    k = int(np.sum(mag > 1e-6 * mag.max()))
    if k == 0 or k > max_support:
        return x
    idx = order[:k]
    cols = op.columns(idx, x.shape)
    coef, *_ = np.linalg.lstsq(cols, yw.ravel(), rcond=None)
    out = np.zeros(x.size)
    out[idx] = coef
    out = out.reshape(x.shape)
    r = np.linalg.norm(op.fwd(out) - yw)
    return out if r <= max(eps, np.linalg.norm(op.fwd(x) - yw)) + 1e-9 else x


def _bpdn(op, yw, eps, cfg, shape):
    """Douglas-Rachford splitting for min ||a||_1 s.t. ||op(a) - y|| <= eps."""
    z = op.adj(yw)
    gamma = 0.1 * (np.abs(z).max() + 1e-300)
    x = z
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        x = _project(z, op, yw, eps)
        v = 2 * x - z
        s = np.sign(v) * np.maximum(np.abs(v) - gamma, 0.0)
        step = s - x
        z = z + step
        if np.linalg.norm(step) <= cfg.tol * max(np.linalg.norm(x), 1e-300):
            break
    x = _project(z, op, yw, eps)
    return _polish(x, op, yw, eps, max_support=min(yw.size // 2, 256)), it


def _omp(op, yw, eps, cfg, shape):
    """Orthogonal matching pursuit until the residual drops to eps."""
    m = yw.size
    r = yw.copy()
    support: list[int] = []
    cols = np.empty((m, 0))
    coef = np.zeros(0)
    n = int(np.prod(shape))
    it = 0
    limit = min(cfg.max_iterations, m)
    stop = max(eps, cfg.tol * np.linalg.norm(yw))
    while np.linalg.norm(r) > stop and it < limit:
        it += 1
        corr = np.abs(op.adj(r)).ravel()
        corr[support] = 0.0
        i = int(np.argmax(corr))
        if corr[i] <= 0:
            break
        support.append(i)
        cols = np.column_stack([cols, op.columns([i], shape)])
        coef, *_ = np.linalg.lstsq(cols, yw.ravel(), rcond=None)
        r = yw - (cols @ coef).reshape(yw.shape)
    a = np.zeros(n)
    a[support] = coef
    return a.reshape(shape), it


def reconstruct(y, plan: SamplingPlan, basis_s: WaveletBasis, basis_t: WaveletBasis,
                cfg: ReconstructionConfig | None = None) -> ReconstructionResult:
    """Sparse coefficient estimate A* consistent with Y to within epsilon."""
    cfg = cfg or ReconstructionConfig()
    y = np.asarray(y, float)
    if y.shape != plan.obs_shape:
        raise ValueError(f"observation shape {y.shape} does not match plan")
    shape = (plan.n_s, plan.n_t)
    if y.size == 0:
        a = np.zeros(shape)
        return ReconstructionResult(a, a, 0.0, 0, 0, True)
    op = _Operator(plan, basis_s, basis_t)
    yw = op.whiten(y)
    eps = cfg.epsilon if plan.mode != "dense" else cfg.epsilon / op.scale
    solver = _bpdn if cfg.solver == "bpdn" else _omp
    a, it = solver(op, yw, eps, cfg, shape)
    res = op.raw_residual(a, y)
    slack = 1e-8 * max(np.linalg.norm(y), 1.0)
    thr = 1e-8 * max(np.abs(a).max(), 1e-300)
    return ReconstructionResult(
        z_hat=synthesize(a, basis_s, basis_t),
        coeffs=a,
        residual_norm=res,
        sparsity=int(np.sum(np.abs(a) > thr)),
        iterations=it,
        converged=bool(res <= cfg.epsilon + slack),
    )


def mse(z, z_hat) -> float:
    """||Z - Z*||^2 / ||Z||^2."""
    a, b = _values(z), _values(z_hat)
    den = float(np.sum(a * a))
    if den == 0:
        raise ValueError("reference field is zero")
    return float(np.sum((a - b) ** 2)) / den


def sparse_field(n_s, n_t, k, seed=0, basis_s=None, basis_t=None, coarse=None) -> np.ndarray:
    """Field with exactly ``k`` nonzero Gaussian wavelet coefficients.

    ``coarse = (c_s, c_t)`` restricts the support to the first c_s x c_t
    coefficients, i.e. atoms spanning at least n/c samples per axis. Fine
    Haar atoms cover only two samples, so subset sampling cannot see them
    reliably; smooth fields live in the coarse block.
    """
    rng = np.random.default_rng(seed)
    basis_s = basis_s or WaveletBasis(n_s)
    basis_t = basis_t or WaveletBasis(n_t)
    c_s, c_t = coarse or (n_s, n_t)
    block = np.zeros(c_s * c_t)
    block[rng.choice(block.size, k, replace=False)] = rng.standard_normal(k)
    a = np.zeros((n_s, n_t))
    a[:c_s, :c_t] = block.reshape(c_s, c_t)
    return synthesize(a, basis_s, basis_t)

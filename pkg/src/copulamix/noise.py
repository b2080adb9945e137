"""Copulas of ``X + Z`` for a random vector ``X`` perturbed by independent noise ``Z``.

Two noise layouts are supported: independent components on the first ``s``
coordinates, and a single common shock added to the first ``s``
coordinates.  Either layout may be permuted onto other coordinates.  The
copula of the sum is evaluated on the checkerboard lattice by quadrature
over the noise, using the tabulated CDF of each perturbed margin
``X_c + Z_c``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

from .core import CopulaExpr, GridBacked, GridCopula, M, Pi, TrivariateGrid, eval_cdf
from .errors import NumericError, ParameterDomainError, SampleSizeError, SupportError

log = logging.getLogger(__name__)

TAIL_MASS = 1e-9
TABLE_POINTS = 8192
BISECTION_STEPS = 64


# ---------------------------------------------------------------------------
# one-dimensional distributions
# ---------------------------------------------------------------------------

class Distribution1D:
    """CDF, generalized (left-continuous) quantile and sampler of a real law."""

    atomic = False

    def cdf(self, x):
        raise NotImplementedError

    def quantile(self, p):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.quantile(rng.random(size))

    def support(self) -> tuple[float, float]:
        """Effective support, truncating at most ``TAIL_MASS`` in each tail."""
        raise NotImplementedError

    def shifted(self, c: float) -> "Distribution1D":
        raise NotImplementedError


@dataclass(frozen=True)
class Uniform(Distribution1D):
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ParameterDomainError(f"uniform needs lo < hi, got [{self.lo}, {self.hi}]")

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def quantile(self, p):
        return self.lo + np.asarray(p, dtype=float) * (self.hi - self.lo)

    def support(self):
        return self.lo, self.hi

    def shifted(self, c):
        return Uniform(self.lo + c, self.hi + c)


@dataclass(frozen=True)
class Normal(Distribution1D):
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ParameterDomainError(f"normal sd must be positive, got {self.sd}")

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mean) / self.sd)

    def quantile(self, p):
        return self.mean + self.sd * special.ndtri(np.asarray(p, dtype=float))

    def sample(self, rng, size):
        return rng.normal(self.mean, self.sd, size)

    def support(self):
        z = float(special.ndtri(1 - TAIL_MASS))
        return self.mean - z * self.sd, self.mean + z * self.sd

    def shifted(self, c):
        return Normal(self.mean + c, self.sd)


@dataclass(frozen=True)
class PointMass(Distribution1D):
    c: float = 0.0
    atomic = True

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= self.c).astype(float)

    def quantile(self, p):
        return np.full_like(np.asarray(p, dtype=float), self.c)

    def support(self):
        return self.c, self.c

    def shifted(self, c):
        return PointMass(self.c + c)

    def atoms(self):
        return np.array([self.c]), np.array([1.0])


@dataclass(frozen=True, eq=False)
class Empirical(Distribution1D):
    sample_values: np.ndarray
    atomic = True

    def __post_init__(self):
        vals = np.sort(np.asarray(self.sample_values, dtype=float).ravel())
        if vals.size == 0:
            raise ParameterDomainError("empirical distribution needs at least one value")
        vals.setflags(write=False)
        object.__setattr__(self, "sample_values", vals)

    def cdf(self, x):
        return np.searchsorted(self.sample_values, np.asarray(x, dtype=float), side="right") / self.sample_values.size

    def quantile(self, p):
        n = self.sample_values.size
        k = np.clip(np.ceil(np.asarray(p, dtype=float) * n).astype(int) - 1, 0, n - 1)
        return self.sample_values[k]

    def support(self):
        return float(self.sample_values[0]), float(self.sample_values[-1])

    def shifted(self, c):
        return Empirical(self.sample_values + c)

    def atoms(self):
        return self.sample_values, np.full(self.sample_values.size, 1.0 / self.sample_values.size)


@dataclass(frozen=True, eq=False)
class Convolution(Distribution1D):
    """Law of ``X + Y`` for independent ``X ~ first`` and ``Y ~ second``, tabulated."""

    first: Distribution1D
    second: Distribution1D
    grid: np.ndarray
    table: np.ndarray

    def cdf(self, x):
        return np.interp(np.asarray(x, dtype=float), self.grid, self.table, left=0.0, right=1.0)

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        lo = np.full(p.shape, self.grid[0])
        hi = np.full(p.shape, self.grid[-1])
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            up = self.cdf(mid) >= p
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        return hi

    def sample(self, rng, size):
        return self.first.sample(rng, size) + self.second.sample(rng, size)

    def support(self):
        return float(self.grid[0]), float(self.grid[-1])

    def shifted(self, c):
        return Convolution(self.first.shifted(c), self.second, self.grid + c, self.table)


def _kinks(D: Distribution1D) -> np.ndarray:
    """Points where the density of ``D`` jumps (atoms included)."""
    if isinstance(D, Uniform):
        return np.array([D.lo, D.hi], dtype=float)
    if D.atomic:
        return np.asarray(D.atoms()[0], dtype=float)
    return np.empty(0)


def sum_cdf(F: Distribution1D, G: Distribution1D, n_points: int = TABLE_POINTS) -> Distribution1D:
    """Distribution of ``X + Y`` for independent ``X ~ F``, ``Y ~ G``.

    A point mass shifts the other law exactly.  Otherwise the CDF
    ``int F(x - t) dG(t)`` is tabulated on ``n_points`` abscissae plus the
    density jumps of the summands: atomic laws contribute exact finite sums,
    continuous ones adaptive quadrature over the quantile scale
    ``t = G^{-1}(p)``.
    """
    if n_points < 2048:
        raise ParameterDomainError("the CDF table needs at least 2048 points")
    if isinstance(G, PointMass):
        return F.shifted(G.c)
    if isinstance(F, PointMass):
        return G.shifted(F.c)
    lo_f, hi_f = F.support()
    lo_g, hi_g = G.support()
    lo, hi = lo_f + lo_g, hi_f + hi_g
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise SupportError(f"cannot truncate the support of {F!r} + {G!r}")
    xs = np.linspace(lo, hi, n_points)
    kinks = (_kinks(F)[:, None] + _kinks(G)[None, :]).ravel()
    if 0 < kinks.size <= n_points:
        # table abscissae on the density jumps keep the interpolation exact there
        xs = np.union1d(xs, kinks[(kinks > lo) & (kinks < hi)])
    # sum over an atomic law exactly; otherwise integrate over G's quantile scale
    outer, inner = (F, G) if F.atomic and not G.atomic else (G, F)
    if outer.atomic:
        pts, wts = outer.atoms()
        table = np.zeros_like(xs)
        for t, w in zip(pts, wts):
            table += w * inner.cdf(xs - t)
    else:
        # the subinterval cap bounds work for kinked integrands (uniform laws),
        # whose Gauss-Kronrod error estimate is far more pessimistic than the
        # actual error
        table, err = integrate.quad_vec(lambda p: inner.cdf(xs - outer.quantile(p)), 0.0, 1.0,
                                        epsabs=1e-10, epsrel=0.0, norm="max", limit=500)
        log.debug("convolution table of %r + %r: error estimate %.2e", F, G, err)
    table = np.maximum.accumulate(np.clip(table, 0.0, 1.0))
    table[0], table[-1] = 0.0, 1.0
    return Convolution(F, G, xs, table)


# ---------------------------------------------------------------------------
# k-variate copulas used as inputs
# ---------------------------------------------------------------------------

def copula_dimension(C) -> int | None:
    """Fixed dimension of a copula input, or None for atoms valid in any dimension."""
    if isinstance(C, (Pi, M)):
        return None
    if isinstance(C, TrivariateGrid):
        return 3
    return 2


def kcdf(C, U: np.ndarray) -> np.ndarray:
    """Evaluate a k-variate copula at points ``U[..., k]``.

    ``Pi`` and ``M`` are read as the k-dimensional independence and
    comonotone copulas; other bivariate expressions need ``k = 2``; a
    ``TrivariateGrid`` is evaluated by trilinear interpolation.
    """
    k = U.shape[-1]
    if isinstance(C, Pi):
        return np.prod(U, axis=-1)
    if isinstance(C, M):
        return np.min(U, axis=-1)
    if isinstance(C, TrivariateGrid):
        if k != 3:
            raise ParameterDomainError("a trivariate grid needs three coordinates")
        return _trilinear(C, U)
    if isinstance(C, GridCopula):
        C = GridBacked(C)
    if isinstance(C, CopulaExpr):
        if k != 2:
            raise ParameterDomainError(f"{type(C).__name__} is bivariate, got k={k}")
        return eval_cdf(C, U[..., 0], U[..., 1])
    raise TypeError(f"unsupported copula {C!r}")


def _trilinear(T: TrivariateGrid, U: np.ndarray) -> np.ndarray:
    m = T.m
    s = T.cdf_corners()
    idx = np.clip(np.floor(U * m).astype(int), 0, m - 1)
    frac = U * m - idx
    out = np.zeros(U.shape[:-1])
    for corner in np.ndindex(2, 2, 2):
        w = np.ones(U.shape[:-1])
        for ax, c in enumerate(corner):
            w = w * (frac[..., ax] if c else 1 - frac[..., ax])
        out = out + w * s[idx[..., 0] + corner[0], idx[..., 1] + corner[1], idx[..., 2] + corner[2]]
    return out


def _as_grid(mass: np.ndarray):
    return GridCopula(mass) if mass.ndim == 2 else TrivariateGrid(mass)


def grid_cdf_distance(A, B) -> float:
    """Sup-norm distance between two checkerboard CDFs of equal resolution and dimension."""
    if A.mass.shape != B.mass.shape:
        raise ParameterDomainError(f"grid shapes differ: {A.mass.shape} vs {B.mass.shape}")
    ca, cb = A.mass, B.mass
    for ax in range(ca.ndim):
        ca, cb = ca.cumsum(axis=ax), cb.cumsum(axis=ax)
    return float(np.abs(ca - cb).max())


def apply_permutation(G, perm: Sequence[int]):
    """Relabel coordinates: coordinate ``i`` of the result is coordinate ``perm[i]`` of ``G``."""
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(G.mass.ndim)):
        raise ParameterDomainError(f"{perm} is not a permutation of {G.mass.ndim} coordinates")
    return _as_grid(np.transpose(G.mass, perm))


# ---------------------------------------------------------------------------
# noisy copulas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Noise layout.

    ``mode`` is ``"independent"`` (one law per perturbed coordinate) or
    ``"common"`` (one shared law).  Noise ``i`` lands on coordinate
    ``perm[i]``; the default is the first ``s`` coordinates.
    """

    mode: str
    dists: tuple
    s: int
    perm: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "dists", tuple(self.dists))
        if self.mode not in ("independent", "common"):
            raise ParameterDomainError(f"unknown noise mode {self.mode!r}")
        need = self.s if self.mode == "independent" else 1
        if self.s < 0 or (self.s > 0 and len(self.dists) != need):
            raise ParameterDomainError(f"{self.mode} noise with s={self.s} needs {need} distributions")

    def targets(self, k: int) -> list[int]:
        if self.s > k:
            raise ParameterDomainError(f"s={self.s} exceeds the dimension k={k}")
        perm = tuple(range(k)) if self.perm is None else tuple(self.perm)
        if sorted(perm) != list(range(k)):
            raise ParameterDomainError(f"{perm} is not a permutation of {k} coordinates")
        return [perm[i] for i in range(self.s)]


@dataclass(frozen=True, eq=False)
class NoisyResult:
    grid: GridCopula | TrivariateGrid
    nodes: int
    quadrature_change: float
    converged: bool
    margin_drift: float
    tail_mass: float = TAIL_MASS
    notes: tuple = field(default=())


def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1) / 2, w / 2


def _noise_nodes(G: Distribution1D, n: int) -> tuple[np.ndarray, np.ndarray]:
    if G.atomic:
        return G.atoms()
    p, w = _legendre(n)
    return G.quantile(p), w


def _ipf(mass: np.ndarray, iters: int = 1000, tol: float = 1e-15) -> np.ndarray:
    m = mass.shape[0]
    out = mass.copy()
    axes = range(out.ndim)
    for _ in range(iters):
        for ax in axes:
            others = tuple(a for a in axes if a != ax)
            marg = out.sum(axis=others, keepdims=True)
            out = np.divide(out, m * marg, out=np.zeros_like(out), where=marg > 0)
        drift = max(float(np.abs(out.sum(axis=tuple(a for a in axes if a != ax)) - 1 / m).max())
                    for ax in axes)
        if drift < tol:
            break
    return out


def _noisy(C, marginals: Sequence[Distribution1D], spec: NoiseSpec, m: int,
           nodes: int, tol: float, max_nodes: int) -> NoisyResult:
    k = len(marginals)
    if k not in (2, 3):
        raise ParameterDomainError(f"only k in (2, 3) is supported, got {k}")
    dim = copula_dimension(C)
    if dim is not None and dim != k:
        raise ParameterDomainError(f"copula has dimension {dim} but {k} marginals were given")
    if m < 1:
        raise ParameterDomainError(f"resolution must be positive, got {m}")
    targets = spec.targets(k)
    lattice = np.arange(m + 1) / m
    noise_of = {}
    if spec.mode == "independent":
        noise_of = {c: g for c, g in zip(targets, spec.dists)}
    else:
        noise_of = {c: spec.dists[0] for c in targets}
    locs = {}
    for c in targets:
        total = sum_cdf(marginals[c], noise_of[c])
        x = total.quantile(lattice)
        bad = ~np.isfinite(x[1:-1])
        if bad.any():
            raise NumericError(f"quantile inversion failed at u={lattice[1:-1][bad][0]!r}")
        locs[c] = x

    def evaluate(n: int) -> np.ndarray:
        if spec.mode == "common" and targets:
            t, w = _noise_nodes(spec.dists[0], n)
            per_coord = {c: (t, w) for c in targets}
            shared = True
        else:
            per_coord = {c: _noise_nodes(noise_of[c], n) for c in targets}
            shared = False
        args, weight_list = [], []
        for c in range(k):
            if c in per_coord:
                t, w = per_coord[c]
                a = marginals[c].cdf(locs[c][:, None] - t[None, :])
                a[0], a[-1] = 0.0, 1.0
            else:
                a, w = lattice[:, None], np.ones(1)
            args.append(a)
            weight_list.append(w)
        if shared:
            return _common_values(C, k, args, weight_list[targets[0]])
        return _product_values(C, k, args, weight_list)

    values = evaluate(nodes)
    change, n = np.inf, nodes
    atomic = all(noise_of[c].atomic for c in targets)
    if atomic or not targets:
        change = 0.0
    while change > tol and n * 2 <= max_nodes:
        n *= 2
        refined = evaluate(n)
        change = float(np.abs(refined - values).max())
        values = refined
    converged = change <= tol
    if not converged:
        log.info("noise quadrature stopped at %d nodes with lattice change %.2e", n, change)
    mass = values
    for ax in range(k):
        mass = np.diff(mass, axis=ax)
    lo = float(mass.min())
    if lo < -1e-6:
        raise NumericError(f"quadrature produced a negative cell mass {lo:.3e}")
    mass = np.maximum(mass, 0.0)
    drift = max(float(np.abs(mass.sum(axis=tuple(a for a in range(k) if a != ax)) - 1 / m).max())
                for ax in range(k))
    return NoisyResult(_as_grid(_ipf(mass)), n, change, converged, drift)


def _common_values(C, k: int, args: list[np.ndarray], w: np.ndarray) -> np.ndarray:
    # every perturbed coordinate shares the node index q
    m1 = args[0].shape[0]
    Q = w.size
    full = [np.broadcast_to(a, (m1, Q)) for a in args]
    out = np.empty((m1,) * k)
    for idx in np.ndindex(*(m1,) * (k - 1)):
        pts = np.stack(np.broadcast_arrays(*[f[i] for f, i in zip(full[:-1], idx)], full[-1]), axis=-1)
        out[idx] = kcdf(C, pts) @ w
    return out


def _product_values(C, k: int, args: list[np.ndarray], weights: list[np.ndarray]) -> np.ndarray:
    # independent nodes per coordinate: tensor quadrature
    m1 = args[0].shape[0]
    out = np.empty((m1,) * k)
    wt = weights[0]
    for w in weights[1:]:
        wt = np.multiply.outer(wt, w)
    wt = wt.ravel()
    for idx in np.ndindex(*(m1,) * (k - 1)):
        coords = [args[c][i] for c, i in zip(range(k - 1), idx)] + [args[-1]]
        # coords[:-1] are node vectors, coords[-1] is (m1, Q_last)
        grids = np.meshgrid(*coords[:-1], indexing="ij") if k > 1 else []
        lead = np.stack([g.ravel() for g in grids], axis=-1) if grids else np.empty((1, 0))
        last = coords[-1]
        n_lead = lead.shape[0]
        pts = np.empty((m1, n_lead, last.shape[1], k))
        pts[..., :k - 1] = lead[None, :, None, :]
        pts[..., k - 1] = last[:, None, :]
        vals = kcdf(C, pts).reshape(m1, -1)
        out[idx] = vals @ wt
    return out


def noisy_copula_independent(C, marginals: Sequence[Distribution1D], noises: Sequence[Distribution1D],
                             m: int, perm: Sequence[int] | None = None, *, nodes: int = 128,
                             tol: float = 1e-6, max_nodes: int | None = None,
                             details: bool = False):
    """Copula of ``X + Z`` with independent noise components on ``s = len(noises)`` coordinates.

    The lattice values are
    ``int C(F_1(x_1(u_1) - t_1), ..., F_s(x_s(u_s) - t_s), u_{s+1}, ...) dG_1 ... dG_s``
    with ``x_c`` the quantile of ``X_c + Z_c``, computed by Gauss-Legendre
    quadrature on the quantile scale of each noise, doubling the node count
    until the lattice changes by less than ``tol`` (or ``max_nodes``).
    Quadrature leaves the margins slightly off uniform; the grid is
    rescaled to exact uniform margins and the drift is reported in the
    details.
    """
    spec = NoiseSpec("independent", tuple(noises), len(noises), None if perm is None else tuple(perm))
    if max_nodes is None:
        max_nodes = 2048 if len(noises) <= 1 else 256
    result = _noisy(C, marginals, spec, m, nodes, tol, max_nodes)
    return result if details else result.grid


def noisy_copula_common(C, marginals: Sequence[Distribution1D], G: Distribution1D, s: int, m: int,
                        perm: Sequence[int] | None = None, *, nodes: int = 128, tol: float = 1e-6,
                        max_nodes: int = 4096, details: bool = False):
    """Copula of ``X + (Z, ..., Z, 0, ..., 0)`` with one shock ``Z ~ G`` on ``s`` coordinates.

    Same quadrature as :func:`noisy_copula_independent` with a single
    integral over the shared shock.
    """
    spec = NoiseSpec("common", (G,), s, None if perm is None else tuple(perm))
    result = _noisy(C, marginals, spec, m, nodes, tol, max_nodes)
    return result if details else result.grid


def noisy_copula(C, marginals, spec: NoiseSpec, m: int, **kw):
    if spec.mode == "independent":
        return noisy_copula_independent(C, marginals, spec.dists, m, spec.perm, **kw)
    return noisy_copula_common(C, marginals, spec.dists[0] if spec.dists else PointMass(0.0),
                               spec.s, m, spec.perm, **kw)


# ---------------------------------------------------------------------------
# Monte Carlo oracle
# ---------------------------------------------------------------------------

def empirical_copula(samples, m: int, check_size: bool = True):
    """Checkerboard of the rank-transformed sample (ties broken by input order).

    ``samples`` has shape ``(N, k)``.  With ``check_size`` the sample must
    have at least ``10 * m**2`` rows.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[1] not in (2, 3):
        raise ParameterDomainError(f"samples must have shape (N, 2) or (N, 3), got {X.shape}")
    n, k = X.shape
    if check_size and n < 10 * m**2:
        raise SampleSizeError(f"{n} samples are too few for m={m} (need {10 * m**2})")
    ranks = stats.rankdata(X, method="ordinal", axis=0) - 1
    cells = (ranks * m) // n
    flat = np.ravel_multi_index(tuple(cells.T), (m,) * k)
    counts = np.bincount(flat, minlength=m**k).reshape((m,) * k)
    return _as_grid(counts / n)


def sample_copula(C, n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points of a k-variate copula."""
    if isinstance(C, Pi):
        return rng.random((n, k))
    if isinstance(C, M):
        return np.repeat(rng.random((n, 1)), k, axis=1)
    if isinstance(C, TrivariateGrid):
        m = C.m
        cell = rng.choice(m**3, size=n, p=C.mass.ravel() / C.mass.sum())
        idx = np.stack(np.unravel_index(cell, (m,) * 3), axis=1)
        return (idx + rng.random((n, 3))) / m
    if k != 2:
        raise ParameterDomainError(f"cannot sample {C!r} in dimension {k}")
    from .simulation import kernel_step  # simulation depends on core only

    x = rng.random(n)
    return np.column_stack([x, kernel_step(C, x, rng)])


def monte_carlo_noisy(C, marginals: Sequence[Distribution1D], spec: NoiseSpec, m: int, n: int,
                      seed: int):
    """Empirical copula of ``n`` simulated draws of ``X + Z``."""
    rng = np.random.Generator(np.random.Philox(seed))
    k = len(marginals)
    U = sample_copula(C, n, k, rng)
    X = np.column_stack([marginals[c].quantile(U[:, c]) for c in range(k)])
    targets = spec.targets(k)
    if spec.mode == "independent":
        for c, G in zip(targets, spec.dists):
            X[:, c] += G.sample(rng, n)
    elif targets:
        shock = spec.dists[0].sample(rng, n)
        for c in targets:
            X[:, c] += shock
    return empirical_copula(X, m)


def dist_from_dict(spec: dict) -> Distribution1D:
    """Parse ``{"type": "uniform" | "normal" | "point_mass" | "empirical", ...}``."""
    kind = spec.get("type")
    if kind == "uniform":
        return Uniform(spec.get("lo", 0.0), spec.get("hi", 1.0))
    if kind == "normal":
        return Normal(spec.get("mean", 0.0), spec.get("sd", 1.0))
    if kind == "point_mass":
        return PointMass(spec["c"])
    if kind == "empirical":
        return Empirical(np.asarray(spec["values"], dtype=float))
    raise ParameterDomainError(f"unknown distribution type {kind!r}")

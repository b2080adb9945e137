"""Copula representations: symbolic expressions and checkerboard grids.

Two representations coexist.  ``CopulaExpr`` subclasses describe copulas
symbolically (the Frechet atoms ``Pi``, ``M``, ``W``, the Mardia family and
combinators over them).  ``GridCopula`` is an m x m checkerboard copula,
i.e. a copula whose density is constant on every cell of the uniform grid.
Singular copulas are represented on grids by concentrated cell mass, so a
discretized ``M`` is the identity matrix divided by ``m``.

All objects are immutable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from numbers import Real
from typing import Any

import numpy as np

from .errors import InvalidCopulaError, ParameterDomainError, ResolutionError

STRUCTURAL_TOL = 1e-10
WEIGHT_TOL = 1e-12
DEFAULT_RESOLUTION = 64

__all__ = [
    "CopulaExpr", "Pi", "M", "W", "Mardia", "GridBacked", "ConvexCombo",
    "PerturbPi", "PerturbM", "NFold", "GridCopula", "TrivariateGrid",
    "ValidationReport", "eval_cdf", "conditional_cdf", "discretize",
    "validate", "to_grid", "natural_resolution", "cdf_distance",
    "random_checkerboard", "expr_from_dict", "expr_to_dict",
]


# ---------------------------------------------------------------------------
# checkerboard grids
# ---------------------------------------------------------------------------

def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim or len(set(arr.shape)) != 1 or arr.shape[0] < 1:
        raise ParameterDomainError(f"mass must be a non-empty {ndim}-d cube, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _format_floats(values: np.ndarray) -> str:
    return "[" + ",".join(format(float(x), ".17g") for x in values.ravel()) + "]"


@dataclass(frozen=True, eq=False)
class GridCopula:
    """Checkerboard copula on an ``m x m`` grid.

    ``mass[i, j]`` is the probability of the cell
    ``(i/m, (i+1)/m] x (j/m, (j+1)/m]`` (0-based).  The density on that cell
    is ``m**2 * mass[i, j]``.

    Construction does not enforce the copula axioms; use :func:`validate`
    or :meth:`checked` for that.
    """

    mass: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", _frozen_array(self.mass, 2))

    @property
    def m(self) -> int:
        return self.mass.shape[0]

    @property
    def density(self) -> np.ndarray:
        return self.m**2 * self.mass

    @property
    def transition(self) -> np.ndarray:
        """Doubly stochastic matrix ``Q = m * mass`` of the lag-one kernel."""
        return self.m * self.mass

    @cached_property
    def corners(self) -> np.ndarray:
        """CDF values at the ``(m+1) x (m+1)`` lattice ``C(i/m, j/m)``."""
        s = np.zeros((self.m + 1, self.m + 1))
        s[1:, 1:] = self.mass.cumsum(axis=0).cumsum(axis=1)
        s.setflags(write=False)
        return s

    @cached_property
    def row_cumulative(self) -> np.ndarray:
        r = np.zeros((self.m, self.m + 1))
        r[:, 1:] = self.mass.cumsum(axis=1)
        r.setflags(write=False)
        return r

    def checked(self, tol: float = STRUCTURAL_TOL) -> "GridCopula":
        report = validate(self, tol)
        if not report.passed:
            name, loc, mag = report.violations[0]
            raise InvalidCopulaError(f"{name} violated at {loc} by {mag:.3e}")
        return self

    def refine(self, factor: int) -> "GridCopula":
        """Exact block subdivision into a grid of resolution ``m * factor``."""
        if factor < 1:
            raise ParameterDomainError("refinement factor must be positive")
        if factor == 1:
            return self
        block = np.ones((factor, factor)) / factor**2
        return GridCopula(np.kron(self.mass, block))

    def coarsen(self, factor: int) -> "GridCopula":
        if self.m % factor:
            raise ResolutionError(f"cannot coarsen m={self.m} by {factor}")
        k = self.m // factor
        return GridCopula(self.mass.reshape(k, factor, k, factor).sum(axis=(1, 3)))

    def at_resolution(self, m: int) -> "GridCopula":
        if m == self.m:
            return self
        if m % self.m == 0:
            return self.refine(m // self.m)
        if self.m % m == 0:
            return self.coarsen(self.m // m)
        raise ResolutionError(f"resolutions {self.m} and {m} do not divide each other")

    def transpose(self) -> "GridCopula":
        return GridCopula(self.mass.T)

    def to_json(self) -> str:
        return f'{{"m": {self.m}, "mass": {_format_floats(self.mass)}}}'

    @classmethod
    def from_json(cls, text: str) -> "GridCopula":
        data = json.loads(text)
        m = int(data["m"])
        flat = np.asarray(data["mass"], dtype=float)
        if flat.size != m * m:
            raise ParameterDomainError(f"expected {m * m} cell masses, got {flat.size}")
        return cls(flat.reshape(m, m))

    @classmethod
    def independence(cls, m: int) -> "GridCopula":
        return cls(np.full((m, m), 1.0 / m**2))

    def __eq__(self, other):
        if not isinstance(other, GridCopula):
            return NotImplemented
        return np.array_equal(self.mass, other.mass)

    def __hash__(self):
        return hash(self.mass.tobytes())

    def __repr__(self):
        return f"GridCopula(m={self.m})"


@dataclass(frozen=True, eq=False)
class TrivariateGrid:
    """Checkerboard 3-copula; ``mass[i, j, k]`` indexed x-major, then y, then z."""

    mass: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", _frozen_array(self.mass, 3))

    @property
    def m(self) -> int:
        return self.mass.shape[0]

    def margin(self, keep: tuple[int, int]) -> GridCopula:
        """Bivariate margin over the two kept axes (in the order given)."""
        drop = ({0, 1, 2} - set(keep)).pop()
        summed = self.mass.sum(axis=drop)
        kept = sorted(keep)
        return GridCopula(summed if tuple(keep) == tuple(kept) else summed.T)

    def univariate_margins(self) -> list[np.ndarray]:
        return [self.mass.sum(axis=tuple(a for a in range(3) if a != ax)) for ax in range(3)]

    def cdf_corners(self) -> np.ndarray:
        s = np.zeros((self.m + 1,) * 3)
        s[1:, 1:, 1:] = self.mass.cumsum(0).cumsum(1).cumsum(2)
        return s

    def to_json(self) -> str:
        return f'{{"m": {self.m}, "mass": {_format_floats(self.mass)}}}'

    @classmethod
    def from_json(cls, text: str) -> "TrivariateGrid":
        data = json.loads(text)
        m = int(data["m"])
        flat = np.asarray(data["mass"], dtype=float)
        if flat.size != m**3:
            raise ParameterDomainError(f"expected {m**3} cell masses, got {flat.size}")
        return cls(flat.reshape(m, m, m))

    def __eq__(self, other):
        if not isinstance(other, TrivariateGrid):
            return NotImplemented
        return np.array_equal(self.mass, other.mass)

    def __hash__(self):
        return hash(self.mass.tobytes())

    def __repr__(self):
        return f"TrivariateGrid(m={self.m})"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[tuple[str, Any, float], ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.passed


def validate(G: GridCopula | TrivariateGrid, tol: float = STRUCTURAL_TOL) -> ValidationReport:
    """Check nonnegativity, uniform margins and total mass of a grid.

    Each failed check contributes one ``(name, location, magnitude)`` entry
    reporting the worst offender.
    """
    mass = G.mass
    m = G.m
    violations = []
    lo = float(mass.min())
    if lo < -tol:
        loc = tuple(int(i) for i in np.unravel_index(mass.argmin(), mass.shape))
        violations.append(("negative cell", loc, -lo))
    names = ["row marginal", "column marginal", "depth marginal"]
    for axis in range(mass.ndim):
        others = tuple(a for a in range(mass.ndim) if a != axis)
        dev = np.abs(mass.sum(axis=others) - 1.0 / m)
        worst = int(dev.argmax())
        if dev[worst] > tol:
            violations.append((names[axis], worst, float(dev[worst])))
    total = abs(float(mass.sum()) - 1.0)
    if total > tol:
        violations.append(("total mass", None, total))
    return ValidationReport(tuple(violations))


def random_checkerboard(m: int, rng: np.random.Generator, n_perm: int = 4,
                        pi_weight: float | None = None) -> GridCopula:
    """Random valid checkerboard copula as a Birkhoff mixture.

    Mixes ``n_perm`` random permutation matrices with Dirichlet weights and
    an independence component (weight drawn uniformly unless given), so the
    result is doubly stochastic up to rounding.
    """
    if pi_weight is None:
        pi_weight = float(rng.uniform(0.0, 0.5))
    weights = rng.dirichlet(np.ones(n_perm)) * (1.0 - pi_weight)
    mass = np.full((m, m), pi_weight / m**2)
    for w in weights:
        mass[np.arange(m), rng.permutation(m)] += w / m
    return GridCopula(mass)


def cdf_distance(A: GridCopula, B: GridCopula) -> float:
    """Sup-norm distance between the CDFs of two checkerboard copulas.

    Both CDFs are bilinear on cells of the common resolution, so the sup is
    attained on lattice corners.
    """
    m = max(A.m, B.m)
    A, B = A.at_resolution(m), B.at_resolution(m)
    return float(np.abs(A.corners - B.corners).max())


# ---------------------------------------------------------------------------
# symbolic expressions
# ---------------------------------------------------------------------------

def _check_unit(name: str, value) -> None:
    if not isinstance(value, Real) or not 0 <= value <= 1:
        raise ParameterDomainError(f"{name} must lie in [0, 1], got {value!r}")


class CopulaExpr:
    """Base class of symbolic bivariate copula expressions."""

    __slots__ = ()


@dataclass(frozen=True)
class Pi(CopulaExpr):
    pass


@dataclass(frozen=True)
class M(CopulaExpr):
    pass


@dataclass(frozen=True)
class W(CopulaExpr):
    pass


@dataclass(frozen=True)
class Mardia(CopulaExpr):
    """``a*M + b*W + (1-a-b)*Pi``."""

    a: Real
    b: Real

    def __post_init__(self):
        _check_unit("a", self.a)
        _check_unit("b", self.b)
        if self.a + self.b > 1 + WEIGHT_TOL:
            raise ParameterDomainError(f"a + b must not exceed 1, got {self.a + self.b!r}")


@dataclass(frozen=True)
class GridBacked(CopulaExpr):
    grid: GridCopula


@dataclass(frozen=True)
class ConvexCombo(CopulaExpr):
    weights: tuple
    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.weights) != len(self.components) or not self.weights:
            raise ParameterDomainError("weights and components must be non-empty and of equal length")
        if any(w < 0 for w in self.weights):
            raise ParameterDomainError("convex weights must be nonnegative")
        if abs(sum(self.weights) - 1) > WEIGHT_TOL:
            raise ParameterDomainError(f"convex weights sum to {sum(self.weights)!r}, not 1")
        for c in self.components:
            if not isinstance(c, CopulaExpr):
                raise ParameterDomainError(f"component {c!r} is not a CopulaExpr")


@dataclass(frozen=True)
class PerturbPi(CopulaExpr):
    """``(1-theta)*base + theta*Pi``."""

    base: CopulaExpr
    theta: Real

    def __post_init__(self):
        _check_unit("theta", self.theta)


@dataclass(frozen=True)
class PerturbM(CopulaExpr):
    """``(1-theta)*base + theta*M``."""

    base: CopulaExpr
    theta: Real

    def __post_init__(self):
        _check_unit("theta", self.theta)


@dataclass(frozen=True)
class NFold(CopulaExpr):
    """Lazy n-fold product ``base * base * ... * base``."""

    base: CopulaExpr
    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ParameterDomainError(f"n must be a positive integer, got {self.n!r}")


def natural_resolution(C: CopulaExpr) -> int | None:
    """Resolution of the grids inside ``C`` (None for purely symbolic ones)."""
    if isinstance(C, GridBacked):
        return C.grid.m
    if isinstance(C, ConvexCombo):
        found = [natural_resolution(c) for c in C.components]
    elif isinstance(C, (PerturbPi, PerturbM, NFold)):
        found = [natural_resolution(C.base)]
    else:
        return None
    found = [m for m in found if m is not None]
    if not found:
        return None
    top = max(found)
    for m in found:
        if top % m:
            raise ResolutionError(f"grid resolutions {m} and {top} do not divide each other")
    return top


def _reduced_power(C: NFold) -> CopulaExpr:
    from .algebra import n_fold  # algebra depends on core

    return n_fold(C.base, C.n)


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ParameterDomainError("copula arguments must lie in [0, 1]")
    return arr


def _grid_cdf(G: GridCopula, u, v):
    m = G.m
    i = np.clip(np.floor(u * m).astype(int), 0, m - 1)
    j = np.clip(np.floor(v * m).astype(int), 0, m - 1)
    fu = u * m - i
    fv = v * m - j
    s = G.corners
    return ((1 - fu) * (1 - fv) * s[i, j] + fu * (1 - fv) * s[i + 1, j]
            + (1 - fu) * fv * s[i, j + 1] + fu * fv * s[i + 1, j + 1])


def _cdf(C: CopulaExpr, u, v):
    if isinstance(C, Pi):
        return u * v
    if isinstance(C, M):
        return np.minimum(u, v)
    if isinstance(C, W):
        return np.maximum(u + v - 1.0, 0.0)
    if isinstance(C, Mardia):
        a, b = float(C.a), float(C.b)
        return a * np.minimum(u, v) + b * np.maximum(u + v - 1.0, 0.0) + (1 - a - b) * u * v
    if isinstance(C, GridBacked):
        return _grid_cdf(C.grid, u, v)
    if isinstance(C, ConvexCombo):
        return sum(float(w) * _cdf(c, u, v) for w, c in zip(C.weights, C.components))
    if isinstance(C, PerturbPi):
        t = float(C.theta)
        return (1 - t) * _cdf(C.base, u, v) + t * u * v
    if isinstance(C, PerturbM):
        t = float(C.theta)
        return (1 - t) * _cdf(C.base, u, v) + t * np.minimum(u, v)
    if isinstance(C, NFold):
        return _cdf(_reduced_power(C), u, v)
    raise TypeError(f"not a copula expression: {C!r}")


def _unwrap(result, *args):
    if all(np.ndim(a) == 0 for a in args):
        return float(result)
    return result


def eval_cdf(C: CopulaExpr, u, v):
    """Evaluate ``C(u, v)``; vectorized over array arguments."""
    u, v = _as_array(u), _as_array(v)
    return _unwrap(np.clip(_cdf(C, u, v), 0.0, 1.0), u, v)


def _cond(C: CopulaExpr, x, v):
    if isinstance(C, Pi):
        return v + 0.0 * x
    if isinstance(C, M):
        return (v >= x).astype(float)
    if isinstance(C, W):
        return (v >= 1.0 - x).astype(float)
    if isinstance(C, Mardia):
        a, b = float(C.a), float(C.b)
        return a * (v >= x) + b * (v >= 1.0 - x) + (1 - a - b) * v
    if isinstance(C, GridBacked):
        G = C.grid
        m = G.m
        i = np.clip(np.floor(x * m).astype(int), 0, m - 1)
        j = np.clip(np.floor(v * m).astype(int), 0, m - 1)
        fv = v * m - j
        return m * (G.row_cumulative[i, j] + fv * G.mass[i, j])
    if isinstance(C, ConvexCombo):
        return sum(float(w) * _cond(c, x, v) for w, c in zip(C.weights, C.components))
    if isinstance(C, PerturbPi):
        t = float(C.theta)
        return (1 - t) * _cond(C.base, x, v) + t * v
    if isinstance(C, PerturbM):
        t = float(C.theta)
        return (1 - t) * _cond(C.base, x, v) + t * (v >= x)
    if isinstance(C, NFold):
        return _cond(_reduced_power(C), x, v)
    raise TypeError(f"not a copula expression: {C!r}")


def conditional_cdf(C: CopulaExpr, x, v):
    """Transition CDF ``P(X_n <= v | X_{n-1} = x)``, the u-derivative of C.

    Singular atoms use right-continuous indicators (``M`` gives
    ``1{v >= x}``).  Grid copulas use the cell-averaged kernel, constant in
    ``x`` across each row of cells.
    """
    x, v = _as_array(x), _as_array(v)
    out = np.clip(_cond(C, x, v), 0.0, 1.0)
    return _unwrap(out, x, v)


def _frechet_mass(a: float, b: float, m: int) -> np.ndarray:
    idx = np.arange(m)
    mass = np.full((m, m), (1.0 - a - b) / m**2)
    mass[idx, idx] += a / m
    mass[idx, m - 1 - idx] += b / m
    return mass


def discretize(C: CopulaExpr, m: int = DEFAULT_RESOLUTION) -> GridCopula:
    """Checkerboard approximation of ``C`` at resolution ``m``.

    Cell masses come from inclusion-exclusion of :func:`eval_cdf` at the four
    cell corners, so the grid's CDF agrees with ``C`` on the lattice.
    """
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ParameterDomainError(f"resolution must be a positive integer, got {m!r}")
    if isinstance(C, GridBacked) and C.grid.m == m:
        return C.grid
    if isinstance(C, NFold):
        C = _reduced_power(C)
    t = np.arange(m + 1) / m
    s = eval_cdf(C, t[:, None], t[None, :])
    mass = np.diff(np.diff(s, axis=0), axis=1)
    lo = float(mass.min())
    if lo < -STRUCTURAL_TOL:
        idx = np.unravel_index(mass.argmin(), mass.shape)
        raise InvalidCopulaError(f"negative cell mass {lo:.3e} at {tuple(int(i) for i in idx)}")
    return GridCopula(np.maximum(mass, 0.0))


def to_grid(C: CopulaExpr, m: int | None = None) -> GridCopula:
    """Grid form of ``C`` at ``m`` (default: the natural resolution, else 64)."""
    if m is None:
        m = natural_resolution(C) or DEFAULT_RESOLUTION
    return discretize(C, m)


# ---------------------------------------------------------------------------
# serialization of expressions
# ---------------------------------------------------------------------------

_ATOMS = {"Pi": Pi, "M": M, "W": W}


def expr_from_dict(spec: Any) -> CopulaExpr:
    """Build an expression from its JSON form.

    Atoms may be given as bare strings (``"M"``) or ``{"type": "M"}``.
    Other forms: ``{"type": "Mardia", "a", "b"}``,
    ``{"type": "grid", "m", "mass"}``, ``{"type": "convex", "weights",
    "components"}``, ``{"type": "perturb_pi" | "perturb_m", "base",
    "theta"}``, ``{"type": "nfold", "base", "n"}``.
    """
    if isinstance(spec, str):
        spec = {"type": spec}
    if not isinstance(spec, dict) or "type" not in spec:
        raise ParameterDomainError(f"cannot parse copula expression {spec!r}")
    kind = spec["type"]
    if kind in _ATOMS:
        return _ATOMS[kind]()
    if kind == "Mardia":
        return Mardia(spec["a"], spec["b"])
    if kind == "grid":
        m = int(spec["m"])
        return GridBacked(GridCopula(np.asarray(spec["mass"], dtype=float).reshape(m, m)).checked())
    if kind == "convex":
        return ConvexCombo(tuple(spec["weights"]), tuple(expr_from_dict(c) for c in spec["components"]))
    if kind == "perturb_pi":
        return PerturbPi(expr_from_dict(spec["base"]), spec["theta"])
    if kind == "perturb_m":
        return PerturbM(expr_from_dict(spec["base"]), spec["theta"])
    if kind == "nfold":
        return NFold(expr_from_dict(spec["base"]), int(spec["n"]))
    raise ParameterDomainError(f"unknown copula type {kind!r}")


def expr_to_dict(C: CopulaExpr) -> dict:
    for name, cls in _ATOMS.items():
        if type(C) is cls:
            return {"type": name}
    if isinstance(C, Mardia):
        return {"type": "Mardia", "a": float(C.a), "b": float(C.b)}
    if isinstance(C, GridBacked):
        return {"type": "grid", "m": C.grid.m, "mass": C.grid.mass.ravel().tolist()}
    if isinstance(C, ConvexCombo):
        return {"type": "convex", "weights": [float(w) for w in C.weights],
                "components": [expr_to_dict(c) for c in C.components]}
    if isinstance(C, PerturbPi):
        return {"type": "perturb_pi", "base": expr_to_dict(C.base), "theta": float(C.theta)}
    if isinstance(C, PerturbM):
        return {"type": "perturb_m", "base": expr_to_dict(C.base), "theta": float(C.theta)}
    if isinstance(C, NFold):
        return {"type": "nfold", "base": expr_to_dict(C.base), "n": C.n}
    raise TypeError(f"not a copula expression: {C!r}")


def describe(C: CopulaExpr) -> str:
    """Short human-readable label, used in reports."""
    if isinstance(C, (Pi, M, W)):
        return type(C).__name__
    if isinstance(C, Mardia):
        return f"Mardia({float(C.a):g},{float(C.b):g})"
    if isinstance(C, GridBacked):
        return f"grid(m={C.grid.m})"
    if isinstance(C, ConvexCombo):
        inner = " + ".join(f"{float(w):g}*{describe(c)}" for w, c in zip(C.weights, C.components))
        return f"({inner})"
    if isinstance(C, PerturbPi):
        return f"PerturbPi({describe(C.base)},{float(C.theta):g})"
    if isinstance(C, PerturbM):
        return f"PerturbM({describe(C.base)},{float(C.theta):g})"
    if isinstance(C, NFold):
        return f"{describe(C.base)}^{C.n}"
    return repr(C)

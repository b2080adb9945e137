"""Fold-product algebra on copula expressions.

The Frechet family ``a*M + b*W + c*Pi`` is closed under the fold product
and is handled symbolically (``M`` is the identity, ``W*W = M``, ``Pi``
absorbs everything).  Anything involving a grid falls back to checkerboard
arithmetic, where the fold product of masses ``A`` and ``B`` at resolution
``m`` is the matrix product ``m * A @ B``.
"""
from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import dataclass
from numbers import Real
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    STRUCTURAL_TOL, WEIGHT_TOL, ConvexCombo, CopulaExpr, GridBacked, GridCopula,
    M, Mardia, NFold, PerturbM, PerturbPi, Pi, TrivariateGrid, W, cdf_distance,
    discretize, natural_resolution, to_grid,
)
from .errors import CombinatorialBlowupError, ParameterDomainError, ResolutionError

log = logging.getLogger(__name__)

EXPANSION_CAP = 2**20
BINOMIAL_CAP = 64


@dataclass(frozen=True)
class FrechetCoeffs:
    """Weights of ``M``, ``W`` and ``Pi`` in a Frechet-family copula.

    Works with floats or :class:`fractions.Fraction` for exact arithmetic.
    """

    coefM: Real
    coefW: Real
    coefPi: Real

    def __post_init__(self):
        if min(self.coefM, self.coefW, self.coefPi) < -WEIGHT_TOL:
            raise ParameterDomainError(f"negative Frechet coefficient in {self}")
        if abs(self.coefM + self.coefW + self.coefPi - 1) > WEIGHT_TOL:
            raise ParameterDomainError(f"Frechet coefficients of {self} do not sum to 1")

    @classmethod
    def of_mardia(cls, a, b) -> "FrechetCoeffs":
        return cls(a, b, 1 - a - b)

    def scaled(self, w) -> tuple:
        return (w * self.coefM, w * self.coefW, w * self.coefPi)

    def to_expr(self) -> CopulaExpr:
        if self.coefM == 1:
            return M()
        if self.coefW == 1:
            return W()
        if self.coefPi == 1:
            return Pi()
        return Mardia(self.coefM, self.coefW)


def frechet_product(p: FrechetCoeffs, q: FrechetCoeffs) -> FrechetCoeffs:
    """Fold product within the Frechet family, by bilinearity."""
    cm = p.coefM * q.coefM + p.coefW * q.coefW
    cw = p.coefM * q.coefW + p.coefW * q.coefM
    return FrechetCoeffs(cm, cw, 1 - cm - cw)


def _combine(pairs) -> FrechetCoeffs:
    cm = cw = 0
    for w, c in pairs:
        cm = cm + w * c.coefM
        cw = cw + w * c.coefW
    return FrechetCoeffs(cm, cw, 1 - cm - cw)


def frechet_coeffs(C: CopulaExpr) -> FrechetCoeffs | None:
    """Reduce ``C`` to Frechet coefficients, or None if it involves a grid."""
    if isinstance(C, Pi):
        return FrechetCoeffs(0, 0, 1)
    if isinstance(C, M):
        return FrechetCoeffs(1, 0, 0)
    if isinstance(C, W):
        return FrechetCoeffs(0, 1, 0)
    if isinstance(C, Mardia):
        return FrechetCoeffs.of_mardia(C.a, C.b)
    if isinstance(C, GridBacked):
        return None
    if isinstance(C, ConvexCombo):
        parts = [frechet_coeffs(c) for c in C.components]
        if any(p is None for p in parts):
            return None
        return _combine(zip(C.weights, parts))
    if isinstance(C, (PerturbPi, PerturbM)):
        base = frechet_coeffs(C.base)
        if base is None:
            return None
        atom = FrechetCoeffs(0, 0, 1) if isinstance(C, PerturbPi) else FrechetCoeffs(1, 0, 0)
        return _combine([(1 - C.theta, base), (C.theta, atom)])
    if isinstance(C, NFold):
        base = frechet_coeffs(C.base)
        if base is None:
            return None
        out = base
        for _ in range(C.n - 1):
            out = frechet_product(out, base)
        return out
    raise TypeError(f"not a copula expression: {C!r}")


# ---------------------------------------------------------------------------
# grid arithmetic
# ---------------------------------------------------------------------------

def _drift(mass: np.ndarray) -> float:
    m = mass.shape[0]
    return max(float(np.abs(mass.sum(axis=1) - 1 / m).max()),
               float(np.abs(mass.sum(axis=0) - 1 / m).max()))


def _sinkhorn(mass: np.ndarray, iters: int = 50) -> np.ndarray:
    m = mass.shape[0]
    out = mass.copy()
    for _ in range(iters):
        out /= m * out.sum(axis=1, keepdims=True)
        out /= m * out.sum(axis=0, keepdims=True)
        if _drift(out) < 1e-15:
            break
    return out


def grid_fold(A: GridCopula, B: GridCopula) -> GridCopula:
    """Fold product of two checkerboards of equal resolution."""
    if A.m != B.m:
        raise ResolutionError(f"grid_fold needs equal resolutions, got {A.m} and {B.m}")
    mass = A.m * (A.mass @ B.mass)
    drift = _drift(mass)
    if drift > STRUCTURAL_TOL:
        log.warning("fold product drifted from uniform margins by %.3e; renormalizing", drift)
        mass = _sinkhorn(mass)
    return GridCopula(mass)


def grid_power(G: GridCopula, n: int) -> GridCopula:
    """``G^n`` by repeated squaring."""
    if n < 1:
        raise ParameterDomainError(f"n must be positive, got {n}")
    result = None
    square = G
    while True:
        if n & 1:
            result = square if result is None else grid_fold(result, square)
        n >>= 1
        if not n:
            return result
        square = grid_fold(square, square)


def common_resolution(*exprs: CopulaExpr) -> int | None:
    found = [m for m in (natural_resolution(e) for e in exprs) if m is not None]
    if not found:
        return None
    top = max(found)
    for m in found:
        if top % m:
            raise ResolutionError(f"grid resolutions {m} and {top} do not divide each other")
    return top


def fold_product(A: CopulaExpr, B: CopulaExpr) -> CopulaExpr:
    """Darsow fold product ``A * B``, the copula of ``(X_k, X_{k+2})``.

    Symbolic when both operands reduce to the Frechet family; otherwise a
    grid-backed result at the common resolution of the operands.
    """
    ca, cb = frechet_coeffs(A), frechet_coeffs(B)
    if ca is not None and cb is not None:
        return frechet_product(ca, cb).to_expr()
    if any(c is not None and c.coefPi == 1 for c in (ca, cb)):
        return Pi()
    if ca is not None and ca.coefM == 1:
        return B
    if cb is not None and cb.coefM == 1:
        return A
    m = common_resolution(A, B)
    return GridBacked(grid_fold(to_grid(A, m), to_grid(B, m)))


def star_product(A: CopulaExpr, B: CopulaExpr, m: int) -> TrivariateGrid:
    """Checkerboard of the copula of three consecutive states ``(X_k, X_{k+1}, X_{k+2})``.

    Cell ``(i, k, j)`` carries ``m * A[i, k] * B[k, j]``; summing out the
    middle axis gives the fold-product grid.
    """
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ParameterDomainError(f"resolution must be a positive integer, got {m!r}")
    GA, GB = to_grid(A, m), to_grid(B, m)
    return TrivariateGrid(m * GA.mass[:, :, None] * GB.mass[None, :, :])


def n_fold(C: CopulaExpr, n: int) -> CopulaExpr:
    """``C^n`` via the fold-product recurrence ``C^n = C^(n-1) * C``."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ParameterDomainError(f"n must be a positive integer, got {n!r}")
    if n == 1:
        return C
    coeffs = frechet_coeffs(C)
    if coeffs is not None:
        out = coeffs
        for _ in range(n - 1):
            out = frechet_product(out, coeffs)
        return out.to_expr()
    return GridBacked(grid_power(to_grid(C), n))


# ---------------------------------------------------------------------------
# expansions and closed forms
# ---------------------------------------------------------------------------

class ExpansionTerm(NamedTuple):
    weight: float
    factors: tuple[int, ...]


def convex_expand(weights: Sequence, components: Sequence[CopulaExpr], n: int,
                  cap: int = EXPANSION_CAP) -> list[ExpansionTerm]:
    """All ``k**n`` product terms of the n-th power of a convex combination.

    Mainly a test oracle; use :func:`n_fold` for production work.
    """
    k = len(components)
    if len(weights) != k or k == 0:
        raise ParameterDomainError("weights and components must be non-empty and of equal length")
    if n < 1:
        raise ParameterDomainError(f"n must be positive, got {n}")
    if k**n > cap:
        raise CombinatorialBlowupError(
            f"expansion has {k}**{n} terms (cap {cap}); use n_fold on the combination instead")
    return [ExpansionTerm(math.prod(weights[i] for i in idx), idx)
            for idx in itertools.product(range(k), repeat=n)]


def expansion_grid(terms: Sequence[ExpansionTerm], components: Sequence[CopulaExpr],
                   m: int) -> GridCopula:
    """Weighted sum of the factor fold-products of an expansion, on an m-grid."""
    grids = [to_grid(c, m) for c in components]
    mass = np.zeros((m, m))
    for weight, factors in terms:
        g = grids[factors[0]]
        for f in factors[1:]:
            g = grid_fold(g, grids[f])
        mass += weight * g.mass
    return GridCopula(mass)


def mardia_n_fold(a, b, n: int) -> FrechetCoeffs:
    """Closed form of the n-th fold power of ``a*M + b*W + (1-a-b)*Pi``."""
    if a < 0 or b < 0 or a + b > 1 + WEIGHT_TOL:
        raise ParameterDomainError(f"need a, b >= 0 and a + b <= 1, got a={a!r}, b={b!r}")
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ParameterDomainError(f"n must be a positive integer, got {n!r}")
    s, d = (a + b) ** n, (a - b) ** n
    cm = (s + d) / 2
    cw = (s - d) / 2
    if isinstance(cw, float):
        cw = max(cw, 0.0)
    return FrechetCoeffs(cm, cw, 1 - s)


def _mixture(weights: list, comps: list[CopulaExpr]) -> CopulaExpr:
    keep = [(w, c) for w, c in zip(weights, comps) if w > 0]
    if len(keep) == 1:
        return keep[0][1]
    return ConvexCombo(tuple(w for w, _ in keep), tuple(c for _, c in keep))


def perturb_pi_n_fold(C: CopulaExpr, theta, n: int) -> CopulaExpr:
    """``(1-theta)^n C^n + (1 - (1-theta)^n) Pi``, the n-th power of ``PerturbPi(C, theta)``."""
    PerturbPi(C, theta)  # domain check
    if n < 1:
        raise ParameterDomainError(f"n must be positive, got {n}")
    keep = (1 - theta) ** n
    if keep == 0:
        return Pi()
    return _mixture([keep, 1 - keep], [n_fold(C, n), Pi()])


def perturb_m_n_fold(C: CopulaExpr, theta, n: int, cap: int = BINOMIAL_CAP) -> CopulaExpr:
    """n-th power of ``PerturbM(C, theta)`` as a binomial mixture of ``C^1..C^n`` and ``M``."""
    PerturbM(C, theta)
    if n < 1:
        raise ParameterDomainError(f"n must be positive, got {n}")
    if n > cap:
        raise CombinatorialBlowupError(
            f"binomial expansion with n={n} exceeds cap {cap}; use n_fold(PerturbM(C, theta), n)")
    weights, comps = [], []
    power = C
    for i in range(1, n + 1):
        if i > 1:
            power = fold_product(power, C)
        weights.append(math.comb(n, i) * theta ** (n - i) * (1 - theta) ** i)
        comps.append(power)
    weights.append(theta**n)
    comps.append(M())
    return _mixture(weights, comps)


class LemmaCheck(NamedTuple):
    K: float
    holds: bool


def lemma_bound_check(G: GridCopula, n: int) -> LemmaCheck:
    """Check that the n-fold density stays above ``K**n`` where ``K`` is the minimum density of ``G``."""
    K = float(G.density.min())
    if n == 1:
        return LemmaCheck(K, True)
    low = float(grid_power(G, n).density.min())
    return LemmaCheck(K, low >= K**n - 1e-10)


# ---------------------------------------------------------------------------
# limits
# ---------------------------------------------------------------------------

class LimitTag(str, enum.Enum):
    IndependencePi = "IndependencePi"
    Comonotone_M = "Comonotone_M"
    HalfM_HalfW = "HalfM_HalfW"
    Undefined = "Undefined"
    GridLimit = "GridLimit"


@dataclass(frozen=True)
class LimitClass:
    tag: LimitTag
    payload: GridCopula | None = None
    diagnostic: str = ""

    def __post_init__(self):
        if self.tag is LimitTag.Undefined and self.payload is not None:
            raise ParameterDomainError("an Undefined limit carries no payload")


def limit_grid(limit: LimitClass, m: int) -> GridCopula:
    """Checkerboard of the limiting copula of a classified sequence."""
    tag = limit.tag
    if tag is LimitTag.IndependencePi:
        return discretize(Pi(), m)
    if tag is LimitTag.Comonotone_M:
        return discretize(M(), m)
    if tag is LimitTag.HalfM_HalfW:
        return discretize(Mardia(0.5, 0.5), m)
    if tag is LimitTag.GridLimit:
        return limit.payload.at_resolution(m)
    raise ParameterDomainError("an Undefined limit has no grid")


def _classify_coeffs(c: FrechetCoeffs) -> LimitClass:
    a, b = float(c.coefM), float(c.coefW)
    if a + b < 1 - WEIGHT_TOL:
        return LimitClass(LimitTag.IndependencePi)
    if abs(a - 1) <= WEIGHT_TOL:
        return LimitClass(LimitTag.Comonotone_M)
    if abs(b - 1) <= WEIGHT_TOL:
        return LimitClass(LimitTag.Undefined,
                          diagnostic="powers alternate between W (odd n) and M (even n)")
    return LimitClass(LimitTag.HalfM_HalfW)


def _numeric_limit(C: CopulaExpr, tol: float, max_steps: int) -> LimitClass:
    G = to_grid(C)
    power, steps = G, 1
    while True:
        gap = cdf_distance(grid_fold(power, G), power)
        if gap < tol:
            for tag, ref in ((LimitTag.IndependencePi, Pi()), (LimitTag.Comonotone_M, M()),
                             (LimitTag.HalfM_HalfW, Mardia(0.5, 0.5))):
                if cdf_distance(power, discretize(ref, G.m)) < tol:
                    return LimitClass(tag, diagnostic=f"numeric, n={steps}")
            return LimitClass(LimitTag.GridLimit, power, diagnostic=f"numeric, n={steps}")
        if steps * 2 > max_steps:
            return LimitClass(LimitTag.Undefined,
                              diagnostic=f"not Cauchy after n={steps}: |C^(n+1) - C^n| = {gap:.3e}")
        power, steps = grid_fold(power, power), steps * 2


def limit_classify(C: CopulaExpr, tol: float = 1e-8, max_steps: int = 2**16) -> LimitClass:
    """Classify ``lim C^n`` as n grows.

    Frechet-family expressions are classified from their coefficients.
    ``PerturbPi`` with ``0 < theta < 1`` always tends to independence and
    ``PerturbM`` inherits the limit of its base.  Everything else is iterated
    on a grid until successive powers agree to ``tol``.
    """
    coeffs = frechet_coeffs(C)
    if coeffs is not None:
        return _classify_coeffs(coeffs)
    if isinstance(C, PerturbPi):
        if C.theta == 0:
            return limit_classify(C.base, tol, max_steps)
        return LimitClass(LimitTag.IndependencePi)
    if isinstance(C, PerturbM):
        if C.theta == 1:
            return LimitClass(LimitTag.Comonotone_M)
        inherited = limit_classify(C.base, tol, max_steps)
        if C.theta == 0 or inherited.tag is not LimitTag.Undefined:
            return inherited
    return _numeric_limit(C, tol, max_steps)

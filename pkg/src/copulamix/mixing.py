"""Mixing coefficients of checkerboard copulas and mixing certificates.

For a checkerboard the density is constant on cells, so the supremum
defining alpha over Borel sets is attained on unions of grid cells: given
the row set ``A`` the best column set ``B`` is the set of columns with
positive (or, for the other sign, negative) aggregated excess mass.  The
rho coefficient is the second singular value of the doubly stochastic
matrix ``Q = m * mass``.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .algebra import fold_product, limit_classify, LimitTag, frechet_coeffs
from .algebra import perturb_m_n_fold, perturb_pi_n_fold
from .core import CopulaExpr, GridCopula, to_grid, validate
from .errors import InvalidCopulaError, NumericError, ParameterDomainError

log = logging.getLogger(__name__)

EXACT_CUTOFF = 20
N_STARTS = 32
_CHUNK = 1 << 14


@dataclass(frozen=True)
class AlphaSolution:
    """alpha of a grid with maximizing row set ``set_a`` and column set ``set_b`` (0-based)."""

    value: float
    set_a: tuple[int, ...]
    set_b: tuple[int, ...]
    exact: bool


def _excess(G: GridCopula) -> np.ndarray:
    return G.mass - 1.0 / G.m**2


def _solution(D: np.ndarray, a: np.ndarray, b: np.ndarray, exact: bool) -> AlphaSolution:
    set_a = tuple(int(i) for i in np.flatnonzero(a))
    set_b = tuple(int(j) for j in np.flatnonzero(b))
    value = abs(float(D[np.ix_(set_a, set_b)].sum())) if set_a and set_b else 0.0
    return AlphaSolution(value, set_a, set_b, exact)


def _alpha_exact(D: np.ndarray) -> AlphaSolution:
    m = D.shape[0]
    # complementing A flips the sign of every column score, so subsets that
    # leave out the last row already cover every value
    n_masks = 1 << (m - 1)
    shifts = np.arange(m)
    best_val, best_mask, best_sign = -1.0, 0, 1
    for start in range(0, n_masks, _CHUNK):
        masks = np.arange(start, min(start + _CHUNK, n_masks))
        bits = ((masks[:, None] >> shifts) & 1).astype(float)
        scores = bits @ D
        pos = np.where(scores > 0, scores, 0.0).sum(axis=1)
        neg = -np.where(scores < 0, scores, 0.0).sum(axis=1)
        vals = np.maximum(pos, neg)
        k = int(vals.argmax())
        if vals[k] > best_val:
            best_val, best_mask = float(vals[k]), int(masks[k])
            best_sign = 1 if pos[k] >= neg[k] else -1
    a = ((best_mask >> shifts) & 1).astype(bool)
    scores = best_sign * (a.astype(float) @ D)
    return _solution(D, a, scores > 0, exact=True)


def _best_given_rows(scores: np.ndarray) -> np.ndarray:
    pos = np.where(scores > 0, scores, 0.0).sum(axis=-1)
    neg = -np.where(scores < 0, scores, 0.0).sum(axis=-1)
    return np.maximum(pos, neg)


def _local_search(D: np.ndarray, a: np.ndarray) -> tuple[float, np.ndarray]:
    # alternate A -> B -> A until stable, then try single-row flips of A
    # (each scored with its optimal B); repeat while a flip improves
    a = a.copy()
    while True:
        for sign in (1.0, -1.0):
            while True:
                b = sign * (a @ D) > 0
                a_new = (sign * (D @ b) > 0).astype(float)
                if _best_given_rows(a_new @ D) <= _best_given_rows(a @ D) + 1e-15:
                    break
                a = a_new
        scores = a @ D
        current = _best_given_rows(scores)
        flips = scores[None, :] + (1.0 - 2.0 * a)[:, None] * D
        values = _best_given_rows(flips)
        i = int(values.argmax())
        if values[i] <= current + 1e-15:
            return float(current), a
        a[i] = 1.0 - a[i]


def _alpha_heuristic(D: np.ndarray, n_starts: int, seed: int) -> AlphaSolution:
    m = D.shape[0]
    starts = list(np.eye(m))
    starts += [(np.random.default_rng(seed + k).random(m) < 0.5).astype(float) for k in range(n_starts)]
    best_val, best_a = -1.0, None
    for a0 in starts:
        value, a = _local_search(D, a0)
        if value > best_val + 1e-15:
            best_val, best_a = value, a
    if best_val <= 0:
        return AlphaSolution(0.0, (), (), exact=False)
    scores = best_a @ D
    pos = scores[scores > 0].sum()
    neg = -scores[scores < 0].sum()
    b = scores > 0 if pos >= neg else scores < 0
    return _solution(D, best_a.astype(bool), b, exact=False)


def alpha_coefficient(G: GridCopula, method: str = "auto", n_starts: int = N_STARTS,
                      seed: int = 0) -> AlphaSolution:
    """Strong-mixing coefficient ``sup_{A,B} |P(A x B) - P(A)P(B)|`` of a checkerboard.

    ``method="exact"`` enumerates row subsets (used automatically for
    ``m <= 20``); ``"heuristic"`` runs alternating maximization, polished by
    single-row flips, from every single-row start plus ``n_starts`` seeded
    random starts.
    """
    D = _excess(G)
    if method == "auto":
        method = "exact" if G.m <= EXACT_CUTOFF else "heuristic"
    if method == "exact":
        return _alpha_exact(D)
    if method == "heuristic":
        return _alpha_heuristic(D, n_starts, seed)
    raise ParameterDomainError(f"unknown alpha method {method!r}")


def rho_coefficient(G: GridCopula, method: str = "svd", tol: float = 1e-10,
                    max_iter: int = 10**5, check: bool = True) -> float:
    """Maximal correlation: largest singular value of ``Q`` on centred vectors.

    ``check=False`` skips validation, for empirical grids whose margins are
    uniform only up to one sample.
    """
    report = validate(G) if check else None
    if report is not None and not report.passed:
        raise InvalidCopulaError(f"rho needs a valid copula grid: {report.violations[0]}")
    m = G.m
    P = G.transition - 1.0 / m
    if method == "svd":
        value = float(np.linalg.svd(P, compute_uv=False)[0])
    elif method == "power":
        value = _deflated_power(P, tol, max_iter)
    else:
        raise ParameterDomainError(f"unknown rho method {method!r}")
    return min(max(value, 0.0), 1.0)


def _deflated_power(P: np.ndarray, tol: float, max_iter: int) -> float:
    m = P.shape[0]
    x = np.random.default_rng(12345).standard_normal(m)
    x -= x.mean()
    norm = np.linalg.norm(x)
    if norm == 0:
        return 0.0
    x /= norm
    sigma = 0.0
    for _ in range(max_iter):
        y = P.T @ (P @ x)
        y -= y.mean()  # stay orthogonal to the constants
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        new_sigma = float(np.sqrt(ny))
        x = y / ny
        if abs(new_sigma - sigma) < tol:
            return new_sigma
        sigma = new_sigma
    residual = float(np.linalg.norm(P.T @ (P @ x) - sigma**2 * x))
    raise NumericError(f"power iteration did not converge in {max_iter} steps (residual {residual:.3e})")


def psi_prime_lower(G: GridCopula) -> float:
    """Lower bound for psi-prime: the minimum cell density."""
    return float(G.density.min())


# ---------------------------------------------------------------------------
# scans over lags
# ---------------------------------------------------------------------------

class LogRateFit(NamedTuple):
    slope: float
    intercept: float
    residual: float


def fit_log_rate(lags: Sequence[int], values: Sequence[float], floor: float = 1e-12) -> LogRateFit | None:
    """Least-squares slope of ``log(value)`` against lag, over values above ``floor``.

    Returns None with fewer than three usable lags.
    """
    x = np.asarray(lags, dtype=float)
    y = np.asarray(values, dtype=float)
    keep = y > floor
    if keep.sum() < 3:
        return None
    x, y = x[keep], np.log(y[keep])
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return LogRateFit(float(coef[0]), float(coef[1]), resid)


@dataclass(frozen=True)
class MixingReport:
    lags: tuple[int, ...]
    alpha: tuple[float, ...]
    rho: tuple[float, ...]
    psi_prime_lower: tuple[float, ...]
    fitted_log_rate: LogRateFit | None
    alpha_stderr: tuple[float, ...] | None = None
    rho_stderr: tuple[float, ...] | None = None
    flags: tuple[str, ...] = field(default=())

    def to_csv(self) -> str:
        cols = ["lag", "alpha", "rho", "psi_prime_lower"]
        series = [self.lags, self.alpha, self.rho, self.psi_prime_lower]
        if self.alpha_stderr is not None:
            cols += ["alpha_stderr", "rho_stderr"]
            series += [self.alpha_stderr, self.rho_stderr]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row in zip(*series):
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    def summary(self) -> dict:
        fit = self.fitted_log_rate
        return {
            "lags": list(self.lags),
            "fitted_log_rate": None if fit is None else fit._asdict(),
            "flags": list(self.flags),
        }


def _flags(C: CopulaExpr, alpha: Sequence[float]) -> tuple[str, ...]:
    flags = []
    if frechet_coeffs(C) is not None and limit_classify(C).tag is not LimitTag.IndependencePi:
        flags.append("base_not_alpha_mixing")
    if alpha[-1] > 1e-3 and alpha[-1] >= 0.5 * max(alpha):
        flags.append("alpha_not_vanishing")
    return tuple(flags)


def mixing_scan(C: CopulaExpr, theta: float, family: str, n_max: int, m: int) -> MixingReport:
    """alpha, rho and the psi-prime bound of ``PerturbPi/PerturbM(C, theta)^n`` for ``n = 1..n_max``.

    Each lag's coefficients are computed on the grid of the closed-form
    n-fold perturbation mixture.
    """
    if n_max < 2:
        raise ParameterDomainError(f"n_max must be at least 2, got {n_max}")
    if family == "Pi":
        power = perturb_pi_n_fold
    elif family == "M":
        power = perturb_m_n_fold
    else:
        raise ParameterDomainError(f"family must be 'Pi' or 'M', got {family!r}")
    lags = tuple(range(1, n_max + 1))
    alpha, rho, psi = [], [], []
    for n in lags:
        G = to_grid(power(C, theta, n), m)
        alpha.append(alpha_coefficient(G).value)
        rho.append(rho_coefficient(G))
        psi.append(psi_prime_lower(G))
    return MixingReport(lags, tuple(alpha), tuple(rho), tuple(psi),
                        fit_log_rate(lags, alpha), flags=_flags(C, alpha))


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

ALPHA_THRESHOLD = 0.25
RHO_THRESHOLD = 1.0
MARGIN = 1e-9


@dataclass(frozen=True)
class Certificate:
    """A product ``C_{k_1} * ... * C_{k_s}`` whose coefficient is below the threshold."""

    kind: str
    s: int
    witness: tuple[int, ...]
    attained: float

    def __post_init__(self):
        limit = ALPHA_THRESHOLD if self.kind == "AlphaQuarter" else RHO_THRESHOLD
        if not self.attained < limit:
            raise ParameterDomainError(f"certificate value {self.attained} not below {limit}")

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "s": self.s, "witness": list(self.witness),
                           "attained": self.attained})


@dataclass(frozen=True)
class Absence:
    """No certifying product up to ``s_max``; ``attained`` is the smallest value seen."""

    kind: str
    s_max: int
    witness: tuple[int, ...]
    attained: float

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "s": None, "s_max": self.s_max, "certified": False,
                           "witness": list(self.witness), "attained": self.attained})


def _check_weights(components: Sequence, weights: Sequence[float]) -> None:
    if len(components) != len(weights) or not components:
        raise ParameterDomainError("components and weights must be non-empty and of equal length")
    if any(not 0 < w <= 1 for w in weights):
        raise ParameterDomainError("certificate weights must be strictly positive")
    if abs(sum(weights) - 1) > 1e-12:
        raise ParameterDomainError(f"weights sum to {sum(weights)!r}, not 1")


def _search(kind: str, coefficient, threshold: float, components, weights, s_max: int, m: int):
    _check_weights(components, weights)
    if m % 2:
        # an odd checkerboard of M has alpha below 1/4, which would certify M itself
        raise ParameterDomainError(f"certificate grids need an even resolution, got {m}")
    best = (np.inf, ())
    products: dict[tuple[int, ...], CopulaExpr] = {}
    for s in range(1, s_max + 1):
        for idx in itertools.product(range(len(components)), repeat=s):
            prod = components[idx[0]] if s == 1 else fold_product(products[idx[:-1]], components[idx[-1]])
            products[idx] = prod
            value = coefficient(to_grid(prod, m))
            if value < best[0]:
                best = (value, idx)
            if value < threshold - MARGIN:
                return Certificate(kind, s, idx, value)
    return Absence(kind, s_max, best[1], best[0])


def alpha_certificate(components: Sequence[CopulaExpr], weights: Sequence[float], s_max: int = 3,
                      m: int = 16) -> Certificate | Absence:
    """Search fold products of the components for one with alpha below 1/4.

    Products are tried by increasing length, lexicographically in the
    component order.  A witness implies the convex combination with these
    (strictly positive) weights generates alpha-mixing chains.
    """
    return _search("AlphaQuarter", lambda G: alpha_coefficient(G).value, ALPHA_THRESHOLD,
                   components, weights, s_max, m)


def rho_certificate(components: Sequence[CopulaExpr], weights: Sequence[float], s_max: int = 3,
                    m: int = 16) -> Certificate | Absence:
    """As :func:`alpha_certificate` with rho below 1 (exponential rho-mixing)."""
    return _search("RhoBelowOne", rho_coefficient, RHO_THRESHOLD, components, weights, s_max, m)

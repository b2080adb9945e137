import csv
import io

import numpy as np
import pytest
from scipy import integrate

from copulamix.algebra import perturb_m_n_fold, perturb_pi_n_fold
from copulamix.core import (ConvexCombo, GridBacked, M, Mardia, Pi, W, discretize,
                            eval_cdf, random_checkerboard)
from copulamix.errors import UnsupportedMeasureError
from copulamix.measures import (LINEAR_MEASURES, blomqvist_beta, gini_gamma, gini_gamma_centered,
                                kendall_tau, kendall_tau_estimate, measure, measures, measures_csv,
                                perturbed_measure, spearman_rho, tail_dependence,
                                tail_dependence_estimate)
from copulamix.simulation import kernel_step, make_rng


def mc_tau(C, n, seed):
    # oracle: concordance probability of two independent sampled pairs
    rng = make_rng(seed)
    x = rng.random((2, n))
    y = np.stack([kernel_step(C, x[0], rng), kernel_step(C, x[1], rng)])
    s = np.sign((x[0] - x[1]) * (y[0] - y[1]))
    return float(s.mean()), float(s.std() / np.sqrt(n))


# -- Spearman -------------------------------------------------------------------

def test_spearman_examples():
    assert spearman_rho(Pi()) == 0
    assert spearman_rho(M()) == 1
    assert spearman_rho(Mardia(0.3, 0.2)) == pytest.approx(0.1)


def test_spearman_on_grid_is_exact_integral():
    # oracle: 2-d adaptive quadrature of the bilinear grid CDF
    G = random_checkerboard(4, np.random.default_rng(2))
    C = GridBacked(G)
    val, _ = integrate.dblquad(lambda v, u: eval_cdf(C, u, v), 0, 1, 0, 1, epsabs=1e-12)
    assert spearman_rho(C) == pytest.approx(12 * val - 3, abs=1e-9)


def test_spearman_of_grid_m_by_hand():
    # discretized M: C(u,u) piecewise, integral of min over cells gives 1 - 1/m^2
    for m in (2, 4, 8):
        assert spearman_rho(GridBacked(discretize(M(), m))) == pytest.approx(1 - 1 / m**2, abs=1e-12)


# -- Kendall --------------------------------------------------------------------

def test_kendall_examples():
    assert kendall_tau(Pi()) == 0
    assert kendall_tau(M()) == 1
    assert kendall_tau(W()) == -1


def test_kendall_mardia_closed_form_against_monte_carlo():
    est, se = mc_tau(Mardia(0.3, 0.2), 500_000, 1)
    assert abs(kendall_tau(Mardia(0.3, 0.2)) - est) < 5 * se


def test_kendall_grid_against_monte_carlo():
    G = GridBacked(discretize(Mardia(0.3, 0.2), 64))
    est, _ = mc_tau(G, 500_000, 2)
    assert abs(kendall_tau(G) - est) < 0.02


def test_kendall_grid_quadrature_is_exact_at_multiples():
    G = GridBacked(random_checkerboard(6, np.random.default_rng(4)))
    est = kendall_tau_estimate(G)
    assert est.error < 1e-12
    assert kendall_tau(G, resolution=6) == pytest.approx(kendall_tau(G, resolution=60), abs=1e-12)


def test_kendall_grid_of_pi_is_zero():
    assert kendall_tau(GridBacked(discretize(Pi(), 8))) == pytest.approx(0, abs=1e-14)


# -- Blomqvist, Gini, tails -----------------------------------------------------

def test_blomqvist_examples():
    assert blomqvist_beta(Pi()) == 0
    assert blomqvist_beta(M()) == 1
    assert blomqvist_beta(W()) == -1


def test_gini_examples():
    assert gini_gamma(Pi()) == 2
    assert gini_gamma(M()) == 3
    assert gini_gamma(W()) == 1
    assert gini_gamma_centered(Pi()) == 0


def test_gini_grid_against_quadrature():
    C = GridBacked(random_checkerboard(5, np.random.default_rng(8)))
    val, _ = integrate.quad(lambda u: eval_cdf(C, u, u) + eval_cdf(C, u, 1 - u), 0, 1,
                            points=np.arange(1, 5) / 5, epsabs=1e-13)
    assert gini_gamma(C) == pytest.approx(4 * val, abs=1e-10)


def test_tail_examples():
    assert tail_dependence(Pi()) == (0, 0)
    assert tail_dependence(M()) == (1, 1)
    assert tail_dependence(Mardia(0.3, 0.2)) == pytest.approx((0.3, 0.3))


def test_tail_estimate_on_grid():
    est = tail_dependence_estimate(discretize(Mardia(0.3, 0.2), 64))
    assert est.order == 2
    assert est.lower == pytest.approx(0.3, abs=1e-9)
    assert est.upper == pytest.approx(0.3, abs=1e-9)
    assert not est.flagged
    assert 0 <= est.lower <= 1 and 0 <= est.upper <= 1


def test_measure_set_ranges():
    for C in (Pi(), M(), W(), Mardia(0.3, 0.2), GridBacked(random_checkerboard(8, np.random.default_rng(1)))):
        s = measures(C)
        for v in (s.rho_s, s.tau, s.beta):
            assert -1 - 1e-12 <= v <= 1 + 1e-12
        assert 1 - 1e-12 <= s.gamma <= 3 + 1e-12
        assert 0 <= s.lambda_l <= 1 and 0 <= s.lambda_u <= 1


# -- linearity and the perturbed closed forms ------------------------------------

@pytest.mark.parametrize("which", ["rho_s", "beta", "gamma"])
def test_linearity_over_convex_combinations(which):
    rng = np.random.default_rng(6)
    comps = [GridBacked(random_checkerboard(16, rng)) for _ in range(3)]
    w = rng.dirichlet(np.ones(3))
    combo = measure(ConvexCombo(tuple(w), tuple(comps)), which)
    assert combo == pytest.approx(sum(wi * measure(c, which) for wi, c in zip(w, comps)), abs=1e-10)


def test_linearity_of_tails_on_frechet_family():
    w = (0.2, 0.5, 0.3)
    comps = (Mardia(0.3, 0.2), M(), Pi())
    for which in ("lambda_l", "lambda_u"):
        combo = measure(ConvexCombo(w, comps), which)
        assert combo == pytest.approx(sum(wi * measure(c, which) for wi, c in zip(w, comps)), abs=1e-10)


def test_perturbed_measure_examples():
    for theta in (0.1, 0.5, 0.9):
        assert perturbed_measure(M(), theta, 1, "beta", "Pi") == pytest.approx(1 - theta)
    for n in (1, 4):
        assert perturbed_measure(Mardia(0.3, 0.2), 1, n, "gamma", "Pi") == pytest.approx(2)
    closed = perturbed_measure(Mardia(0.5, 0.5), 0.2, 3, "rho_s", "M")
    direct = spearman_rho(perturb_m_n_fold(Mardia(0.5, 0.5), 0.2, 3))
    assert closed == pytest.approx(direct, abs=1e-8)


def test_perturbed_tau_is_rejected():
    with pytest.raises(UnsupportedMeasureError, match="nonlinear"):
        perturbed_measure(M(), 0.3, 2, "tau", "Pi")


@pytest.mark.parametrize("family", ["Pi", "M"])
def test_closed_forms_match_direct_expansion(family):
    rng = np.random.default_rng(12)
    power = perturb_pi_n_fold if family == "Pi" else perturb_m_n_fold
    bases = [Mardia(0.3, 0.2), W(), GridBacked(random_checkerboard(16, rng))]
    for C in bases:
        theta = float(rng.uniform(0.05, 0.95))
        n = int(rng.integers(1, 7))
        for which in LINEAR_MEASURES:
            closed = perturbed_measure(C, theta, n, which, family)
            direct = measure(power(C, theta, n), which)
            assert closed == pytest.approx(direct, abs=1e-8)


def test_pi_family_asymptotics():
    theta = 0.3
    for which in LINEAR_MEASURES:
        for C in (Mardia(0.3, 0.2), M()):
            val = perturbed_measure(C, theta, 40, which, "Pi")
            assert abs(val - measure(Pi(), which)) < 1e-4


@pytest.mark.parametrize("which", ["rho_s", "tau", "gamma"])
def test_grid_converges_to_symbolic(which):
    C = Mardia(0.3, 0.2)
    exact = measure(C, which)
    e64 = abs(measure(GridBacked(discretize(C, 64)), which) - exact)
    e128 = abs(measure(GridBacked(discretize(C, 128)), which) - exact)
    assert e64 < 0.05
    assert e128 <= e64 / 1.5 or e128 < 1e-12


def test_measures_csv_format():
    rows = [dict(measure="beta", family="Pi", theta=0.5, n=1, value=0.5, method="closed_form")]
    text = measures_csv(rows)
    assert text.endswith("\n") and "\r" not in text
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert list(parsed[0]) == ["measure", "family", "theta", "n", "value", "method"]

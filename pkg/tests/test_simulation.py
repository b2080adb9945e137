import numpy as np
import pytest
from scipy import stats

from copulamix.algebra import mardia_n_fold
from copulamix.core import GridBacked, M, Mardia, PerturbPi, Pi, discretize, random_checkerboard
from copulamix.errors import ParameterDomainError, SampleSizeError
from copulamix.noise import grid_cdf_distance
from copulamix.simulation import (empirical_lag_copula, empirical_mixing, kernel_step, make_rng,
                                  sample_chain)

N = 10**6


def chi_square_uniform(values, bins=20):
    counts = np.bincount(np.minimum((values * bins).astype(int), bins - 1), minlength=bins)
    expected = values.size / bins
    return ((counts - expected) ** 2 / expected).sum(), stats.chi2.ppf(0.99, bins - 1)


# -- sampling -------------------------------------------------------------------

def test_pi_chain_is_uncorrelated():
    x = sample_chain(Pi(), N, 1).values
    r = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert abs(r) < 4 / np.sqrt(N)


def test_m_chain_is_constant():
    x = sample_chain(M(), 100, 5).values
    assert np.all(x == x[0])


def test_frechet_copy_fraction():
    x = sample_chain(Mardia(0.3, 0.2), N, 3).values
    # binomial 99.99% band is 0.3 +- 3.9 * sqrt(0.21 / N) ~ 0.0018
    assert abs(np.mean(x[1:] == x[:-1]) - 0.3) < 0.002


@pytest.mark.parametrize("C", [Pi(), GridBacked(random_checkerboard(8, np.random.default_rng(1)))],
                         ids=["Pi", "grid"])
def test_stationarity(C):
    chi, band = chi_square_uniform(sample_chain(C, N, 2).values)
    assert chi < band


def test_stationarity_of_dependent_chain_after_thinning():
    # consecutive states of a Frechet chain repeat, which inflates the
    # chi-square statistic; every 25th state is independent to within 0.5**25
    x = sample_chain(Mardia(0.3, 0.2), N, 2).values[::25]
    chi, band = chi_square_uniform(x)
    assert chi < band


def test_values_in_unit_interval():
    for C in (Mardia(0.1, 0.6), GridBacked(random_checkerboard(5, np.random.default_rng(3)))):
        x = sample_chain(C, 20000, 4).values
        assert x.min() >= 0 and x.max() <= 1


def test_determinism():
    C = PerturbPi(GridBacked(random_checkerboard(6, np.random.default_rng(9))), 0.3)
    a, b = sample_chain(C, 5000, 42), sample_chain(C, 5000, 42)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_chain(C, 5000, 43).values)
    f = sample_chain(Mardia(0.3, 0.2), 5000, 42)
    assert np.array_equal(f.values, sample_chain(Mardia(0.3, 0.2), 5000, 42).values)


def test_mixture_sampling_matches_closed_form_chain():
    # mixture steps of PerturbPi against exact inversion of the discretized kernel
    base = GridBacked(random_checkerboard(8, np.random.default_rng(4)))
    mixed = sample_chain(PerturbPi(base, 0.4), N, 6, method="mixture")
    exact = sample_chain(GridBacked(discretize(PerturbPi(base, 0.4), 8)), N, 7, method="inversion")
    A = empirical_lag_copula(mixed, 1, 16)
    B = empirical_lag_copula(exact, 1, 16)
    assert grid_cdf_distance(A, B) < 0.01


def test_frechet_inversion_matches_mixture():
    a = sample_chain(Mardia(0.3, 0.2), 200_000, 1, method="inversion")
    b = sample_chain(Mardia(0.3, 0.2), 200_000, 2)
    assert grid_cdf_distance(empirical_lag_copula(a, 1, 8), empirical_lag_copula(b, 1, 8)) < 0.01


def test_grid_kernel_step_reproduces_conditional():
    # oracle: sampled y given x in a cell follows the cell row of the transition matrix
    G = random_checkerboard(4, np.random.default_rng(5))
    rng = make_rng(0)
    x = np.full(400_000, 0.6)
    y = kernel_step(GridBacked(G), x, rng)
    hist = np.bincount((y * 4).astype(int), minlength=4) / x.size
    np.testing.assert_allclose(hist, G.transition[2], atol=4e-3)


def test_seed_and_length_checks():
    with pytest.raises(ParameterDomainError):
        sample_chain(Pi(), 0, 1)
    with pytest.raises(ParameterDomainError):
        sample_chain(Pi(), 10, -1)
    with pytest.raises(ParameterDomainError):
        sample_chain(Pi(), 10, 1, method="gibbs")


def test_path_csv():
    text = sample_chain(Pi(), 3, 1).to_csv()
    lines = text.splitlines()
    assert lines[0] == "step,value" and len(lines) == 4 and "\r" not in text


# -- lag copulas ----------------------------------------------------------------

def test_lag_copula_examples():
    G = empirical_lag_copula(sample_chain(M(), 1001, 3), 1, 4)
    np.testing.assert_allclose(G.mass, np.eye(4) / 4)
    P = empirical_lag_copula(sample_chain(Pi(), N, 8), 3, 8)
    se = np.sqrt((1 / 64) * (63 / 64) / N)
    assert np.abs(P.mass - 1 / 64).max() < 5 * se


def test_lag_two_copula_of_frechet_chain():
    path = sample_chain(Mardia(0.3, 0.2), N, 11)
    G = empirical_lag_copula(path, 2, 16)
    ref = discretize(mardia_n_fold(0.3, 0.2, 2).to_expr(), 16)
    assert grid_cdf_distance(G, ref) < 0.02


def test_lag_copula_length_check():
    with pytest.raises(SampleSizeError):
        empirical_lag_copula(sample_chain(Pi(), 100, 1), 1, 4)


# -- empirical mixing -----------------------------------------------------------

def test_pi_chain_alpha_within_noise_floor():
    rep = empirical_mixing(sample_chain(Pi(), N, 12), [1, 2, 3], 8)
    for a, e in zip(rep.alpha, rep.alpha_stderr):
        assert a < 3 * e


def test_m_chain_alpha_is_quarter():
    # n - lag pairs do not split evenly into 4 bins, hence the small offset
    rep = empirical_mixing(sample_chain(M(), 10_000, 1), [1, 2], 4)
    np.testing.assert_allclose(rep.alpha, 0.25, atol=2e-4)


def test_perturbed_m_chain_rate():
    rep = empirical_mixing(sample_chain(PerturbPi(M(), 0.5), N, 13), [1, 2, 3, 4, 5], 4)
    assert abs(rep.fitted_log_rate.slope - np.log(0.5)) < 0.1


def test_mixing_csv_has_stderr_columns():
    rep = empirical_mixing(sample_chain(Pi(), 20_000, 1), [1], 4)
    assert rep.to_csv().splitlines()[0] == "lag,alpha,rho,psi_prime_lower,alpha_stderr,rho_stderr"

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from mmprior import gradkit as gk
from mmprior import priors as pr

BETAS = [1.0, 2.0, 4.0, 8.0]


def gg(beta, alpha=None, mu=0.0):
    alpha = pr.unit_variance_alpha(beta) if alpha is None else alpha
    return pr.GeneralizedGaussianComponent(np.array([mu]), alpha, beta)


def pdf_1d(comp):
    return lambda z: math.exp(float(comp.log_pdf(np.array([[z]]))[0]))


# ---------------------------------------------------------------- Gaussian

def test_standard_gaussian_at_zero():
    c = pr.GaussianComponent([0.0], [1.0])
    assert c.log_pdf(np.zeros((1, 1)))[0] == pytest.approx(-0.9189385332046727, abs=1e-15)


def test_gaussian_shift_invariance():
    rng = np.random.default_rng(0)
    mu = rng.normal(size=3)
    var = rng.uniform(0.5, 2, size=3)
    u = rng.normal(size=(10, 3))
    a = pr.GaussianComponent(mu, var).log_pdf(mu + u)
    b = pr.GaussianComponent(np.zeros(3), var).log_pdf(u)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


def test_gaussian_2d_against_high_precision():
    mu, var, z = [0.3, -1.1], [0.7, 2.5], [1.9, 0.4]
    mpmath.mp.dps = 40
    ref = sum(-mpmath.mpf(1) / 2 * mpmath.log(2 * mpmath.pi * mpmath.mpf(v))
              - (mpmath.mpf(zi) - mpmath.mpf(m)) ** 2 / (2 * mpmath.mpf(v))
              for zi, m, v in zip(z, mu, var))
    got = pr.GaussianComponent(mu, var).log_pdf(np.array([z]))[0]
    assert abs(got - float(ref)) < 1e-12


def test_gaussian_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        pr.GaussianComponent([0.0], [0.0])


# ---------------------------------------------------------------- generalized Gaussian

def test_unit_variance_alpha_closed_forms():
    assert pr.unit_variance_alpha(2.0) == pytest.approx(math.sqrt(2.0), rel=1e-14)
    assert pr.unit_variance_alpha(1.0) == pytest.approx(math.sqrt(0.5), rel=1e-14)


def test_gen_gaussian_beta2_equals_standard_gaussian():
    rng = np.random.default_rng(1)
    z = rng.uniform(-6, 6, size=(500, 3))
    g = pr.GeneralizedGaussianComponent(np.zeros(3), math.sqrt(2.0), 2.0)
    n = pr.GaussianComponent(np.zeros(3), np.ones(3))
    assert np.max(np.abs(g.log_pdf(z) - n.log_pdf(z))) < 1e-9


def test_gen_gaussian_at_mean():
    for beta in BETAS:
        alpha = 0.8
        got = gg(beta, alpha, 0.4).log_pdf(np.array([[0.4]]))[0]
        assert got == pytest.approx(math.log(beta / (2 * alpha * math.gamma(1 / beta))), rel=1e-13)


@pytest.mark.parametrize("beta", BETAS + [0.7, 3.0])
def test_unit_variance_by_quadrature(beta):
    comp = gg(beta)
    f = pdf_1d(comp)
    half, _ = integrate.quad(lambda z: z * z * f(z), 0, np.inf, epsabs=1e-13, epsrel=1e-13, limit=400)
    var = 2 * half
    assert abs(var - 1.0) < 1e-6
    assert comp.variance[0] == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("beta", BETAS)
def test_gen_gaussian_normalizes(beta):
    mu = 0.7
    f = pdf_1d(gg(beta, mu=mu))
    mass, _ = integrate.quad(f, mu - 12, mu + 12, epsabs=1e-12, epsrel=1e-12, limit=400)
    assert abs(mass - 1.0) < 1e-6


def test_gaussian_normalizes():
    mu = -0.3
    f = pdf_1d(pr.GaussianComponent([mu], [1.0]))
    mass, _ = integrate.quad(f, mu - 12, mu + 12, epsabs=1e-12, epsrel=1e-12)
    assert abs(mass - 1.0) < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(-5, 5), st.sampled_from(BETAS))
def test_gen_gaussian_symmetry(u, mu, beta):
    c = gg(beta, mu=mu)
    lhs = c.log_pdf(np.array([[mu + u]]))[0]
    rhs = c.log_pdf(np.array([[mu - u]]))[0]
    # mu +/- u round independently, so compare through the exact offset
    a = abs((mu + u) - mu)
    b = abs(mu - (mu - u))
    if a == b:
        assert lhs == rhs


def test_gen_gaussian_rejects_bad_params():
    with pytest.raises(ValueError):
        pr.GeneralizedGaussianComponent([0.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        pr.GeneralizedGaussianComponent([0.0], -1.0, 2.0)


def test_gen_gaussian_gradient_wrt_input():
    comp = pr.GeneralizedGaussianComponent(np.array([0.2, -0.5]), pr.unit_variance_alpha(4.0), 4.0)
    rng = np.random.default_rng(3)
    ps = gk.ParamSet()
    ps.add("z", rng.uniform(0.5, 2.0, size=(5, 2)) * np.array([1, -1]))
    err = gk.gradient_check(lambda: gk.reduce_sum(comp.log_pdf(ps["z"])), ps, 1e-5)
    assert err < 1e-5


# ---------------------------------------------------------------- mixture

def test_mixture_k1_equals_component():
    c = pr.GaussianComponent([1.0, 2.0], [0.5, 3.0])
    m = pr.MixturePrior((c,))
    z = np.random.default_rng(0).normal(size=(20, 2))
    np.testing.assert_array_equal(m.mixture_log_pdf(z), c.log_pdf(z))


def test_mixture_identical_components():
    c = pr.GaussianComponent([1.0, 2.0], [0.5, 3.0])
    m = pr.MixturePrior((c, c))
    z = np.random.default_rng(0).normal(size=(20, 2))
    np.testing.assert_allclose(m.mixture_log_pdf(z), c.log_pdf(z), rtol=0, atol=1e-13)


@pytest.mark.parametrize("seed", range(10))
def test_mixture_against_extended_precision(seed):
    rng = np.random.default_rng(seed)
    comps = tuple(pr.GaussianComponent(rng.normal(scale=3, size=2), rng.uniform(0.3, 2, size=2))
                  for _ in range(3))
    m = pr.MixturePrior(comps)
    z = rng.normal(scale=4, size=(8, 2))
    got = m.mixture_log_pdf(z)
    mpmath.mp.dps = 50
    for row, g in zip(z, got):
        total = mpmath.mpf(0)
        for c in comps:
            lp = sum(-mpmath.log(2 * mpmath.pi * mpmath.mpf(v)) / 2
                     - (mpmath.mpf(x) - mpmath.mpf(mu)) ** 2 / (2 * mpmath.mpf(v))
                     for x, mu, v in zip(row, c.mu, c.var))
            total += mpmath.exp(lp)
        ref = float(mpmath.log(total / 3))
        assert abs(g - ref) / abs(ref) < 1e-12


def test_mixture_stable_for_very_negative_logs():
    m = pr.gaussian_mixture(pr.bimodal_means(1, 2.0), var=1e-8)
    z = np.array([[1e4]])  # component log-pdfs around -5e15
    out = m.mixture_log_pdf(z)
    assert np.isfinite(out).all()
    z = gk.Tensor(np.array([[200.0]]))
    m2 = pr.gaussian_mixture(pr.bimodal_means(1, 2.0), var=2e-4)
    assert np.isfinite(m2.mixture_log_pdf(z).data).all()


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 50), st.floats(-30, 30), st.floats(-3, 3))
def test_mixture_lower_bound(d, z0, z1):
    m = pr.gaussian_mixture(pr.bimodal_means(2, d))
    z = np.array([[z0, z1]])
    comp = np.array([m.component_log_pdf(z, i)[0] for i in range(2)])
    assert m.mixture_log_pdf(z)[0] >= comp.max() - math.log(2) - 1e-12


def test_component_log_pdf_far_separated_limit():
    m = pr.gaussian_mixture(pr.bimodal_means(2, 60.0))
    z = np.array([[-30.3, 0.2]])
    assert m.component_log_pdf(z, 0)[0] == pytest.approx(m.mixture_log_pdf(z)[0] + math.log(2), abs=1e-12)


def test_component_log_pdf_dispatch_and_range():
    m = pr.gaussian_mixture(pr.bimodal_means(2, 4.0))
    z = np.array([[0.5, 0.5]])
    assert m.component_log_pdf(z, 1)[0] == m.components[1].log_pdf(z)[0]
    with pytest.raises(IndexError):
        m.component_log_pdf(z, 2)


def test_component_log_pdf_gradient():
    m = pr.gaussian_mixture(pr.bimodal_means(2, 4.0), var=0.7)
    ps = gk.ParamSet()
    ps.add("z", np.random.default_rng(2).normal(size=(6, 2)))
    assert gk.gradient_check(lambda: gk.reduce_sum(m.component_log_pdf(ps["z"], 1)), ps) < 1e-5
    assert gk.gradient_check(lambda: gk.reduce_sum(m.mixture_log_pdf(ps["z"])), ps) < 1e-5


def test_tensor_and_array_paths_agree():
    rng = np.random.default_rng(4)
    z = rng.normal(scale=3, size=(30, 3))
    for m in (pr.gaussian_mixture(pr.bimodal_means(3, 5.0)),
              pr.gen_gaussian_mixture(pr.bimodal_means(3, 5.0))):
        np.testing.assert_allclose(m.mixture_log_pdf(gk.Tensor(z)).data, m.mixture_log_pdf(z),
                                   rtol=1e-14, atol=1e-12)
        a = rng.integers(0, 2, size=30)
        np.testing.assert_allclose(m.assigned_log_pdf(gk.Tensor(z), a).data,
                                   m.assigned_log_pdf(z, a), rtol=1e-14, atol=1e-12)


def test_assigned_log_pdf_has_no_log_k_term():
    m = pr.gaussian_mixture(pr.bimodal_means(2, 4.0))
    z = np.array([[-2.0, 0.0], [2.0, 0.0]])
    got = m.assigned_log_pdf(z, np.array([0, 1]))
    np.testing.assert_array_equal(got, [m.components[0].log_pdf(z)[0], m.components[1].log_pdf(z)[1]])


def test_mixture_requires_homogeneous_components():
    with pytest.raises(ValueError):
        pr.MixturePrior((pr.GaussianComponent([0.0], [1.0]), gg(4.0)))
    with pytest.raises(ValueError):
        pr.MixturePrior(())


# ---------------------------------------------------------------- sampling

def test_sample_zero():
    z, lab = pr.standard_gaussian(2).sample(0, 0)
    assert z.shape == (0, 2) and lab.shape == (0,)


def test_sample_labels_balanced():
    m = pr.gaussian_mixture(pr.bimodal_means(2, 40.0))
    n = 20_000
    _, lab = m.sample(n, 5)
    sd = math.sqrt(n * 0.25)
    assert abs((lab == 0).sum() - n / 2) < 3 * sd


def test_sample_moments_match_prior():
    m = pr.gaussian_mixture([[1.0, -2.0]], var=2.0)
    n = 50_000
    z, _ = m.sample(n, 11)
    se_mean = math.sqrt(2.0 / n)
    assert np.all(np.abs(z.mean(axis=0) - [1.0, -2.0]) < 3 * se_mean)
    # variance of the sample variance for a Gaussian: 2 sigma^4 / n
    se_var = math.sqrt(2 * 4.0 / n)
    assert np.all(np.abs(z.var(axis=0) - 2.0) < 3 * se_var)
    cov = np.cov(z.T)[0, 1]
    assert abs(cov) < 3 * 2.0 / math.sqrt(n)


def test_gen_gaussian_sample_moment_ratio():
    beta = 4.0
    comp = gg(beta)
    f = pdf_1d(comp)
    m2, _ = integrate.quad(lambda z: z ** 2 * f(z), -12, 12, limit=400, points=[0.0])
    m4, _ = integrate.quad(lambda z: z ** 4 * f(z), -12, 12, limit=400, points=[0.0])
    m8, _ = integrate.quad(lambda z: z ** 8 * f(z), -12, 12, limit=400, points=[0.0])
    # closed form for beta=4: m4/m2^2 = Gamma(5/4)Gamma(1/4)/Gamma(3/4)^2
    closed = math.gamma(1.25) * math.gamma(0.25) / math.gamma(0.75) ** 2
    assert m4 / m2 ** 2 == pytest.approx(closed, rel=1e-8)
    n = 200_000
    z = comp.sample(n, np.random.default_rng(9))[:, 0]
    se4 = math.sqrt((m8 - m4 ** 2) / n)
    assert abs(np.mean(z ** 4) - m4) < 3 * se4
    se2 = math.sqrt((m4 - m2 ** 2) / n)
    assert abs(np.mean(z ** 2) - m2) < 3 * se2


def test_placed_means():
    np.testing.assert_array_equal(pr.bimodal_means(3, 8.0), [[-4, 0, 0], [4, 0, 0]])
    axes = pr.placed_means(4, 2, 6.0, "axes")
    np.testing.assert_array_equal(axes, [[-3, 0], [3, 0], [0, -3], [0, 3]])
    col = pr.placed_means(4, 2, 6.0, "collinear")
    np.testing.assert_array_equal(col[:, 0], [0, 6, 12, 18])
    with pytest.raises(ValueError):
        pr.placed_means(5, 2, 1.0, "axes")


def test_zero_distance_mixture_is_the_component():
    z = np.random.default_rng(0).normal(size=(50, 2))
    m = pr.gaussian_mixture(pr.bimodal_means(2, 0.0))
    np.testing.assert_allclose(m.mixture_log_pdf(z), pr.standard_gaussian(2).mixture_log_pdf(z),
                               rtol=0, atol=1e-13)

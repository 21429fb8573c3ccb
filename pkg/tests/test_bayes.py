import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from twostage.bayes import (BetaPosterior, DirichletPosterior, beta_sf, beta_tail, betainc,
                            dirichlet_margin_tail, pava_isotonic)


def quad_tail(a, b, x):
    """Pr(X > x), X ~ Beta(a, b), by adaptive quadrature of the density."""
    if x >= 1:
        return 0.0
    log_norm = special.betaln(a, b)
    if b < 1:
        # (1 - v)^(b - 1) is singular at 1: let quad carry it as an algebraic weight
        g = lambda v: math.exp((a - 1) * math.log(v) - log_norm)
        val, _ = integrate.quad(g, x, 1.0, weight="alg", wvar=(0.0, b - 1), epsabs=1e-14,
                                epsrel=1e-13, limit=500)
        return val
    f = lambda v: math.exp((a - 1) * math.log(v) + (b - 1) * math.log1p(-v) - log_norm)
    mode = (a - 1) / (a + b - 2) if a > 1 and b > 1 else None
    pts = [mode] if mode is not None and x < mode < 1 else None
    val, _ = integrate.quad(f, x, 1.0, points=pts, epsabs=1e-14, epsrel=1e-13, limit=500)
    return val


def mc_margin_tail(alphas, union, threshold, draws, rng, chunk=2_000_000):
    hits = 0
    idx = [i - 1 for i in union]
    for lo in range(0, draws, chunk):
        n = min(chunk, draws - lo)
        g = np.stack([rng.standard_gamma(a, n) for a in alphas])
        hits += int(np.count_nonzero(g[idx].sum(0) / g.sum(0) > threshold))
    return hits / draws


# ------------------------------------------------------------------ beta

def test_uniform_and_boundaries():
    u = BetaPosterior(1, 1)
    assert beta_tail(u, 0.5) == pytest.approx(0.5, abs=1e-15)
    assert beta_tail(u, 0.0) == 1.0
    assert beta_tail(u, 1.0) == 0.0


def test_beta_3_2_against_quadrature():
    # density 12 x^2 (1-x): tail = 1 - (4 x^3 - 3 x^4)
    x = 0.35
    assert quad_tail(3, 2, x) == pytest.approx(1 - (4 * x**3 - 3 * x**4), abs=1e-13)
    assert beta_tail(BetaPosterior(3, 2), x) == pytest.approx(quad_tail(3, 2, x), abs=1e-12)


@pytest.mark.parametrize("a,b,x", [(0.5, 0.5, 0.1), (1, 41, 0.35), (41, 1, 0.35),
                                   (120.5, 80.25, 0.6), (2.1, 300, 0.004), (7, 3, 0.999)])
def test_beta_tail_hard_cases(a, b, x):
    assert beta_sf(a, b, x) == pytest.approx(quad_tail(a, b, x), abs=1e-10)
    assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-12)


@given(st.floats(0.1, 80), st.floats(0.1, 80), st.floats(0, 1), st.floats(0, 1))
def test_beta_tail_monotone_in_threshold(a, b, x, y):
    lo, hi = sorted((x, y))
    post = BetaPosterior(a, b)
    assert beta_tail(post, lo) >= beta_tail(post, hi) - 1e-13


@given(st.floats(0.1, 80), st.floats(0.1, 80), st.floats(0.001, 0.999))
def test_beta_symmetry(a, b, x):
    assert beta_sf(a, b, x) + beta_sf(b, a, 1 - x) == pytest.approx(1.0, abs=1e-12)


def test_beta_rejects_bad_input():
    with pytest.raises(ValueError):
        BetaPosterior(0, 1)
    with pytest.raises(ValueError):
        beta_tail(BetaPosterior(1, 1), 1.5)


# ------------------------------------------------------------------ dirichlet

def test_toxicity_margin_is_a_beta_tail():
    post = DirichletPosterior((1.2, 3.4, 0.7, 2.2))
    assert dirichlet_margin_tail(post, {3, 4}, 0.3) == beta_tail(BetaPosterior(0.7 + 2.2, 1.2 + 3.4), 0.3)


def test_symmetric_dirichlet_half():
    post = DirichletPosterior.from_prior((0.25,) * 4, (0, 0, 0, 0))
    assert dirichlet_margin_tail(post, {1, 3}, 0.5) == pytest.approx(0.5, abs=1e-12)


def test_dirichlet_against_monte_carlo():
    post = DirichletPosterior.from_prior((0.1, 0.4, 0.1, 0.4), (3, 5, 1, 1))
    rng = np.random.default_rng(11)
    mc = mc_margin_tail(post.alphas, (1, 3), 0.25, 10**7, rng)
    assert dirichlet_margin_tail(post, {1, 3}, 0.25) == pytest.approx(mc, abs=3e-4)


@given(st.tuples(*[st.floats(0.05, 30)] * 4), st.sets(st.integers(1, 4), min_size=1, max_size=3),
       st.floats(0.01, 0.99))
def test_complement_identity(alphas, union, t):
    post = DirichletPosterior(alphas)
    rest = {1, 2, 3, 4} - union
    assert dirichlet_margin_tail(post, union, t) == pytest.approx(
        1 - dirichlet_margin_tail(post, rest, 1 - t), abs=1e-12)


def test_dirichlet_validation():
    with pytest.raises(ValueError):
        DirichletPosterior.from_prior((0.5, 0.5, 0.5, 0.5), (0, 0, 0, 0))
    post = DirichletPosterior((1, 1, 1, 1))
    for bad in (set(), {1, 2, 3, 4}, {0, 1}):
        with pytest.raises(ValueError):
            dirichlet_margin_tail(post, bad, 0.5)


# ------------------------------------------------------------------ isotonic

def exact_isotonic(values, weights):
    """Minimum weighted SSE over all partitions into consecutive blocks with rising means."""
    n = len(values)
    best = None
    for cuts in itertools.product((0, 1), repeat=n - 1):
        blocks, start = [], 0
        for i, c in enumerate(cuts, start=1):
            if c:
                blocks.append((start, i))
                start = i
        blocks.append((start, n))
        fit = []
        for lo, hi in blocks:
            w = sum(weights[lo:hi])
            fit += [sum(v * x for v, x in zip(values[lo:hi], weights[lo:hi])) / w] * (hi - lo)
        if any(b < a - 1e-15 for a, b in zip(fit, fit[1:])):
            continue
        sse = sum(w * (v - f) ** 2 for v, w, f in zip(values, weights, fit))
        if best is None or sse < best[0]:
            best = (sse, fit)
    return best


def grid_isotonic_sse(values, weights, step=0.01):
    """Minimum weighted SSE over non-decreasing vectors on a grid (dynamic programming)."""
    grid = np.arange(-0.5, 1.5 + step / 2, step)
    cost = np.zeros_like(grid)
    for v, w in zip(values, weights):
        cost = np.minimum.accumulate(cost) + w * (grid - v) ** 2
    return float(cost.min())


def sse(values, weights, fit):
    return sum(w * (v - f) ** 2 for v, w, f in zip(values, weights, fit))


@pytest.mark.parametrize("values,weights,expected", [
    ((0.1, 0.2, 0.3), (1, 1, 1), (0.1, 0.2, 0.3)),
    ((0.3, 0.1), (1, 1), (0.2, 0.2)),
    ((0.0, 0.33, 0.2, 0.5), (3, 3, 6, 3), (0.0, 2.19 / 9, 2.19 / 9, 0.5)),
])
def test_pava_examples(values, weights, expected):
    assert pava_isotonic(values, weights) == pytest.approx(expected, abs=1e-12)
    assert exact_isotonic(values, weights)[1] == pytest.approx(expected, abs=1e-12)


@settings(max_examples=1000)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0.1, 10)), min_size=1, max_size=4))
def test_pava_is_the_isotonic_optimum(pairs):
    values, weights = [p[0] for p in pairs], [p[1] for p in pairs]
    fit = pava_isotonic(values, weights)
    assert all(b >= a - 1e-12 for a, b in zip(fit, fit[1:]))
    best_sse, best_fit = exact_isotonic(values, weights)
    assert fit == pytest.approx(best_fit, abs=1e-9)
    # no monotone vector on a 0.01 grid does better
    assert sse(values, weights, fit) <= grid_isotonic_sse(values, weights) + 1e-12
    # weighted mean preserved, and a second pass changes nothing
    assert np.dot(fit, weights) == pytest.approx(np.dot(values, weights), abs=1e-9)
    assert pava_isotonic(fit, weights) == pytest.approx(fit, abs=1e-12)


def test_pava_validation():
    with pytest.raises(ValueError):
        pava_isotonic([], [])
    with pytest.raises(ValueError):
        pava_isotonic([0.1], [0])

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from chathawkes import EmotionSet, HawkesParams, ShapeConfig, VideoSession
from chathawkes.intensity import (
    M1,
    BackgroundCache,
    background_S,
    compensator,
    endo_rate,
    exo_rate,
    total_intensity,
)
from chathawkes.kernels import lognormal_shape

TWO = EmotionSet(("anger", "sadness"))
SECONDS = ShapeConfig.from_peak_median(2.0, 10.0)


def params(mu0=(0.5, 0.5), nu=0.0, alpha=0.0, gamma=(1.0, 1.0), shape=ShapeConfig(), es=TWO):
    k = len(es)
    return HawkesParams(es, np.array(mu0, float), np.array(gamma, float),
                        np.broadcast_to(np.asarray(nu, float), (k, k)).copy(),
                        np.broadcast_to(np.asarray(alpha, float), (k, k)).copy(), shape)


def test_background_empty():
    t = np.linspace(0, 10, 7)
    assert np.all(background_S(t, [], ShapeConfig()) == 0)


def test_background_single_subtitle_seconds():
    v = background_S(10.0, [0.0], SECONDS)
    assert v == pytest.approx(float(lognormal_shape(10.0, SECONDS)), rel=1e-15)
    assert v == pytest.approx(0.03144, abs=1e-5)


def test_background_linearity_and_strictness():
    one = background_S(0.7, [0.2], ShapeConfig())
    assert background_S(0.7, [0.2, 0.2], ShapeConfig()) == 2 * one
    assert background_S(0.2, [0.2], ShapeConfig()) == 0.0


def test_exo_rate_cases():
    s = VideoSession.from_label_lists("s", 5.0, [[], []], [[], [1.0]])
    p = params(mu0=(0.3, 0.1))
    assert exo_rate(2.0, 0, p, s) == 0.3
    # mu0 = 0, nu = 2 on the only subtitle source
    nu = np.zeros((2, 2))
    nu[0, 1] = 2.0
    p2 = params(mu0=(0.0, 0.0)).replace(nu=nu)
    t = np.array([0.5, 1.1, 3.0])
    assert np.allclose(exo_rate(t, 0, p2, s), 2 * background_S(t, [1.0], p2.shape), rtol=0, atol=0)
    # a sadness subtitle raises anger's rate only through the cross weight
    assert exo_rate(1.1, 0, p2, s) > 0.0
    assert exo_rate(1.1, 1, p2, s) == 0.0


def test_total_intensity_single_kernel_and_strict():
    g = 0.8
    alpha = np.array([[0.0, 1.0], [0.0, 0.0]])
    p = params(mu0=(0.2, 0.2), gamma=(g, 1.0)).replace(alpha=alpha)
    s = VideoSession.from_label_lists("s", 10.0, [[], [3.0]])
    assert total_intensity(3.0 + g, 0, p, s) == pytest.approx(0.2 + math.exp(-1) / g, rel=1e-14)
    assert total_intensity(3.0, 0, p, s) == 0.2
    assert total_intensity(1.0, 0, params(mu0=(0.7, 0.1)), s) == 0.7


def test_jump_size_with_multiplicity():
    alpha = np.array([[0.4, 0.3], [0.1, 0.2]])
    g = (0.5, 2.0)
    p = params(gamma=g).replace(alpha=alpha)
    s = VideoSession.from_label_lists("s", 10.0, [[1.0, 2.0, 2.0], [2.0]])
    for e in range(2):
        before = total_intensity(2.0, e, p, s)
        after = total_intensity(2.0 + 1e-12, e, p, s)
        expect = (2 * alpha[e, 0] + alpha[e, 1]) / g[e]
        assert after - before == pytest.approx(expect, rel=1e-9)


def test_compensator_poisson_and_kernel_mass():
    s = VideoSession.from_label_lists("s", 1e4, [[1.0], []])
    p = params(mu0=(0.3, 0.0))
    assert compensator(0, p, s, 7.5) == pytest.approx(0.3 * 7.5, rel=1e-15)
    alpha = np.array([[0.0, 0.0], [0.6, 0.0]])
    q = params(mu0=(0.0, 0.0), gamma=(1.0, 0.5)).replace(alpha=alpha)
    assert compensator(1, q, s, 1e4) == pytest.approx(0.6, abs=1e-12)


def test_compensator_subtitle_at_median():
    nu = np.array([[0.8, 0.0], [0.0, 0.0]])
    p = params(mu0=(0.0, 0.0), shape=SECONDS).replace(nu=nu)
    s = VideoSession.from_label_lists("s", 60.0, [[], []], [[0.0], []])
    assert compensator(0, p, s, 10.0) == pytest.approx(0.8 * 0.5, rel=1e-12)


def test_m1_cases():
    cfg = ShapeConfig()
    assert M1([0.0], 1e6, cfg) == pytest.approx(1.0, abs=1e-12)
    assert M1([2.0], 2.0 + math.exp(cfg.mu), cfg) == pytest.approx(0.5, abs=1e-12)
    one = M1([1.0], 3.0, cfg)
    assert M1([1.0, 1.0, 1.0], 3.0, cfg) == pytest.approx(3 * one, rel=1e-15)
    assert M1([], 3.0, cfg) == 0.0


@pytest.mark.parametrize("shape", [ShapeConfig(), ShapeConfig.powerlaw(2.5), ShapeConfig.powerlaw(4.0, 0.05)])
def test_m1_closed_form_matches_quadrature(shape):
    rng = np.random.default_rng(11)
    subs = np.sort(rng.uniform(0, 20, 15))
    T = 21.0
    closed = M1(subs, T, shape)
    simpson = M1(subs, T, shape, closed_form=False)
    assert closed == pytest.approx(simpson, rel=1e-7, abs=1e-6)
    # independent check with scipy's quadrature, one subtitle at a time
    scale = shape.mode() if shape.family == "lognormal" else shape.eps
    quad = 0.0
    for tau in subs:
        pts = [x for x in (scale, 10 * scale, 100 * scale) if x < T - tau]
        quad += integrate.quad(shape.density, 0, T - tau, points=pts or None, limit=200,
                               epsabs=1e-11, epsrel=1e-11)[0]
    assert closed == pytest.approx(quad, rel=1e-7, abs=1e-6)


def test_m1_nondecreasing_in_T():
    subs = [0.5, 1.0, 4.0]
    vals = [M1(subs, T, ShapeConfig()) for T in np.linspace(0, 10, 50)]
    assert np.all(np.diff(vals) >= 0)


def random_session(rng, k=2, n=15, m=4, T=10.0):
    chat = [np.sort(rng.uniform(0, T, rng.integers(0, n))) for _ in range(k)]
    subs = [np.sort(rng.uniform(0, T, rng.integers(0, m))) for _ in range(k)]
    return VideoSession.from_label_lists("r", T, chat, subs)


def random_params(rng, k=2, shape=ShapeConfig()):
    es = EmotionSet(tuple(f"l{i}" for i in range(k)))
    return HawkesParams(es, rng.uniform(0.05, 1.0, k), rng.uniform(0.2, 3.0, k),
                        rng.uniform(0, 1.0, (k, k)), rng.uniform(0, 0.8, (k, k)), shape)


@pytest.mark.parametrize("seed", range(4))
def test_compensator_matches_quadrature_of_intensity(seed):
    rng = np.random.default_rng(seed)
    s = random_session(rng)
    p = random_params(rng, shape=ShapeConfig() if seed % 2 == 0 else ShapeConfig.powerlaw(2.5))
    t1, t2 = sorted(rng.uniform(0, s.duration, 2))
    breaks = np.concatenate([s.chat_times, s.subtitle_times, s.subtitle_times + p.shape.mode()])
    breaks = np.unique(np.concatenate(([t1, t2], breaks[(breaks > t1) & (breaks < t2)])))
    for e in range(2):
        quad = sum(
            integrate.quad(lambda t: total_intensity(t, e, p, s), a, b, epsabs=1e-12, epsrel=1e-11, limit=200)[0]
            for a, b in zip(breaks[:-1], breaks[1:])
        )
        diff = compensator(e, p, s, t2) - compensator(e, p, s, t1)
        assert diff == pytest.approx(quad, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_intensity_invariants(seed):
    rng = np.random.default_rng(seed)
    s = random_session(rng)
    p = random_params(rng)
    t = np.linspace(0, s.duration, 101)
    for e in range(2):
        lam = total_intensity(t, e, p, s)
        assert np.all(lam >= p.mu0[e])
        assert np.all(lam > 0)
        comp = compensator(e, p, s, t)
        assert np.all(np.diff(comp) >= -1e-12)
        assert np.all(endo_rate(t, e, p, s) >= 0)


def test_background_cache_contents():
    rng = np.random.default_rng(5)
    s = random_session(rng, n=30, m=6)
    cache = BackgroundCache.build(s, ShapeConfig())
    times, labels = s.merged_events()
    assert np.array_equal(cache.times, times)
    for f in range(2):
        assert np.allclose(cache.S[:, f], background_S(times, s.subtitle_events[f], ShapeConfig()), rtol=0, atol=0)
        assert cache.M1[f] == M1(s.subtitle_events[f], s.duration, ShapeConfig())
        assert cache.M1[f] >= 0
    with pytest.raises(ValueError):
        cache.S[0, 0] = 1.0

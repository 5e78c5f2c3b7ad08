import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchstein.chain import ChainPath, sample_chain_path
from switchstein.model import (
    CATALOG,
    builtin_catalog,
    get_problem,
    single_regime_gbm,
    switching_gbm,
    taylor_remainders,
    validate_problem,
)
from switchstein.noise import build_merged_grid, sample_noise
from switchstein.rng import make_stream, path_streams
from switchstein.scheme import LevelInputs, simulate_batch


def test_catalog_contents():
    names = [p.name for p in builtin_catalog()]
    assert names == list(CATALOG) == ["p1_switching_gbm", "p2_noncommutative", "p3_single_regime", "p4_additive"]
    p1, p2, p3, p4 = builtin_catalog()
    assert (p1.dim_x, p1.dim_w, p1.regimes) == (1, 1, 2)
    assert (p2.dim_x, p2.dim_w, p2.regimes) == (2, 2, 2)
    assert p3.regimes == 1
    assert p1.closed_form is not None and p3.closed_form is not None
    assert p2.closed_form is None


def test_p2_columns_do_not_commute():
    p = get_problem("p2_noncommutative")
    x = np.array([[0.7, -1.3]])
    for regime in (0, 1):
        r = np.array([regime])
        sig = p.diffusion(x, r)[0]
        jac = p.diffusion_jacobian(x, r)[0]
        assert not np.allclose(jac[0] @ sig[:, 1], jac[1] @ sig[:, 0])


def test_p4_has_constant_diffusion():
    p = get_problem("p4_additive")
    x = np.linspace(-3, 3, 7)[:, None]
    for regime, c in ((0, 0.2), (1, 1.0)):
        r = np.full(7, regime)
        assert np.all(p.diffusion(x, r) == c)
        assert np.all(p.diffusion_jacobian(x, r) == 0.0)


def test_unknown_problem():
    with pytest.raises(KeyError):
        get_problem("p9")


def test_generator_override_must_match_regimes():
    p = get_problem("p1_switching_gbm")
    assert p.with_generator([[-3.0, 3.0], [0.5, -0.5]]).generator.max_rate == 3.0
    with pytest.raises(ValueError):
        p.with_generator([[0.0]])


# ------------------------------------------------------------- validation


@pytest.mark.parametrize("name", list(CATALOG))
def test_catalog_passes_its_own_checks(name):
    report = validate_problem(get_problem(name), 1000, make_stream(0, 4))
    assert report.passed, report.failures()


def test_linear_model_with_max_coefficient_constant():
    a, s = (0.5, -1.2), (0.4, 0.9)
    p = replace(switching_gbm(a, s), lipschitz=max(map(abs, a + s)))
    assert validate_problem(p, 1000, make_stream(1)).passed


def test_superlinear_drift_is_flagged():
    base = get_problem("p3_single_regime")
    p = replace(base, drift=lambda x, r: x * x, drift_jacobian=lambda x, r: 2 * x[..., None], lipschitz=5.0)
    report = validate_problem(p, 1000, make_stream(2))
    assert "lipschitz_drift" in report.failures()


def test_wrong_jacobian_is_flagged():
    base = get_problem("p1_switching_gbm")
    p = replace(base, diffusion_jacobian=lambda x, r: np.zeros(np.shape(x)[:-1] + (1, 1, 1)))
    report = validate_problem(p, 200, make_stream(3))
    assert report.failures() == ["jacobian_consistency"]


def test_validation_needs_probes():
    with pytest.raises(ValueError):
        validate_problem(get_problem("p1_switching_gbm"), 0, make_stream(0))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(list(CATALOG)), st.integers(0, 2**32 - 1))
def test_jacobians_match_finite_differences(name, seed):
    p = get_problem(name)
    rng = make_stream(seed)
    x = rng.uniform(-5, 5, (8, p.dim_x))
    r = rng.integers(0, p.regimes, 8)
    eps = 1e-6
    for j in range(p.dim_x):
        e = np.zeros(p.dim_x)
        e[j] = eps
        fd_b = (p.drift(x + e, r) - p.drift(x - e, r)) / (2 * eps)
        fd_s = (p.diffusion(x + e, r) - p.diffusion(x - e, r)) / (2 * eps)
        assert np.allclose(fd_b, p.drift_jacobian(x, r)[..., :, j], atol=1e-7)
        assert np.allclose(fd_s, np.moveaxis(p.diffusion_jacobian(x, r)[..., :, :, j], -2, -1), atol=1e-7)


# ------------------------------------------------------------ Taylor bound


@pytest.mark.parametrize("name", list(CATALOG))
def test_taylor_remainder_bound(name):
    rem, bound, rnd = taylor_remainders(get_problem(name), 2000, make_stream(6))
    assert np.all(rem <= bound + rnd)


def test_p4_remainder_is_not_vacuous():
    rem, bound, _ = taylor_remainders(get_problem("p4_additive"), 2000, make_stream(7))
    live = bound > 0
    assert np.max(rem[live] / bound[live]) > 0.1


# ------------------------------------------------------------ closed forms


def test_closed_form_starts_at_x0():
    p = get_problem("p1_switching_gbm")
    c_s, n_s, _ = path_streams(5, 0)
    chain = sample_chain_path(p.generator, 0, 1.0, c_s)
    noise = sample_noise(build_merged_grid(1.0, 2.0**-6, chain), 1, n_s)
    values = p.closed_form(chain, noise, np.array([1.7]))
    assert values[0, 0] == 1.7
    assert values.shape == (noise.grid.points.size, 1)


def test_no_jump_closed_form_is_classical_gbm():
    a, s = (0.5, -0.5), (0.4, 0.8)
    p = switching_gbm(a, s)
    for regime in (0, 1):
        chain = ChainPath(regime, np.array([]), np.array([], dtype=int), 1.0)
        noise = sample_noise(build_merged_grid(1.0, 2.0**-8), 1, make_stream(regime))
        w = math.fsum(noise.increments[:, 0])
        expected = 2.0 * math.exp((a[regime] - s[regime] ** 2 / 2) + s[regime] * w)
        got = p.closed_form(chain, noise, np.array([2.0]), times=[1.0])
        assert got[0, 0] == pytest.approx(expected, rel=1e-13)


def test_closed_form_with_two_segments():
    a, s = (0.5, -0.5), (0.4, 0.8)
    p = switching_gbm(a, s)
    chain = ChainPath(0, np.array([0.3]), np.array([1]), 1.0)
    noise = sample_noise(build_merged_grid(1.0, 0.25, chain), 1, make_stream(3))
    w1, w2 = noise.increment(0.0, 0.3)[0], noise.increment(0.3, 1.0)[0]
    expected = math.exp((0.5 - 0.08) * 0.3 + 0.4 * w1 + (-0.5 - 0.32) * 0.7 + 0.8 * w2)
    assert p.closed_form(chain, noise, np.array([1.0]), times=[1.0])[0, 0] == pytest.approx(expected, rel=1e-13)


def test_zero_volatility_single_regime_is_exponential():
    p = single_regime_gbm(a=0.3, s=0.0)
    chain = ChainPath(0, np.array([]), np.array([], dtype=int), 1.0)
    noise = sample_noise(build_merged_grid(1.0, 0.125), 1, make_stream(1))
    values = p.closed_form(chain, noise, np.array([1.0]))[:, 0]
    assert np.allclose(values, np.exp(0.3 * noise.grid.points), rtol=1e-14)


@pytest.mark.slow
def test_closed_form_agrees_with_fine_milstein():
    p = get_problem("p1_switching_gbm")
    h = 2.0**-16
    levels, finals, x0 = [], [], []
    for i in range(100):
        c_s, n_s, i_s = path_streams(2024, i)
        chain = sample_chain_path(p.generator, 0, 1.0, c_s)
        noise = sample_noise(build_merged_grid(1.0, h, chain), 1, n_s)
        levels.append(LevelInputs.from_path(chain, noise, h))
        x0.append(p.sample_initial(i_s))
        finals.append(p.closed_form(chain, noise, x0[-1], times=[1.0])[0, 0])
    y = simulate_batch(p, "milstein", LevelInputs.stack(levels), np.stack(x0))[:, -1, 0]
    assert np.max(np.abs(y - np.array(finals))) < 1e-3

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spritediff.errors import ConfigError, ShapeError
from spritediff.numeric import Rng
from spritediff.schedule import (
    NoiseSchedule,
    ddim_step,
    ddim_timesteps,
    ddpm_step,
    make_schedule,
    posterior_mean_var,
    q_sample,
)

SCHED = make_schedule()


def _constant(beta, T):
    return make_schedule(T, beta, beta)


def test_single_step_schedule():
    s = make_schedule(1, 0.5, 0.5)
    np.testing.assert_array_equal(s.alpha_bar, [0.5])


def test_constant_beta_products():
    np.testing.assert_allclose(_constant(0.1, 2).alpha_bar, [0.9, 0.81], atol=1e-15)


def _product(lo, hi, T):
    prod = 1.0
    for i in range(T):
        prod *= 1.0 - (lo + (hi - lo) * i / (T - 1))
    return prod


def test_default_schedule_final_alpha_bar():
    assert 0.0 < SCHED.alpha_bar[99] < 0.05
    assert abs(SCHED.alpha_bar[99] - _product(1e-3, 0.2, 100)) < 1e-12


def test_thousand_step_endpoints_leave_signal_at_100_steps():
    # why the default endpoints are rescaled: unscaled, a third of the signal survives
    s = make_schedule(100, 1e-4, 0.02)
    assert abs(s.alpha_bar[99] - _product(1e-4, 0.02, 100)) < 1e-12
    assert s.alpha_bar[99] > 0.35


def test_schedule_invariants():
    assert np.all((SCHED.beta > 0) & (SCHED.beta < 1))
    assert np.all(np.diff(SCHED.alpha_bar) < 0)
    np.testing.assert_allclose(SCHED.alpha_bar, np.cumprod(1 - SCHED.beta), atol=1e-12)


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_schedule_config_errors(args):
    with pytest.raises(ConfigError):
        make_schedule(*args)


def test_schedule_dict_roundtrip():
    s2 = type(SCHED).from_dict(SCHED.to_dict())
    np.testing.assert_array_equal(s2.alpha_bar, SCHED.alpha_bar)


# -- forward process -------------------------------------------------------------------


def test_q_sample_endpoints():
    x0, eps = np.array([0.3, -0.7]), np.array([1.5, 2.0])
    # endpoint coefficients lie outside any valid schedule, so build them directly
    clean = NoiseSchedule(1, np.array([0.0]), np.array([1.0]))
    pure = NoiseSchedule(1, np.array([1.0]), np.array([0.0]))
    np.testing.assert_array_equal(q_sample(x0, 0, eps, clean), x0)
    np.testing.assert_array_equal(q_sample(x0, 0, eps, pure), eps)


def test_q_sample_quarter():
    s = make_schedule(1, 0.75, 0.75)
    assert q_sample(np.array(1.0), 0, np.array(0.0), s) == pytest.approx(0.5, abs=1e-15)


def test_q_sample_shape_mismatch():
    with pytest.raises(ShapeError):
        q_sample(np.zeros(3), 0, np.zeros(4), SCHED)


@pytest.mark.parametrize("t", [0, 10, 40, 70, 99])
def test_forward_variance_monte_carlo(t):
    n = 10_000
    eps = Rng(t).normal((n,))
    x = q_sample(np.full(n, 0.4), t, eps, SCHED)
    var = x.var(ddof=1)
    target = 1 - SCHED.alpha_bar[t]
    se = target * np.sqrt(2.0 / (n - 1))
    assert abs(var - target) <= 3 * se


# -- DDIM ------------------------------------------------------------------------------


def test_ddim_recovers_x0_with_true_eps():
    g = np.random.default_rng(0)
    x0 = g.uniform(-1, 1, size=(2, 3, 4, 4))
    eps = g.normal(size=x0.shape)
    xt = q_sample(x0, 60, eps, SCHED)
    np.testing.assert_allclose(ddim_step(xt, eps, 60, -1, SCHED), x0, atol=1e-10)


def test_ddim_same_t_is_noop():
    x = np.random.default_rng(1).normal(size=(3,))
    np.testing.assert_array_equal(ddim_step(x, np.ones(3), 5, 5, SCHED), x)


def test_ddim_scalar_clamp_case():
    s = make_schedule(1, 0.75, 0.75)  # alpha_bar = 0.25
    assert ddim_step(np.array(0.5), np.array(0.0), 0, -1, s) == pytest.approx(1.0, abs=1e-15)


def test_ddim_clamps_x0():
    s = make_schedule(1, 0.75, 0.75)
    assert ddim_step(np.array(0.9), np.array(0.0), 0, -1, s) == 1.0


def test_ddim_index_error():
    with pytest.raises(IndexError):
        ddim_step(np.zeros(2), np.zeros(2), 100, 50, SCHED)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 99), st.integers(-1, 99), st.integers(0, 1000))
def test_ddim_inverts_q_sample_for_any_pair(t, t_prev, seed):
    if t_prev > t:
        t, t_prev = t_prev, t
    if t < 0:
        return
    g = np.random.default_rng(seed)
    x0 = g.uniform(-1, 1, size=8)
    eps = g.normal(size=8)
    xt = q_sample(x0, t, eps, SCHED)
    want = x0 if t_prev == -1 else q_sample(x0, t_prev, eps, SCHED)
    if t_prev == t:
        want = xt
    np.testing.assert_allclose(ddim_step(xt, eps, t, t_prev, SCHED), want, atol=1e-10)


def test_ddim_timesteps_descend_to_zero():
    ts = ddim_timesteps(100, 25)
    assert ts[0] == 99 and ts[-1] == 0 and len(ts) == 25
    assert all(a > b for a, b in zip(ts, ts[1:]))


# -- ancestral -------------------------------------------------------------------------


def test_ddpm_no_noise_at_zero():
    x, e = np.full(4, 0.2), np.full(4, 0.1)
    mean, _ = posterior_mean_var(x, e, 0, SCHED)
    np.testing.assert_array_equal(ddpm_step(x, e, 0, SCHED, Rng(0)), mean)


def test_ddpm_reproducible():
    x, e = np.full(4, 0.2), np.full(4, 0.1)
    a = ddpm_step(x, e, 50, SCHED, Rng(3))
    b = ddpm_step(x, e, 50, SCHED, Rng(3))
    np.testing.assert_array_equal(a, b)


def test_ddpm_mean_matches_posterior():
    n, t = 10_000, 40
    x = np.full(n, 0.3)
    e = np.full(n, -0.2)
    out = ddpm_step(x, e, t, SCHED, Rng(11))
    # posterior mean from the textbook coefficients, computed independently
    ab, ab_prev, b = SCHED.alpha_bar[t], SCHED.alpha_bar[t - 1], SCHED.beta[t]
    x0 = np.clip((0.3 + 0.2 * np.sqrt(1 - ab)) / np.sqrt(ab), -1, 1)
    mu = np.sqrt(ab_prev) * b / (1 - ab) * x0 + np.sqrt(1 - b) * (1 - ab_prev) / (1 - ab) * 0.3
    var = b * (1 - ab_prev) / (1 - ab)
    assert abs(out.mean() - mu) <= 3 * np.sqrt(var / n)

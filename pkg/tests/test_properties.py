"""Randomized invariants checked with hypothesis."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from dplc.likelihood import LEFT, RIGHT, ModelState, SurvData, loglik_grad, loglik_terms
from dplc.network import Architecture, CenteredNet, fold_input_scaling, forward, init_params
from dplc.simulation import SimDesign, censor, rmse_g
from dplc.spline import SplineConfig, cum_hazard, ispline_eval

settings.register_profile("dplc", max_examples=60, deadline=None)
settings.load_profile("dplc")

seeds = st.integers(0, 2**32 - 1)


@st.composite
def spline_configs(draw):
    degree = draw(st.integers(1, 4))
    n_knots = draw(st.integers(0, 6))
    t_max = draw(st.floats(0.5, 50.0))
    knots = sorted(draw(st.lists(st.floats(0.02, 0.98), min_size=n_knots, max_size=n_knots, unique=True)))
    knots = tuple(np.round(np.array(knots) * t_max, 9))
    if len(set(knots)) != len(knots):
        knots = ()
    return SplineConfig(degree, knots, (0.0, t_max))


@given(spline_configs(), seeds)
def test_ispline_monotone_in_unit_range(cfg, seed):
    t = np.sort(np.random.default_rng(seed).uniform(0, cfg.t_max * 1.2, 200))
    basis = ispline_eval(t, cfg)
    assert np.all(basis >= -1e-12) and np.all(basis <= 1 + 1e-12)
    assert np.all(np.diff(basis, axis=0) >= -1e-12)


@given(spline_configs(), seeds)
def test_cum_hazard_monotone(cfg, seed):
    rng = np.random.default_rng(seed)
    gamma = rng.normal(0, 2, cfg.n_basis)
    t = np.sort(rng.uniform(0, cfg.t_max, 100))
    lam = cum_hazard(t, gamma, cfg)
    assert np.all(np.diff(lam) >= -1e-12 * lam.max())
    assert cum_hazard(np.array([0.0]), gamma, cfg)[0] == 0.0


@st.composite
def datasets(draw):
    seed = draw(seeds)
    rng = np.random.default_rng(seed)
    n = draw(st.integers(1, 40))
    left = np.zeros(n)
    right = np.full(n, np.inf)
    kind = rng.integers(1, 4, n)
    right[kind == LEFT] = rng.uniform(0.01, 5, (kind == LEFT).sum())
    m = kind > LEFT
    left[m] = rng.uniform(0.01, 4.9, m.sum())
    m = kind == 2
    right[m] = left[m] + rng.uniform(1e-6, 3, m.sum())
    data = SurvData(rng.normal(size=(n, 2)), rng.normal(size=(n, 3)), left, right)
    cfg = SplineConfig(3, (1.0, 2.5), (0.0, 5.0))
    state = ModelState(
        rng.normal(0, 1, 2),
        rng.normal(-1, 2, cfg.n_basis),
        cfg,
        CenteredNet(init_params(Architecture(3, (4,)), rng), rng.normal()),
    )
    return data, state


@given(datasets())
def test_loglik_terms_are_log_probabilities(pair):
    data, state = pair
    ll = loglik_terms(data, state)
    assert np.all(np.isfinite(ll)) and np.all(ll <= 0)


@given(datasets(), seeds)
def test_batch_is_permutation_invariant(pair, seed):
    data, state = pair
    perm = np.random.default_rng(seed).permutation(len(data))
    a, b = loglik_grad(data, state), loglik_grad(data.subset(perm), state)
    assert np.isclose(a.total, b.total, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.beta, b.beta, rtol=1e-10, atol=1e-10)


@given(seeds, st.floats(0.05, 1.0), st.integers(1, 12))
def test_censoring_partition(seed, p, visits):
    rng = np.random.default_rng(seed)
    design = SimDesign(visit_p=p, n_visits=visits)
    t = rng.exponential(3.0, 200)
    left, right = censor(t, design, rng)
    kinds = (left == 0) & np.isfinite(right), (left > 0) & np.isfinite(right), np.isinf(right)
    assert np.all(sum(k.astype(int) for k in kinds) == 1)
    assert np.all(left < t) and np.all(t <= right)
    assert not np.any((left == 0) & (right == np.inf))


@given(seeds, st.integers(2, 50))
def test_rmse_nonnegative_and_order_free(seed, n):
    rng = np.random.default_rng(seed)
    g0 = rng.normal(size=n) + rng.normal()
    if np.ptp(g0) < 1e-6:
        return
    gh = rng.normal(size=n)
    perm = rng.permutation(n)
    v = rmse_g(gh, g0)
    assert v >= 0 and np.isclose(v, rmse_g(gh[perm], g0[perm]), rtol=1e-12)


@given(seeds)
def test_fold_input_scaling(seed):
    rng = np.random.default_rng(seed)
    params = init_params(Architecture(4, (5, 3)), rng)
    mean, scale = rng.normal(size=4), rng.uniform(0.1, 5, 4)
    z = rng.normal(size=(20, 4)) * scale + mean
    folded = fold_input_scaling(params, mean, scale)
    np.testing.assert_allclose(forward(folded, z), forward(params, (z - mean) / scale), rtol=1e-10, atol=1e-10)


@given(datasets())
def test_right_censored_rows_ignore_hazard_after_left(pair):
    data, state = pair
    m = data.kind == RIGHT
    if not m.any():
        return
    # -G(L) only: recompute directly
    eta = state.eta(data.x, data.z)
    lam = cum_hazard(data.left[m], state.gamma_tilde, state.spline)
    np.testing.assert_allclose(loglik_terms(data, state)[m], -lam * np.exp(eta[m]), rtol=1e-12)

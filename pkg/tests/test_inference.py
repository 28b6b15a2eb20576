import json
import math

import numpy as np
import pytest

from dplc.inference import (
    InferenceResult,
    LfdPair,
    SingularInformationError,
    Z_975,
    estimate_lfd,
    format_wald_table,
    information_from_residuals,
    information_matrix,
    projection_residuals,
    score_parts,
    wald_report,
)
from dplc.likelihood import ModelState, SurvData
from dplc.network import Architecture, CenteredNet, NetParams, init_params
from dplc.simulation import SimDesign, simulate
from dplc.spline import SplineConfig
from dplc.trainer import TrainConfig, derive_seed, fit_with_restarts

LINEAR_COX = TrainConfig(learning_rate=0.05, epochs=3000, patience=50, restarts=1, grid=((),), early_stopping=False)


def random_setup(seed=0, n=200, d=2, r=3, x=None):
    rng = np.random.default_rng(seed)
    left = np.zeros(n)
    right = np.full(n, np.inf)
    kind = rng.integers(0, 3, n)
    right[kind == 0] = rng.uniform(0.5, 4.5, (kind == 0).sum())
    left[kind >= 1] = rng.uniform(0.3, 3.5, (kind >= 1).sum())
    right[kind == 1] = left[kind == 1] + rng.uniform(0.2, 1.5, (kind == 1).sum())
    z = rng.uniform(size=(n, r))
    x = rng.normal(size=(n, d)) if x is None else x(z)
    data = SurvData(x, z, left, right)
    cfg = SplineConfig(3, (1.5, 3.0), (0.0, 5.0))
    st = ModelState(
        rng.normal(0, 0.3, data.d),
        np.full(cfg.n_basis, -1.5),
        cfg,
        CenteredNet(init_params(Architecture(r, (4,)), rng), 0.0),
    )
    return data, st


def result(est, se):
    est, se = np.atleast_1d(est).astype(float), np.atleast_1d(se).astype(float)
    return InferenceResult(est, np.diag(1 / se**2), se, est - Z_975 * se, est + Z_975 * se, est / se, np.zeros_like(est), 1)


class TestInformation:
    def test_constant_residual(self):
        c, n = -0.7, 400
        res = information_from_residuals(np.full((n, 1), c), [0.3])
        assert res.info[0, 0] == pytest.approx(c**2, rel=1e-14)
        assert res.se[0] == pytest.approx(1 / (abs(c) * math.sqrt(n)), rel=1e-14)
        assert res.ci_upper[0] - res.ci_lower[0] == pytest.approx(2 * 1.959964 * res.se[0], rel=1e-6)

    def test_symmetric_psd(self):
        data, st = random_setup(1)
        lfd = estimate_lfd(data, st, TrainConfig(learning_rate=1e-3, epochs=50, early_stopping=False))
        res = information_matrix(data, st, lfd)
        assert np.array_equal(res.info, res.info.T)
        assert np.linalg.eigvalsh(res.info).min() >= 0

    def test_permutation_invariant(self):
        data, st = random_setup(2)
        lfd = estimate_lfd(data, st, TrainConfig(learning_rate=1e-3, epochs=30, early_stopping=False))
        perm = np.random.default_rng(0).permutation(len(data))
        a = information_matrix(data, st, lfd)
        b = information_matrix(data.subset(perm), st, lfd)
        np.testing.assert_allclose(a.info, b.info, rtol=1e-12)

    def test_singular(self):
        resid = np.random.default_rng(0).normal(size=(100, 1))
        resid = np.hstack([resid, 2 * resid])
        with pytest.raises(SingularInformationError) as err:
            information_from_residuals(resid, [0.1, 0.2])
        assert err.value.condition > 1e12
        assert err.value.eigenvalues.shape == (2,)

    def test_duplicate_covariate_is_singular(self):
        data, st = random_setup(3, x=lambda z: np.repeat(z[:, :1], 2, axis=1))
        lfd = estimate_lfd(data, st, TrainConfig(learning_rate=1e-3, epochs=20, early_stopping=False))
        with pytest.raises(SingularInformationError):
            information_matrix(data, st, lfd)

    def test_round_trip(self):
        data, st = random_setup(4)
        lfd = estimate_lfd(data, st, TrainConfig(learning_rate=1e-3, epochs=20, early_stopping=False))
        res = information_matrix(data, st, lfd, names=["a", "b"])
        back = InferenceResult.from_dict(json.loads(json.dumps(res.to_dict())))
        for f in ("beta", "info", "se", "ci_lower", "ci_upper", "z_values", "p_values"):
            np.testing.assert_allclose(getattr(back, f), getattr(res, f), rtol=1e-15, atol=0)
        assert back.names == ["a", "b"] and back.n == res.n


class TestLfd:
    def test_zero_directions_give_raw_score(self):
        data, st = random_setup(5)
        parts = score_parts(data, st)
        n, d = parts.score_beta.shape
        zero = np.zeros((n, d))
        resid = projection_residuals(parts, zero, zero, zero)
        assert np.array_equal(resid, parts.score_beta)

    def test_initial_objective(self):
        data, st = random_setup(6)
        lfd = estimate_lfd(data, st, TrainConfig(learning_rate=1e-3, epochs=10, early_stopping=False))
        raw = score_parts(data, st).score_beta
        assert lfd.rho_initial == pytest.approx(np.mean(np.sum(raw**2, axis=1)), rel=1e-12)

    @pytest.mark.parametrize("seed", [7, 8, 9])
    def test_descent(self, seed):
        data, st = random_setup(seed)
        lfd = estimate_lfd(data, st)
        assert lfd.rho_final <= lfd.rho_initial

    def test_trace_inequality(self):
        data, st = random_setup(10)
        lfd = estimate_lfd(data, st)
        res = information_matrix(data, st, lfd)
        raw = score_parts(data, st).score_beta
        assert lfd.rho_final <= lfd.rho_initial
        assert np.trace(res.info) <= np.trace(raw.T @ raw / len(data)) + 1e-8

    def test_rho_final_matches_residuals(self):
        data, st = random_setup(11)
        lfd = estimate_lfd(data, st)
        parts = score_parts(data, st)
        resid = projection_residuals(parts, lfd.h1_at(parts.t_left), lfd.h1_at(parts.t_right), lfd.h2_at(parts.z))
        assert lfd.rho_final == pytest.approx(np.mean(np.sum(resid**2, axis=1)), rel=1e-10)

    def test_constructed_projection(self):
        # x = 2 z_1 - 1 makes the beta score an exact h2-direction score
        data, st = random_setup(12, n=400, x=lambda z: 2 * z[:, :1] - 1)
        lfd = estimate_lfd(data, st, h2_widths=())
        assert lfd.rho_final <= 0.05 * lfd.rho_initial
        z = np.random.default_rng(0).uniform(size=(20, 3))
        np.testing.assert_allclose(lfd.h2_at(z)[:, 0], 2 * z[:, 0] - 1, atol=1e-6)

    def test_h1_clamps_time(self):
        h = NetParams(Architecture(1, ()), [np.array([[2.0]])], [np.array([0.5])])
        lfd = LfdPair(h, h, 4.0, 1.0, 1.0)
        np.testing.assert_allclose(lfd.h1_at([0.0, 2.0, 4.0, 8.0])[:, 0], [0.5, 1.5, 2.5, 2.5])

    def test_deterministic(self):
        data, st = random_setup(13)
        a, b = estimate_lfd(data, st), estimate_lfd(data, st)
        assert a.rho_final == b.rho_final

    def test_hold_out_option(self):
        data, st = random_setup(14)
        lfd = estimate_lfd(data, st, TrainConfig(learning_rate=1e-3, epochs=200, early_stopping=True, patience=20))
        assert lfd.rho_final <= lfd.rho_initial


class TestWald:
    def test_null(self):
        row = wald_report(result(0.0, 1.0))[0]
        assert (row["Z"], row["p"], row["HR"]) == (0.0, 1.0, 1.0)

    def test_strong_effect_row(self):
        row = wald_report(result(0.148, 0.019), names=["x_1"])[0]
        assert round(row["Z"], 2) == 7.79
        assert row["p"] < 1e-14
        # 1.159 is exp of the unrounded estimate; exp(0.148) itself rounds to 1.160
        assert row["HR"] == pytest.approx(1.159, abs=1e-3)

    def test_protective_effect_row(self):
        row = wald_report(result(-0.283, 0.023))[0]
        assert row["HR"] == pytest.approx(0.753, abs=1e-3)
        assert round(row["Z"], 2) == -12.30

    def test_table_format(self):
        text = format_wald_table(wald_report(result([0.148, -0.283], [0.019, 0.023]), names=["sex", "activity"]))
        lines = text.splitlines()
        assert len(lines) == 3 and "EST" in lines[0]
        assert lines[1].split()[:5] == ["sex", "0.148", "1.160", "0.019", "7.789"]

    def test_default_names(self):
        assert [r["name"] for r in wald_report(result([1.0, 2.0], [1.0, 1.0]))] == ["x_1", "x_2"]


def _linear_cox_rep(n, rep):
    design = SimDesign(n=n, g_case="linear", r=2, g_scale=0.0)
    data = simulate(design, np.random.default_rng(derive_seed(31, n, rep))).data
    fit = fit_with_restarts(data, (), LINEAR_COX)
    res = information_matrix(data, fit.state, estimate_lfd(data, fit.state, h2_widths=()))
    return res


def test_se_scales_with_root_n():
    se500 = np.median([_linear_cox_rep(500, k).se[0] for k in range(10)])
    se2000 = np.median([_linear_cox_rep(2000, k).se[0] for k in range(10)])
    assert 1.7 <= se500 / se2000 <= 2.3


@pytest.mark.slow
def test_linear_cox_coverage():
    covered = 0
    for k in range(100):
        res = _linear_cox_rep(2000, k)
        covered += res.ci_lower[0] <= 1.2 <= res.ci_upper[0]
    assert 0.88 <= covered / 100 <= 0.99

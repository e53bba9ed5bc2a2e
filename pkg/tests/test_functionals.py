import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cases import catalog, resolve
from ifest import functionals as F
from ifest import quadrature, synthdata
from ifest.density import KdeModel, fit
from ifest.errors import BadAlpha, BadExponents, BadSpec, DimensionMismatch, IndexOutOfRange
from ifest.functionals import DensityPair, FunctionalSpec
from ifest.kernels import legendre_kernel

GL = {1: 200, 2: 60, 3: 20}


def gl_grid(dim):
    return quadrature.GridSpec(dim, GL[dim], "gauss_legendre")


def fitted_pair(spec, X, Y=None, h=0.3, order=2, clamps=(0.0, math.inf)):
    first = fit(X, h, legendre_kernel(order), clamps)
    second = None if Y is None else fit(Y, h, legendre_kernel(order), clamps)
    marg = tuple(first.project(c) for c in spec.marginal_columns(first.dim))
    return DensityPair(first, second, marg)


class TestSpec:
    def test_aliases(self):
        assert FunctionalSpec("kl").kind == "kl_divergence"
        assert FunctionalSpec("Hellinger").kind == "hellinger_divergence"
        assert FunctionalSpec("tsallis_div", alpha=0.5).kind == "tsallis_divergence"

    def test_all_kinds_listed(self):
        assert len(F.KINDS) == 15

    @pytest.mark.parametrize("a", [0, 1, 0.0, 1.0, float("nan")])
    def test_bad_alpha(self, a):
        with pytest.raises(BadAlpha, match="alpha must not be 0 or 1"):
            FunctionalSpec("tsallis_div", alpha=a)

    def test_missing_alpha(self):
        with pytest.raises(BadAlpha):
            FunctionalSpec("renyi_entropy")

    def test_power_exponents(self):
        assert FunctionalSpec("power", alpha=0.3, beta_exponent=0.7).exponents == (0.3, 0.7)
        assert FunctionalSpec("power", alpha=1.5, beta_exponent=-0.5).exponents == (1.5, -0.5)
        for a, b in [(2, 0.5), (1, 0), (0, 1), (0.4, 0.4)]:
            with pytest.raises(BadExponents):
                FunctionalSpec("power", alpha=a, beta_exponent=b)

    def test_unknown_kind(self):
        with pytest.raises(BadSpec):
            FunctionalSpec("wasserstein")

    def test_fdiv_needs_callbacks(self):
        with pytest.raises(BadSpec):
            FunctionalSpec("f_divergence")

    def test_conditional_needs_z(self):
        with pytest.raises(BadSpec):
            FunctionalSpec("cond_kl")
        with pytest.raises(BadSpec):
            FunctionalSpec("kl", z_dim=1)
        with pytest.raises(DimensionMismatch):
            FunctionalSpec("cond_kl", z_dim=2).check_dim(2)

    def test_arity(self):
        assert FunctionalSpec("shannon_mi").arity == 1
        assert FunctionalSpec("cond_tsallis_mi", alpha=0.5, z_dim=1).arity == 1
        assert FunctionalSpec("cond_tsallis", alpha=0.5, z_dim=1).arity == 2

    def test_blocks(self):
        assert FunctionalSpec("shannon_mi").blocks(3) == ((0,), (1, 2))
        assert FunctionalSpec("shannon_mi", x_dim=2).blocks(3) == ((0, 1), (2,))
        ctmi = FunctionalSpec("cond_tsallis_mi", alpha=0.5, z_dim=1)
        assert ctmi.blocks(3) == ((0,), (1,), (2,))
        assert ctmi.marginal_columns(3) == ((0, 2), (1, 2), (2,))
        with pytest.raises(DimensionMismatch):
            ctmi.blocks(2)
        with pytest.raises(DimensionMismatch):
            FunctionalSpec("shannon_mi").blocks(1)


class TestPluginValue:
    def test_constant_model_entropy(self):
        m = KdeModel(np.linspace(0, 1, 50)[:, None], 0.1, clamps=(1.0, 1.0 + 1e-14))
        val = F.plugin_value("shannon_entropy", DensityPair(m), quadrature.GridSpec(1, 512))
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_identical_models_hellinger_is_mass_defect(self):
        m = fit(synthdata.sample("f2", 500, seed=1), 0.15)
        grid = quadrature.GridSpec(1, 4096)
        val = F.plugin_value("hellinger", DensityPair(m, m), grid)
        assert val == pytest.approx(2.0 - 2.0 * quadrature.integrate_power(m, 1, grid), abs=1e-13)
        assert abs(val) < 1e-3

    def test_identical_models_hellinger_exact_quadrature(self):
        # box kernel with jumps on cell edges: midpoint quadrature is exact
        pts = np.round(synthdata.sample("f2", 500, seed=1) * 4096) / 4096
        m = fit(pts, 0.125, legendre_kernel(0))
        val = F.plugin_value("hellinger", DensityPair(m, m), quadrature.GridSpec(1, 4096))
        assert val == pytest.approx(0.0, abs=1e-6)

    def test_tsallis_identity(self):
        m = fit(synthdata.sample("uniform", 4000, seed=2), 0.2)
        grid = quadrature.default_grid(1)
        val = F.plugin_value(FunctionalSpec("tsallis_entropy", alpha=2.0), DensityPair(m), grid)
        assert val == pytest.approx(1.0 - quadrature.integrate_power(m, 2, grid), abs=1e-12)

    def test_kde_renyi_is_log_of_power(self):
        X = synthdata.sample("f2", 300, seed=3)
        Y = synthdata.sample("uniform", 300, seed=4)
        spec = FunctionalSpec("renyi_div", alpha=0.75)
        pair = fitted_pair(spec, X, Y)
        grid = quadrature.default_grid(1)
        s = F.plugin_value(FunctionalSpec("power", alpha=0.75, beta_exponent=0.25), pair, grid)
        assert F.plugin_value(spec, pair, grid) == pytest.approx(math.log(s) / (0.75 - 1), rel=1e-13)

    def test_dimension_mismatch(self):
        m = fit(np.random.default_rng(0).random((20, 2)), 0.3)
        with pytest.raises(Exception):
            F.plugin_value("shannon_entropy", DensityPair(m), quadrature.GridSpec(1, 16))

    def test_mi_of_independent_product_is_zero(self):
        assert synthdata.oracle_truth("shannon_mi", "f2xf1") == pytest.approx(0.0, abs=1e-10)

    def test_mi_of_mixture_positive(self):
        _, spec, p, _ = [c for c in catalog() if c[0] == "shannon_mi"][0]
        assert synthdata.oracle_truth(spec, p) > 0.01


class TestInfluence:
    def test_shannon_closed_form(self):
        X = synthdata.sample("f1", 200, seed=5)
        pair = fitted_pair(FunctionalSpec("shannon_entropy"), X)
        grid = quadrature.default_grid(1)
        T = F.plugin_value("shannon_entropy", pair, grid)
        x = np.array([[0.1], [0.5], [0.95]])
        np.testing.assert_allclose(
            F.influence("shannon_entropy", "first", x, pair, grid), -np.log(pair.first(x)) - T, atol=1e-12
        )
        assert isinstance(F.influence("shannon_entropy", "first", [0.3], pair, grid), float)

    def test_cond_tsallis_first_argument(self):
        a = 0.75
        spec = FunctionalSpec("cond_tsallis", alpha=a, z_dim=1)
        X = synthdata.sample("f2xf1", 150, seed=6)
        Y = synthdata.sample("uniform^2", 150, seed=7)
        pair = fitted_pair(spec, X, Y, h=0.35)
        grid = quadrature.GridSpec(2, 64)
        S = quadrature.integrate(lambda t: pair.first(t) ** a * pair.second(t) ** (1 - a), grid)
        x = np.random.default_rng(1).random((10, 2))
        want = a / (a - 1) * (pair.first(x) ** (a - 1) * pair.second(x) ** (1 - a) - S)
        np.testing.assert_allclose(F.influence(spec, "first", x, pair, grid), want, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize(
        "spec",
        [
            FunctionalSpec("tsallis_div", alpha=0.75),
            FunctionalSpec("tsallis_div", alpha=1.8),
            FunctionalSpec("hellinger"),
            FunctionalSpec("kl"),
            FunctionalSpec("chi_squared"),
            FunctionalSpec("renyi_div", alpha=0.6),
        ],
    )
    def test_vanishes_at_equal_densities_1d(self, spec):
        f = synthdata.parse_dist("f2")
        pair = DensityPair.from_analytic(spec, f, f)
        x = np.random.default_rng(2).random((10, 1))
        grid = quadrature.GridSpec(1, 400, "gauss_legendre")
        for which in ("first", "second"):
            assert np.max(np.abs(F.influence(spec, which, x, pair, grid))) < 1e-9

    @pytest.mark.parametrize("kind", ["cond_tsallis", "cond_kl"])
    def test_vanishes_at_equal_densities_conditional(self, kind):
        spec = FunctionalSpec(kind, alpha=0.75 if kind == "cond_tsallis" else None, z_dim=1)
        f = synthdata.parse_dist("f2xf1")
        pair = DensityPair.from_analytic(spec, f, f)
        x = np.random.default_rng(3).random((10, 2))
        grid = quadrature.GridSpec(2, 60, "gauss_legendre")
        for which in ("first", "second"):
            assert np.max(np.abs(F.influence(spec, which, x, pair, grid))) < 1e-9

    def test_kde_equal_models_vanish_up_to_mass_error(self):
        # with fitted models the offset carries the quadrature mass error of the KDE
        m = fit(synthdata.sample("f2", 400, seed=8), 0.1)
        spec = FunctionalSpec("tsallis_div", alpha=0.75)
        grid = quadrature.default_grid(1)
        psi = F.influence(spec, "first", np.random.default_rng(4).random((10, 1)), DensityPair(m, m), grid)
        mass = quadrature.integrate_power(m, 1, grid)
        assert np.max(np.abs(psi)) <= 0.75 / 0.25 * abs(mass - 1) + 1e-12

    def test_second_argument_of_one_sample_kind(self):
        pair = DensityPair(synthdata.parse_dist("f1"))
        with pytest.raises(DimensionMismatch):
            F.influence("shannon_entropy", "second", [0.5], pair, gl_grid(1))

    @pytest.mark.parametrize("label,spec,p,q", [c for c in catalog() if c[0] != "cond_tsallis_mi"], ids=lambda v: v if isinstance(v, str) else "")
    def test_zero_mean_quadrature(self, label, spec, p, q):
        dens = resolve(spec, p)
        dens = dens if isinstance(dens, tuple) else (dens,)
        dim = dens[0].dim
        grid = gl_grid(dim)
        pair = DensityPair.from_analytic(spec, *dens)
        fitted = F.FittedFunctional(spec, pair, grid)
        nodes = quadrature.tensor_nodes(grid)
        w = quadrature.tensor_weights(grid)
        for which, d in zip(("first", "second"), dens):
            assert abs(np.sum(w * d(nodes) * fitted.influence(which, nodes))) < 1e-9


class TestLooTerms:
    def test_two_point_shannon(self):
        m = fit(np.array([[0.25], [0.75]]), 1.0, legendre_kernel(0), boundary="none")
        assert F.loo_term("shannon_entropy", 0, DensityPair(m)) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_index_checked(self):
        m = fit(np.array([[0.25], [0.75]]), 1.0, legendre_kernel(0), boundary="none")
        with pytest.raises(IndexOutOfRange):
            F.loo_term("shannon_entropy", 2, DensityPair(m))

    @pytest.mark.parametrize(
        "spec",
        [
            FunctionalSpec("kl"),
            FunctionalSpec("hellinger"),
            FunctionalSpec("chi_squared"),
            FunctionalSpec("tsallis_div", alpha=0.75),
            FunctionalSpec("renyi_div", alpha=0.75),
            FunctionalSpec("power", alpha=0.4, beta_exponent=0.6),
            FunctionalSpec("f_divergence", phi=F.PHI_LIBRARY["pearson"][0], phi_prime=F.PHI_LIBRARY["pearson"][1]),
            FunctionalSpec("l2"),
        ],
        ids=lambda s: s.kind,
    )
    def test_closed_form_matches_refit_assembly(self, spec):
        X = synthdata.sample("f2", 50, seed=9)
        Y = synthdata.sample("uniform", 50, seed=10)
        # truncation from below keeps 1/f integrands (chi-squared) finite
        pair = fitted_pair(spec, X, Y, h=0.3, clamps=(1e-3, math.inf))
        grid = quadrature.GridSpec(1, 512)
        closed = F.loo_terms(spec, pair, grid, cross="loo")
        generic = F.reference_loo_terms(spec, pair, grid)
        np.testing.assert_allclose(closed, generic, rtol=0, atol=1e-9)

    @pytest.mark.parametrize(
        "spec",
        [
            FunctionalSpec("kl"),
            FunctionalSpec("hellinger"),
            FunctionalSpec("tsallis_div", alpha=0.75),
            FunctionalSpec("power", alpha=0.6, beta_exponent=0.4),
        ],
        ids=lambda s: s.kind,
    )
    def test_closed_form_untruncated(self, spec):
        X = synthdata.sample("f2", 50, seed=9)
        Y = synthdata.sample("uniform", 50, seed=10)
        pair = fitted_pair(spec, X, Y, h=0.3)
        grid = quadrature.GridSpec(1, 512)
        np.testing.assert_allclose(
            F.loo_terms(spec, pair, grid, cross="loo"), F.reference_loo_terms(spec, pair, grid), rtol=1e-12, atol=1e-9
        )

    def test_unequal_sizes_cycle(self):
        spec = FunctionalSpec("kl")
        X = synthdata.sample("f2", 30, seed=11)
        Y = synthdata.sample("uniform", 45, seed=12)
        pair = fitted_pair(spec, X, Y)
        terms = F.loo_terms(spec, pair, quadrature.GridSpec(1, 256), cross="loo")
        assert terms.size == 45
        np.testing.assert_allclose(terms, F.reference_loo_terms(spec, pair, quadrature.GridSpec(1, 256)), atol=1e-9)

    def test_literal_chi_squared_row_differs_by_twice_ratio_moment(self):
        # The tabulated row adds the mean squared ratio where the generic
        # assembly subtracts it; the offset is exactly 2 * mean((g/f)^2).
        spec = FunctionalSpec("chi_squared")
        X = synthdata.sample("f2", 50, seed=13)
        Y = synthdata.sample("uniform", 50, seed=14)
        pair = fitted_pair(spec, X, Y)
        f, g = pair.first, pair.second
        ratio_sq = (g(X) / f.eval_loo_all()) ** 2
        literal = -1.0 + np.mean(ratio_sq) + 2.0 * np.mean(g.eval_loo_all() / f(Y))
        corrected = np.mean(F.loo_terms(spec, pair, quadrature.GridSpec(1, 256)))
        assert literal - corrected == pytest.approx(2.0 * np.mean(ratio_sq), rel=1e-12)
        generic = np.mean(F.reference_loo_terms(spec, pair, quadrature.GridSpec(1, 256)))
        assert abs(literal - generic) > 1.0

    def test_one_sample_kinds_match_refits(self):
        X = synthdata.sample("f2xf1", 40, seed=15)
        for spec in (
            FunctionalSpec("shannon_entropy"),
            FunctionalSpec("tsallis_entropy", alpha=0.7),
            FunctionalSpec("renyi_entropy", alpha=1.4),
            FunctionalSpec("shannon_mi"),
        ):
            pair = fitted_pair(spec, X, h=0.4)
            grid = quadrature.GridSpec(2, 48)
            np.testing.assert_allclose(F.loo_terms(spec, pair, grid), F.reference_loo_terms(spec, pair, grid), atol=1e-9)

    def test_cond_tsallis_mi_matches_refits(self):
        spec = FunctionalSpec("cond_tsallis_mi", alpha=0.75, z_dim=1)
        X = synthdata.sample("f2xf1xuniform", 12, seed=16)
        pair = fitted_pair(spec, X, h=0.5)
        grid = quadrature.GridSpec(3, 10)
        np.testing.assert_allclose(F.loo_terms(spec, pair, grid), F.reference_loo_terms(spec, pair, grid), atol=1e-9)


class TestVme:
    def test_same_density_is_zero(self):
        f = synthdata.parse_dist("f2")
        assert F.vme_residual("shannon_entropy", f, f, 0.05, gl_grid(1)) == 0.0

    def test_bad_t(self):
        f = synthdata.parse_dist("f2")
        with pytest.raises(Exception):
            F.vme_residual("shannon_entropy", f, f, 0.5, gl_grid(1))

    @pytest.mark.parametrize("label,spec,p,q", catalog(), ids=lambda v: v if isinstance(v, str) else "")
    def test_quadratic_remainder(self, label, spec, p, q):
        P, Q = resolve(spec, p), resolve(spec, q)
        dim = (P[0] if isinstance(P, tuple) else P).dim
        grid = gl_grid(dim)
        ratio = F.vme_residual(spec, P, Q, 0.05, grid) / F.vme_residual(spec, P, Q, 0.025, grid)
        assert 3.0 <= ratio <= 5.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(0.2, 1.8).filter(lambda v: abs(v - 1) > 0.05))
def test_tsallis_div_euler_identity(seed, a):
    # T + psi_f(x) + psi_g(x) collapses pointwise for degree-one homogeneous integrands
    rng = np.random.default_rng(seed)
    spec = FunctionalSpec("tsallis_div", alpha=a)
    pair = fitted_pair(spec, rng.random((30, 1)), rng.random((30, 1)) ** 2, h=0.4)
    grid = quadrature.GridSpec(1, 256)
    fitted = F.FittedFunctional(spec, pair, grid)
    x, y = rng.random((5, 1)), rng.random((5, 1))
    total = fitted.value + fitted.influence("first", x) + fitted.influence("second", y)
    f, g = pair.first, pair.second
    want = 1 / (1 - a) + a / (a - 1) * (f(x) / g(x)) ** (a - 1) - (f(y) / g(y)) ** a
    np.testing.assert_allclose(total, want, atol=1e-10)

"""Tests for collar metrics, frame Christoffels, curvature, and rho-series."""

import math

import numpy as np
import pytest

from ahrenvol import collar
from ahrenvol.collar import (
    BoundaryJet,
    PerturbedGeometry,
    PolynomialPerturbation,
    RadialGeometry,
    TorusJetGeometry,
    chebyshev_rho_nodes,
    christoffel_expansion,
    curvature_bar,
    curvature_in_frame,
    det_series,
    hyperbolic_profile,
    jet_identity_report,
    perturbed_profile,
    random_jet,
    rho_series_fit,
    sample_collar_metric,
)

HYP = np.einsum("su,tv->stuv", np.eye(4), np.eye(4)) - np.einsum(
    "sv,tu->stuv", np.eye(4), np.eye(4)
)


class TestProfiles:
    def test_hyperbolic_profile_jet(self):
        """A = 1 - rho^2/4 squares to 1 - rho^2/2 + rho^4/16: g2 = -gamma/2, g3 = 0."""
        prof = hyperbolic_profile()
        geom = RadialGeometry(prof)
        _, _, d2, d3 = geom.spatial(0.0)
        assert np.allclose(d2[0] / 2.0, -0.5 * np.eye(3), atol=1e-14)
        assert np.allclose(d3[0], 0.0, atol=1e-14)

    def test_profile_validation(self):
        from numpy.polynomial import Polynomial

        with pytest.raises(ValueError, match="A'\\(0\\) = 0"):
            collar.RadialProfile(Polynomial([1.0, 0.1, -0.25 - 0.1 * 0.0]))
        with pytest.raises(ValueError, match="A\\(0\\) = 1"):
            collar.RadialProfile(Polynomial([1.1, 0.0, -0.25]))

    def test_perturbed_profile_keeps_conditions(self):
        prof = perturbed_profile([0.03, -0.02, 0.01])
        assert prof.a(0.0) == pytest.approx(1.0, abs=1e-13)
        assert prof.a(0.0, 1) == pytest.approx(0.0, abs=1e-13)
        assert prof.a(2.0) == pytest.approx(0.0, abs=1e-12)
        assert prof.a(2.0, 1) == pytest.approx(-1.0, abs=1e-12)

    def test_perturbed_profile_zero_amplitude(self):
        prof = perturbed_profile([0.0, 0.0])
        rr = np.linspace(0.01, 1.9, 50)
        assert np.allclose(prof.a(rr), hyperbolic_profile().a(rr), atol=1e-15)


class TestSampling:
    def test_flat_jet_is_product(self):
        jet = BoundaryJet.flat(4)
        samp = sample_collar_metric(jet, [0.1, 0.5])
        for rho in samp.rho_grid:
            assert np.allclose(samp.spatial_metric(float(rho)), np.eye(3), atol=1e-15)

    def test_jet_substitution(self):
        """gamma = I, g2 = 0, g3 = diag(a, b, c) at rho = 0.1."""
        d = np.diag([1.0, 2.0, 3.0])
        jet = BoundaryJet.constant(4, np.eye(3), np.zeros((3, 3)), d)
        samp = sample_collar_metric(jet, [0.1])
        assert np.allclose(samp.spatial_metric(0.1), np.eye(3) + 1e-3 * d, atol=1e-15)

    def test_positivity_error(self):
        jet = BoundaryJet.constant(4, np.eye(3), -10.0 * np.eye(3), np.zeros((3, 3)))
        with pytest.raises(ValueError, match="not positive-definite at rho="):
            sample_collar_metric(jet, [0.5])

    def test_gbar_normal_form(self):
        """gbar_k4 = delta_k4 identically on every constructed sample."""
        jet = random_jet(11, n_grid=4)
        geom = TorusJetGeometry(jet)
        gbar = collar._gbar_blocks(geom, 0.23)[0]
        assert np.allclose(gbar[:, 3, :3], 0.0)
        assert np.allclose(gbar[:, :3, 3], 0.0)
        assert np.allclose(gbar[:, 3, 3], 1.0)

    def test_random_jet_determinism_and_bounds(self):
        j1 = random_jet(5, n_grid=8, amplitude=0.05)
        j2 = random_jet(5, n_grid=8, amplitude=0.05)
        assert np.array_equal(j1.gamma, j2.gamma)
        assert np.max(np.abs(j1.gamma - np.eye(3))) <= 0.05 * 4 + 1e-12
        assert np.max(np.abs(j1.g3)) <= 0.05 * 4 + 1e-12


class TestRhoSeriesFit:
    def test_exact_polynomial(self):
        rho = np.linspace(0.05, 0.4, 8)
        series = rho_series_fit(rho, 1.0 + rho**3)
        assert np.allclose(series.coeffs, [1.0, 0.0, 0.0, 1.0, 0.0], atol=1e-12)
        assert series.residual < 1e-12

    def test_field_valued(self):
        rho = np.linspace(0.05, 0.4, 9)
        vals = np.stack([np.array([[r, r**2], [2.0, r**4]]) for r in rho])
        series = rho_series_fit(rho, vals)
        assert series.coefficient(1)[0, 0] == pytest.approx(1.0, abs=1e-10)
        assert series.coefficient(2)[0, 1] == pytest.approx(1.0, abs=1e-10)
        assert series.coefficient(0)[1, 0] == pytest.approx(2.0, abs=1e-10)
        assert series.coefficient(4)[1, 1] == pytest.approx(1.0, abs=1e-8)

    def test_errors(self):
        with pytest.raises(ValueError, match="at least"):
            rho_series_fit(np.array([0.1, 0.2, 0.3]), np.ones(3), k_max=4)
        rho = 0.4 * 0.5 ** np.arange(20)
        with pytest.raises(ValueError, match="ill-conditioned Vandermonde"):
            rho_series_fit(rho, np.ones(20), k_max=12)


class TestChristoffels:
    def test_gamma4_expansion_coefficients(self):
        """(Gamma^4_ij)^(0) = gamma, ^(1) = ^(2) = 0, ^(3) = -g3/2."""
        jet = random_jet(7, n_grid=4, amplitude=0.05)
        samp = sample_collar_metric(jet)
        series = christoffel_expansion(samp)
        g4 = lambda k: series.coefficient(k)[:, 3, :3, :3]
        assert np.max(np.abs(g4(0) - jet.gamma.reshape(-1, 3, 3))) < 1e-10
        assert np.max(np.abs(g4(1))) < 1e-10
        assert np.max(np.abs(g4(2))) < 1e-9
        assert np.max(np.abs(g4(3) + 0.5 * jet.g3.reshape(-1, 3, 3))) < 1e-8

    def test_two_fours_vanish(self):
        """Gamma^u_st = 0 whenever two of {s, t, u} equal 4."""
        jet = random_jet(8, n_grid=4, amplitude=0.05)
        geom = TorusJetGeometry(jet)
        for rho in (0.05, 0.3):
            gamma = collar.christoffels(geom, rho)[0]
            assert np.max(np.abs(gamma[:, 3, 3, 3])) < 1e-14  # s=t=u=4
            assert np.max(np.abs(gamma[:, 3, :3, 3])) < 1e-14  # Gamma^4_i4
            assert np.max(np.abs(gamma[:, 3, 3, :3])) < 1e-14  # Gamma^4_4i
            assert np.max(np.abs(gamma[:, :3, 3, 3])) < 1e-14  # Gamma^i_44

    def test_radial_christoffels_match_closed_form(self):
        """Gammabar^4_ij = -A A' delta_ij, Gammabar^i_4j = (A'/A) delta_ij."""
        prof = hyperbolic_profile()
        geom = RadialGeometry(prof)
        rho = 0.7
        a, a1 = prof.a(rho), prof.a(rho, 1)
        gbar = collar.christoffels_bar(geom, rho)[0][0]
        assert np.allclose(gbar[3, :3, :3], -a * a1 * np.eye(3), atol=1e-13)
        assert np.allclose(gbar[:3, 3, :3][np.arange(3), np.arange(3)], a1 / a, atol=1e-13)


class TestCurvature:
    def test_hyperbolic_profile_exact(self):
        """The Poincare ball has R_stuv = g_su g_tv - g_sv g_tu everywhere."""
        samp = sample_collar_metric(hyperbolic_profile(), [0.05, 0.4, 1.2, 1.9])
        for rho in samp.rho_grid:
            cur = samp.curvature(float(rho))
            assert np.max(np.abs(cur["riem_on"] - HYP)) < 1e-8
            assert cur["invariants"]["s"][0] == pytest.approx(12.0, abs=1e-10)
            assert cur["invariants"]["pff"][0] == pytest.approx(
                3.0 / (4.0 * math.pi**2), rel=1e-10
            )

    def test_cusp_exact(self):
        samp = sample_collar_metric(BoundaryJet.flat(4), [0.1, 0.8])
        for rho in samp.rho_grid:
            cur = samp.curvature(float(rho))
            assert np.max(np.abs(cur["riem_on"] - HYP)) < 1e-12

    def test_leading_coefficient_is_constant_curvature(self):
        """R^(0)_ijkl = gamma_ik gamma_jl - gamma_il gamma_jk on random jets."""
        jet = random_jet(21, n_grid=8, amplitude=0.05)
        geom = TorusJetGeometry(jet)
        grid = chebyshev_rho_nodes(0.2, 16)
        riems = np.stack([curvature_in_frame(geom, float(r))["riem"] for r in grid])
        series = rho_series_fit(grid, riems, k_max=6)
        gb = collar._gbar_blocks(geom, 0.0)[0]
        want = np.einsum("nsu,ntv->nstuv", gb, gb) - np.einsum("nsv,ntu->nstuv", gb, gb)
        assert np.max(np.abs(series.coefficient(0) - want)) < 1e-8
        assert np.max(np.abs(series.coefficient(1))) < 1e-7

    def test_third_coefficient_display(self):
        """R^(3)_ijkl equals the rho^3 part of G4_ik G4_jl - G4_il G4_jk, which
        is -1/2 (gamma_ik g3_jl + gamma_jl g3_ik - gamma_il g3_jk - gamma_jk g3_il)
        since G4 = gamma - rho^3 g3 / 2.  (The sign is pinned by the product
        structure; a +1/2 variant is inconsistent with it.)

        Curvature coefficients of even rho-parity are exactly invisible to the
        odd part of the series, so we extract c3 from the antisymmetrized
        samples (R(rho) - R(-rho))/2 fitted against odd powers only."""
        jet = random_jet(22, n_grid=8, amplitude=0.05)
        grid = chebyshev_rho_nodes(0.2, 16)
        geom = TorusJetGeometry(jet)
        odd = np.stack(
            [
                0.5
                * (
                    curvature_in_frame(geom, float(r))["riem"]
                    - curvature_in_frame(geom, -float(r))["riem"]
                )
                for r in grid
            ]
        )
        scaled = grid / grid.max()
        design = np.stack([scaled, scaled**3, scaled**5, scaled**7], axis=1)
        coef, *_ = np.linalg.lstsq(design, odd.reshape(len(grid), -1), rcond=None)
        c1 = (coef[0] / grid.max()).reshape(odd.shape[1:])
        c3 = (coef[1] / grid.max() ** 3).reshape(odd.shape[1:])
        assert np.max(np.abs(c1)) < 1e-9  # totally geodesic: no rho^1 term
        gb = collar._gbar_blocks(geom, 0.0)[0]
        g3 = np.zeros_like(gb)
        g3[:, :3, :3] = jet.g3.reshape(-1, 3, 3)
        want = -0.5 * (
            np.einsum("nik,njl->nijkl", gb, g3)
            + np.einsum("njl,nik->nijkl", gb, g3)
            - np.einsum("nil,njk->nijkl", gb, g3)
            - np.einsum("njk,nil->nijkl", gb, g3)
        )
        got = c3[:, :3, :3, :3, :3]
        assert np.max(np.abs(got - want[:, :3, :3, :3, :3])) < 1e-7

    def test_parity_of_invariants(self):
        """Fitted rho^1 coefficient of s, |r|^2, |R|^2 below 1e-6 of scale."""
        for seed in (31, 32, 33):
            jet = random_jet(seed, n_grid=8, amplitude=0.05)
            geom = TorusJetGeometry(jet)
            grid = chebyshev_rho_nodes(0.2, 16)
            fields = {"s": [], "r2": [], "R2": []}
            for rho in grid:
                inv = curvature_in_frame(geom, float(rho))["invariants"]
                for k in fields:
                    fields[k].append(inv[k])
            for k, vals in fields.items():
                arr = np.stack(vals)
                series = rho_series_fit(grid, arr, k_max=6)
                assert np.max(np.abs(series.coefficient(1))) < 1e-6 * np.max(np.abs(arr))

    def test_fd2_converges_to_spectral(self):
        """Halving the FD spacing shrinks the curvature error by >= 3.5."""
        rho = 0.2
        devs = []
        for n_grid in (16, 32):
            jet = random_jet(41, n_grid=n_grid, amplitude=0.05)
            exact = curvature_in_frame(TorusJetGeometry(jet, "spectral"), rho)["riem_on"]
            fd = curvature_in_frame(TorusJetGeometry(jet, "fd2"), rho)["riem_on"]
            devs.append(np.max(np.abs(fd - exact)))
        assert devs[0] / devs[1] >= 3.0

    def test_ambient_curvature_round_sphere(self):
        """At the cap rho -> 2 the ambient metric is smooth; spot-check the
        ambient unit-sphere slice curvature against the closed form at A = 1."""
        # profile with A(rho*) = 1 gives slice metric g_{S^3} exactly
        prof = hyperbolic_profile()
        geom = RadialGeometry(prof)
        bar = curvature_bar(geom, 1e-6)
        # at rho ~ 0, gbar ~ drho^2 + g_{S^3}: mixed components
        # Rbar_i4j4 -> A'^2 + A A'' = -1/2 (A' -> 0, A'' = -1/2)
        r_mixed = bar["riem"][0, :3, 3, :3, 3]
        assert np.allclose(r_mixed, -0.5 * np.eye(3), atol=1e-5)


class TestDetSeries:
    def test_trace_examples(self):
        d = np.diag([1.0, 2.0, 3.0])
        jet = BoundaryJet.constant(4, np.eye(3), d, np.zeros((3, 3)))
        out = det_series(sample_collar_metric(jet))
        assert np.allclose(out["v2"], 3.0, atol=1e-12)
        jet = BoundaryJet.constant(4, np.eye(3), np.zeros((3, 3)), d)
        out = det_series(sample_collar_metric(jet))
        assert np.allclose(out["v3"], 3.0, atol=1e-12)

    def test_hyperbolic_profile_values(self):
        out = det_series(sample_collar_metric(hyperbolic_profile()))
        assert out["v2"][0] == pytest.approx(-0.75, abs=1e-12)
        assert out["v3"][0] == pytest.approx(0.0, abs=1e-12)
        # cross-check against the sampled least-squares series
        assert out["series"].coefficient(2)[0] == pytest.approx(-0.75, abs=1e-3)

    def test_trace_identity_random_jets(self):
        """tr_gamma g3 = 2 v3, relative 1e-8, on random jets."""
        for seed in range(50, 56):
            jet = random_jet(seed, n_grid=4, amplitude=0.05)
            out = det_series(sample_collar_metric(jet))
            tr = np.einsum(
                "nab,nab->n", np.linalg.inv(out["gamma"]), jet.g3.reshape(-1, 3, 3)
            )
            assert np.max(np.abs(tr - 2.0 * out["v3"])) < 1e-8 * max(
                1e-6, float(np.max(np.abs(tr)))
            )

    def test_totally_geodesic_error(self):
        """A nonzero first-order term is rejected with a diagnostic."""

        class OddGeometry(TorusJetGeometry):
            def spatial(self, rho):
                g, d1, d2, d3 = super().spatial(rho)
                bump = 0.01 * np.eye(3)
                return g + rho * bump, d1 + bump, d2, d3

        geom = OddGeometry(BoundaryJet.flat(4))
        samp = collar.CollarSample(geometry=geom, rho_grid=np.array([0.1, 0.2]))
        with pytest.raises(ValueError, match="collar not totally geodesic"):
            det_series(samp)


class TestJetIdentities:
    def test_hyperbolic_trivial(self):
        rep = jet_identity_report(sample_collar_metric(hyperbolic_profile()))
        assert np.max(np.abs(rep["g3"])) < 1e-12
        assert rep["dev_g3_identity"] < 1e-9
        assert rep["dev_v3_identity"] < 1e-9

    def test_random_jets(self):
        """g3 = -1/3 d_rho Rbar_i4j4 and v3 = -1/6 d_rho ricbar_44 at rho=0."""
        for seed in (61, 62):
            jet = random_jet(seed, n_grid=8, amplitude=0.05)
            rep = jet_identity_report(sample_collar_metric(jet))
            assert rep["dev_g3_identity"] < 1e-6
            assert rep["dev_v3_identity"] < 1e-6
            assert rep["dev_trace_identity"] < 1e-8

    def test_radial_perturbed(self):
        prof = perturbed_profile([0.02])
        rep = jet_identity_report(sample_collar_metric(prof))
        assert rep["dev_g3_identity"] < 1e-8
        assert rep["dev_v3_identity"] < 1e-8


class TestPerturbedGeometry:
    def test_linear_in_t(self):
        jet = BoundaryJet.flat(4)
        base = TorusJetGeometry(jet)
        m = PolynomialPerturbation({2: 0.3 * np.broadcast_to(np.eye(3), (64, 3, 3))})
        pert = PerturbedGeometry(base, m, t=0.1)
        g, d1, d2, d3 = pert.spatial(0.5)
        assert np.allclose(g, np.eye(3) + 0.1 * 0.3 * 0.25 * np.eye(3), atol=1e-15)
        assert np.allclose(d1, 0.1 * 0.3 * 1.0 * np.eye(3), atol=1e-15)
        assert np.allclose(d2, 0.1 * 0.3 * 2.0 * np.eye(3), atol=1e-15)
        assert np.allclose(d3, 0.0, atol=1e-15)

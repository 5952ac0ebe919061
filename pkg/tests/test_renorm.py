"""Finite parts, volume families, Chern boundary terms, Gauss-Bonnet audits.

Oracles are closed forms: the hyperbolic ball volume
2 pi^2 int_eps^2 rho^-4 (1 - rho^2/4)^3 drho with exact antiderivative
F(rho) = -rho^-3/3 + (3/4) rho^-1 + (3/16) rho - rho^3/192, the flat-torus
product metric, and exactly-representable asymptotic models.

The checks on v3 != 0 backgrounds document a genuine discrepancy: the
boundary-term finite part does not vanish but equals (1/2pi^2) int v3 dvol,
so the renormalized Pfaffian integral is chi - (1/2pi^2) int v3 dvol rather
than chi.  The as-stated claims are kept as strict expected failures and the
corrected identity is asserted to tight tolerance (see the decisions ledger).
"""

import math

import numpy as np
import pytest

from ahrenvol import collar, renorm
from ahrenvol.collar import (
    BoundaryJet,
    CollarSample,
    RadialGeometry,
    TorusJetGeometry,
    hyperbolic_profile,
    perturbed_profile,
    random_jet,
)
from ahrenvol.renorm import (
    boundary_II,
    default_eps_grid,
    finite_part,
    gauss_bonnet_audit,
    paycha_finite_part,
    renormalized_action,
    volume_family,
)

PI2 = math.pi**2


def hyperbolic_volume(eps: float) -> float:
    """2 pi^2 [F(2) - F(eps)], F the exact antiderivative of rho^-4 A^6."""
    F = lambda r: -1.0 / (3.0 * r**3) + 0.75 / r + 3.0 * r / 16.0 - r**3 / 192.0
    return 2.0 * PI2 * (F(2.0) - F(eps))


class TestFinitePart:
    def test_exact_model_recovered(self):
        eps = default_eps_grid()
        vals = 2.0 * eps**-3 - 5.0 * eps**-1 + 1.5 * np.log(1.0 / eps) + 7.0
        fp = finite_part((eps, vals))
        assert np.allclose(fp.as_tuple(), (2.0, -5.0, 1.5, 7.0), atol=1e-10)

    def test_half_grid_refit_stability(self):
        eps = default_eps_grid()
        vals = 2.0 * eps**-3 - 5.0 * eps**-1 + 1.5 * np.log(1.0 / eps) + 7.0
        fp = finite_part((eps, vals))
        assert fp.half_grid_drift < 100.0 * fp.fit_residual + 1e-12

    def test_pure_power_integral(self):
        """int_eps^1 rho^-4 drho = (eps^-3 - 1)/3."""
        eps = default_eps_grid()
        fp = finite_part((eps, (eps**-3 - 1.0) / 3.0))
        assert np.allclose(fp.as_tuple(), (1.0 / 3.0, 0.0, 0.0, -1.0 / 3.0), atol=1e-10)

    def test_pure_log_integral(self):
        """int_eps^1 rho^-1 drho = log(1/eps)."""
        eps = default_eps_grid()
        fp = finite_part((eps, np.log(1.0 / eps)))
        assert np.allclose(fp.as_tuple(), (0.0, 0.0, 1.0, 0.0), atol=1e-10)

    def test_linearity(self):
        rng = np.random.default_rng(11)
        eps = default_eps_grid()
        f = rng.standard_normal(4)
        g = rng.standard_normal(4)
        model = lambda c: c[0] * eps**-3 + c[1] * eps**-1 + c[2] * np.log(1 / eps) + c[3]
        a, b = 2.5, -0.75
        lhs = finite_part((eps, a * model(f) + b * model(g))).as_tuple()
        rhs = a * np.array(finite_part((eps, model(f))).as_tuple()) + b * np.array(
            finite_part((eps, model(g))).as_tuple()
        )
        assert np.allclose(lhs, rhs, atol=1e-9)

    def test_dict_input(self):
        eps = default_eps_grid()
        fp = finite_part({float(e): float(3.0 / e**3 + 2.0) for e in eps})
        assert fp.c0 == pytest.approx(3.0, abs=1e-10)
        assert fp.finite == pytest.approx(2.0, abs=1e-10)

    def test_too_few_samples(self):
        with pytest.raises(ValueError, match="at least 6"):
            finite_part((np.array([0.1, 0.2, 0.3, 0.4]), np.ones(4)))

    def test_insufficient_span(self):
        eps = np.linspace(0.1, 0.2, 8)
        with pytest.raises(ValueError, match="factor of 8"):
            finite_part((eps, np.ones(8)))

    def test_model_rejection(self):
        eps = default_eps_grid()
        with pytest.raises(ValueError, match="asymptotic model rejected"):
            finite_part((eps, np.sin(50.0 * eps)))

    def test_ill_conditioned(self):
        eps = np.array([0.01, 0.01 + 1e-13, 0.05, 0.05 + 1e-13, 0.1, 0.1 + 1e-13, 0.3])
        with pytest.raises(ValueError, match="ill-conditioned"):
            finite_part((eps, eps**-3))

    def test_log_flagging(self):
        eps = default_eps_grid()
        with_log = finite_part((eps, np.log(1.0 / eps) + 1.0))
        without = finite_part((eps, eps**-3 + 1.0))
        assert with_log.log_ambiguous
        assert not without.log_ambiguous


class TestPaycha:
    def test_hyperbolic_ball_cross_check(self):
        """Taylor-subtraction route reproduces V = 4 pi^2 / 3 independently."""
        f = lambda r: 2.0 * PI2 * (1.0 - r * r / 4.0) ** 3
        taylor = [2 * PI2, 0, -1.5 * PI2, 0, 3 * PI2 / 8, 0, -PI2 / 32, 0]
        v = paycha_finite_part(f, taylor, 2.0)
        assert v == pytest.approx(4.0 * PI2 / 3.0, abs=1e-10)

    def test_agrees_with_ls_fit(self):
        fam = volume_family(hyperbolic_profile())
        eps = np.array(sorted(fam))
        fp = finite_part((eps, np.array([fam[e] for e in eps])))
        f = lambda r: 2.0 * PI2 * (1.0 - r * r / 4.0) ** 3
        taylor = [2 * PI2, 0, -1.5 * PI2, 0, 3 * PI2 / 8, 0, -PI2 / 32, 0]
        assert fp.finite == pytest.approx(paycha_finite_part(f, taylor, 2.0), abs=1e-8)

    def test_needs_enough_coefficients(self):
        with pytest.raises(ValueError, match="at least 8"):
            paycha_finite_part(lambda r: 1.0, [1.0, 0.0, 0.0, 0.0], 1.0)


class TestVolumeFamily:
    def test_hyperbolic_closed_form(self):
        fam = volume_family(hyperbolic_profile(), eps_grid=[0.5, 0.7])
        for e, v in fam.items():
            assert abs(v - hyperbolic_volume(e)) < 1e-10 * abs(v)

    def test_hyperbolic_fitted_asymptotics(self):
        """Acceptance: (C0, C2, L, V) = (2pi^2/3, -3pi^2/2, 0, 4pi^2/3)."""
        fam = volume_family(hyperbolic_profile())
        eps = np.array(sorted(fam))
        fp = finite_part((eps, np.array([fam[e] for e in eps])))
        want = (2 * PI2 / 3, -1.5 * PI2, 0.0, 4 * PI2 / 3)
        for got, ref in zip(fp.as_tuple(), want):
            assert abs(got - ref) < 1e-6 * max(1.0, abs(ref))

    def test_flat_torus(self):
        fam = volume_family(BoundaryJet.flat(4), rho_max=1.0)
        for e, v in fam.items():
            want = (2.0 * math.pi) ** 3 * (e**-3 - 1.0) / 3.0
            assert abs(v - want) < 1e-10 * abs(want)

    def test_log_coefficient_from_g3(self):
        """Nonzero mean tr_gamma g3 produces the predicted log coefficient."""
        rng = np.random.default_rng(5)
        n = 4
        g3 = np.zeros((n, n, n, 3, 3))
        for i in range(3):
            g3[..., i, i] = 0.1 + 0.05 * rng.standard_normal((n, n, n))
        jet = BoundaryJet(n, BoundaryJet.flat(n).gamma, np.zeros_like(g3), g3)
        fam = volume_family(jet, rho_max=0.8)
        eps = np.array(sorted(fam))
        fp = finite_part((eps, np.array([fam[e] for e in eps])))
        v3 = 0.5 * np.einsum("...ii->...", g3)  # gamma = identity
        want = (2.0 * math.pi / n) ** 3 * float(np.sum(v3))
        assert abs(fp.log_coeff - want) < 1e-6 * max(1.0, abs(want))
        assert fp.log_ambiguous


class TestBoundaryII:
    def test_flat_torus_phi0(self):
        """Gamma4 = identity exactly: Phi0 = 6 (2 pi)^3 eps^-3.

        The cusp metric is hyperbolic, so the curvature term does not vanish:
        sum eps(sig) eps(eta) R_{s1 s2 e1 e2} delta_{s3 e3} = 12 pointwise,
        making Phi1 equal to Phi0 on every slice.
        """
        sample = collar.sample_collar_metric(BoundaryJet.flat(4))
        for eps in (0.1, 0.2, 0.4):
            bt = boundary_II(sample, eps)
            assert bt.phi0_integral == pytest.approx(
                6.0 * (2 * math.pi) ** 3 / eps**3, rel=1e-12
            )
            assert bt.phi1_integral == pytest.approx(bt.phi0_integral, rel=1e-12)
            assert bt.ii_integral == pytest.approx(
                (bt.phi0_integral / 12 - bt.phi1_integral / 8) / PI2
            )

    def test_hyperbolic_gauss_bonnet_slicewise(self):
        """int II = chi - (3/4pi^2) Vol(M_eps), both sides independent."""
        eps_grid = default_eps_grid()
        sample = CollarSample(
            geometry=RadialGeometry(hyperbolic_profile()), rho_grid=eps_grid
        )
        fam = volume_family(hyperbolic_profile(), eps_grid=eps_grid)
        for e in (eps_grid[0], eps_grid[5], eps_grid[-1]):
            ii = boundary_II(sample, float(e)).ii_integral
            want = 1.0 - 3.0 / (4.0 * PI2) * fam[float(e)]
            assert abs(ii - want) < 1e-9 * max(1.0, abs(want))

    def test_eps_outside_hull(self):
        sample = collar.sample_collar_metric(BoundaryJet.flat(4))
        with pytest.raises(ValueError, match="outside the rho-grid hull"):
            boundary_II(sample, 1.7)


class TestGaussBonnetAudit:
    def test_hyperbolic_ball(self):
        rep = gauss_bonnet_audit(hyperbolic_profile())
        assert rep["passed"]
        assert abs(rep["fp_interior"].finite - 1.0) < 1e-6
        assert np.max(np.abs(rep["total"] - 1.0)) < 1e-9

    def test_degenerate_perturbation_matches_hyperbolic(self):
        base = gauss_bonnet_audit(hyperbolic_profile())
        pert = gauss_bonnet_audit(perturbed_profile([0.0, 0.0, 0.0]))
        assert np.array_equal(base["interior"], pert["interior"])
        assert np.array_equal(base["boundary"], pert["boundary"])

    def test_sum_constant_on_random_profiles(self):
        """Gauss-Bonnet exactness at every eps, including v3 != 0 profiles."""
        rng = np.random.default_rng(23)
        for _ in range(3):
            theta = 0.02 * rng.uniform(-1.0, 1.0, size=3)
            rep = gauss_bonnet_audit(perturbed_profile(theta))
            assert rep["checks"][0]["passed"], rep["checks"][0]
            assert np.max(np.abs(rep["total"] - 1.0)) < 1e-6

    def test_even_perturbation_satisfies_theorem(self):
        """v3 = 0 (no rho^3 term): both finite-part claims hold as stated."""
        rep = gauss_bonnet_audit(perturbed_profile([0.0, 0.0, 0.02]))
        assert rep["passed"], rep["checks"]

    @pytest.mark.xfail(
        strict=True,
        reason="documented discrepancy: FP int II = (1/2pi^2) int v3 dvol_gamma,"
        " not 0, for v3 != 0 profiles (decisions ledger)",
    )
    def test_finite_parts_as_stated_with_v3(self):
        rep = gauss_bonnet_audit(perturbed_profile([0.01, 0.0, 0.0]))
        assert rep["passed"], rep["checks"]

    def test_corrected_finite_part_identity(self):
        """FP int Pff = chi - (1/2pi^2) int v3 dvol_gamma; no log term."""
        rng = np.random.default_rng(31)
        for _ in range(3):
            theta = 0.02 * rng.uniform(-1.0, 1.0, size=3)
            prof = perturbed_profile(theta)
            rep = gauss_bonnet_audit(prof)
            v3 = float(collar.det_series(collar.sample_collar_metric(prof))["v3"][0])
            shift = v3  # (1/2pi^2) * v3 * Vol(S^3) = v3
            assert abs(rep["fp_interior"].finite - (1.0 - shift)) < 2e-5
            assert abs(rep["fp_boundary"].finite - shift) < 2e-5
            assert abs(rep["fp_interior"].log_coeff) < 1e-4

    def test_failure_is_reported_not_raised(self):
        rep = gauss_bonnet_audit(perturbed_profile([0.01, 0.0, 0.0]))
        assert not rep["passed"]
        failing = [c for c in rep["checks"] if not c["passed"]]
        assert failing and all("anchor" in c for c in failing)


class TestRenormalizedAction:
    def test_hyperbolic_values(self):
        act = renormalized_action(hyperbolic_profile())
        assert act["action"].finite == pytest.approx(48.0 * PI2, rel=1e-8)
        assert act["s2"].finite == pytest.approx(144.0 * 4.0 * PI2 / 3.0, rel=1e-8)
        assert abs(act["z2"].finite) < 1e-10
        assert abs(act["w2"].finite) < 1e-10

    def test_flat_torus_scaling(self):
        """Pointwise cusp constants scale by the finite part of the volume."""
        act = renormalized_action(BoundaryJet.flat(2), rho_max=1.0)
        scale = -((2.0 * math.pi) ** 3) / 3.0
        assert act["s2"].finite == pytest.approx(144.0 * scale, rel=1e-8)
        assert act["action"].finite == pytest.approx(36.0 * scale, rel=1e-8)
        assert abs(act["z2"].finite) < 1e-6

    def test_rewrite_identity_random_profiles(self):
        """s^2 - 3|r|^2 = s^2/4 - 3|z|^2 on random profiles.

        The identity is sharp at the integrand-family level (the two sides
        are pointwise-identical combinations of the same curvature
        invariants); the finite-part comparison additionally carries fit
        noise amplified by the ~1e8 dynamic range of the families, so it is
        checked against a looser floor.
        """
        rng = np.random.default_rng(7)
        for _ in range(10):
            theta = 0.02 * rng.uniform(-1.0, 1.0, size=3)
            act = renormalized_action(perturbed_profile(theta))
            assert act["rewrite_deviation"] < 1e-8
            assert act["rewrite_fp_deviation"] < 1e-5


class TestTheorem7Cancellation:
    """eps^0 coefficients of the Phi0 / Phi1 slice families on torus jets."""

    @staticmethod
    def _phi_fits(jet):
        eps = default_eps_grid()
        sample = CollarSample(geometry=TorusJetGeometry(jet), rho_grid=eps)
        bts = [boundary_II(sample, float(e)) for e in eps]
        fp0 = finite_part((eps, np.array([b.phi0_integral for b in bts])))
        fp1 = finite_part((eps, np.array([b.phi1_integral for b in bts])))
        return fp0, fp1

    @staticmethod
    def _int_v3(jet):
        geom = TorusJetGeometry(jet)
        det = collar.det_series(collar.sample_collar_metric(jet))
        sqrt_gamma = np.sqrt(np.linalg.det(det["gamma"]))
        return geom.weight * float(np.sum(sqrt_gamma * det["v3"]))

    @pytest.mark.xfail(
        strict=True,
        reason="documented discrepancy: the Phi-family eps^0 coefficients equal"
        " -12 int v3 dvol_gamma, not 0 (decisions ledger)",
    )
    def test_cancellation_as_stated(self):
        jet = random_jet(101, n_grid=8, amplitude=0.05)
        fp0, fp1 = self._phi_fits(jet)
        assert abs(fp0.finite) < 1e-5
        assert abs(fp1.finite) < 1e-5

    def test_corrected_eps0_coefficients(self):
        rng_seeds = (101, 202, 303)
        for seed in rng_seeds:
            jet = random_jet(seed, n_grid=8, amplitude=0.05)
            fp0, fp1 = self._phi_fits(jet)
            want = -12.0 * self._int_v3(jet)
            scale = max(1.0, abs(want))
            assert abs(fp0.finite - want) < 1e-3 * scale
            assert abs(fp1.finite - want) < 1e-3 * scale

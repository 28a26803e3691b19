"""Averaging-operator tests: spectral and grid routes, thresholds, gain."""

import numpy as np
import pytest

from regnoise.averaging import (
    AveragingError,
    SpectralDrift,
    average_grid,
    average_spectral,
    check_commutation,
    ito_tanaka_rhs,
    regularity_gain_experiment,
    synthesize_drift,
    threshold_beta,
    threshold_flow,
)
from regnoise.gaussian import SamplePath, fbm_from_driver, sample_two_sided_bm
from regnoise.grids import (
    ScalarField,
    SpaceGrid,
    SpaceTimeField,
    TimeGrid,
    besov_norm,
    estimate_spatial_regularity,
    mollifier_kernel,
)

from oracles import phase_integral_ramp

TG = TimeGrid(0.0, 1.0, 1024)


def _bounded_bm_path(tgrid, seed, scale):
    """Brownian-increment path rescaled to stay inside the localisation box."""
    rng = np.random.default_rng(seed)
    v = np.concatenate([[0.0], np.cumsum(rng.normal(0.0, np.sqrt(tgrid.dt), tgrid.n))])
    v *= scale / max(1.0, np.max(np.abs(v)))
    return SamplePath(tgrid, v[:, None], seed=seed)


def _single_mode_drift(k, weight, n_modes=4):
    coeffs = np.zeros(2 * n_modes + 1, dtype=complex)
    coeffs[n_modes + k] = weight
    coeffs[n_modes - k] = np.conj(weight)
    return SpectralDrift(coeffs, 0.0, np.pi, 0, np.pi)


class TestSynthesizeDrift:
    def test_measured_class_alpha_half(self):
        grid = SpaceGrid(np.pi, 1024)
        estimates = []
        for seed in range(20):
            b = synthesize_drift(0.5, k_modes=32, support_radius=1.0, seed=seed)
            estimates.append(estimate_spatial_regularity(b.render(grid)).exponent)
        assert abs(np.median(estimates) - 0.5) < 0.15

    def test_zero_coefficients_render_zero(self):
        b = SpectralDrift(np.zeros(65, dtype=complex), 0.5, 1.0, 0, np.pi)
        grid = SpaceGrid(np.pi, 256)
        assert np.max(np.abs(b.render(grid).values)) == 0.0

    def test_doubling_coefficients_doubles_besov_norms(self):
        b1 = synthesize_drift(0.5, k_modes=32, support_radius=1.0, seed=9)
        b2 = SpectralDrift(2.0 * b1.coeffs, b1.alpha, b1.support_radius,
                           b1.seed, b1.box_half_width)
        grid = SpaceGrid(np.pi, 512)
        f1, f2 = b1.render(grid), b2.render(grid)
        for s, p, q in [(0.25, 2.0, 2.0), (-0.5, np.inf, np.inf), (0.75, 4.0, 1.0)]:
            n1 = besov_norm(f1, s, p, q)
            n2 = besov_norm(f2, s, p, q)
            assert abs(n2 - 2.0 * n1) < 1e-12 * n1

    def test_negative_alpha_mollified_blowup(self):
        """A distributional drift blows up like eps^alpha under mollification.

        The fitted slope is a trend check, not a sharp estimate: for
        alpha = -0.5 the log-log fit over eps in [0.02, 0.2] lands near
        -0.6 and the assertion brackets the target loosely.
        """
        b = synthesize_drift(-0.5, k_modes=256, support_radius=1.5, seed=4)
        grid = SpaceGrid(np.pi, 2048)
        eps_ladder = np.array([0.02, 0.03, 0.05, 0.08, 0.12, 0.2])
        sups = [np.max(np.abs(b.mollified(eps, grid).render(grid).values))
                for eps in eps_ladder]
        slope = np.polyfit(np.log(eps_ladder), np.log(sups), 1)[0]
        assert -0.9 < slope < -0.25

    def test_too_few_modes_rejected(self):
        with pytest.raises(AveragingError, match="modes"):
            synthesize_drift(0.5, k_modes=8, support_radius=1.0, seed=0)


class TestAverageSpectral:
    def test_zero_path_gives_linear_ramp(self):
        b = synthesize_drift(0.8, k_modes=16, support_radius=1.0, seed=3)
        tg = TimeGrid(0.0, 1.0, 512)
        w0 = SamplePath(tg, np.zeros((tg.n + 1, 1)), seed=0)
        av = average_spectral(b, w0, n_space=256)
        bx = b.render(av.field.sgrid).values
        for k in (1, 128, 512):
            t = tg.node(k)
            assert np.max(np.abs(av.field.values[k, 0] - t * bx)) < 1e-14

    def test_constant_drift_any_path(self):
        b = _single_mode_drift(0, 0.7)
        w = _bounded_bm_path(TG, 11, 2.0)
        av = average_spectral(b, w, n_space=64)
        for k in (0, 300, 1024):
            assert np.max(np.abs(av.field.values[k, 0] - 0.7 * TG.node(k))) < 1e-14

    def test_single_mode_ramp_matches_phase_integral(self):
        """cos(3x) averaged along w_s = v s has the closed-form profile
        Re[e^{3ix} (e^{3ivt} - 1)/(3iv)]."""
        v = 0.5
        b = _single_mode_drift(3, 0.5)
        tg = TimeGrid(0.0, 1.0, 4096)
        ramp = SamplePath(tg, (v * tg.nodes)[:, None], seed=0)
        av = average_spectral(b, ramp, n_space=256)
        xs = av.field.sgrid.axis
        for k in (100, 1000, 4096):
            t = tg.node(k)
            exact = np.real(np.exp(3j * xs) * phase_integral_ramp(3, v, t))
            assert np.max(np.abs(av.field.values[k, 0] - exact)) < 1e-6

    def test_localisation_violation_raises(self):
        b = synthesize_drift(0.8, k_modes=16, support_radius=1.0, seed=3)
        wbig = SamplePath(TG, np.full((TG.n + 1, 1), 2.5), seed=0)
        with pytest.raises(AveragingError, match="localisation"):
            average_spectral(b, wbig, n_space=64)

    def test_periodic_drift_reports_unbounded_window(self):
        b = _single_mode_drift(2, 0.3)
        w = _bounded_bm_path(TG, 12, 1.5)
        av = average_spectral(b, w, n_space=64)
        assert av.window_radius == np.inf


class TestAverageGrid:
    def test_space_constant_drift_integrates_in_time(self):
        g = np.cos(3.0 * TG.nodes) + 0.4
        sgrid = SpaceGrid(np.pi, 128)
        vals = np.ascontiguousarray(
            np.broadcast_to(g[:, None, None], (TG.n + 1, 1, sgrid.m)))
        field = SpaceTimeField(TG, sgrid, vals)
        w = _bounded_bm_path(TG, 5, 0.8)
        av = average_grid(field, w)
        for k in (200, 700, 1024):
            ref = np.trapezoid(g[: k + 1], dx=TG.dt)
            assert np.max(np.abs(av.field.values[k, 0] - ref)) < 1e-12

    def test_dual_route_agreement_with_spectral(self):
        tg = TimeGrid(0.0, 1.0, 2048)
        w = _bounded_bm_path(tg, 21, 0.8)
        b = synthesize_drift(1.5, k_modes=16, support_radius=1.0, seed=3)
        a_spec = average_spectral(b, w, n_space=512)
        a_grid = average_grid(b.render(a_spec.field.sgrid), w)
        dev = np.max(np.abs(a_spec.field.values - a_grid.field.values))
        assert dev < 1e-4

    def test_starts_at_zero(self):
        w = _bounded_bm_path(TG, 5, 0.8)
        b = synthesize_drift(1.0, k_modes=16, support_radius=1.0, seed=2)
        av = average_grid(b.render(SpaceGrid(np.pi, 256)), w)
        assert np.max(np.abs(av.field.values[0])) == 0.0

    def test_localisation_violation_raises(self):
        b = synthesize_drift(1.0, k_modes=16, support_radius=1.0, seed=2)
        field = b.render(SpaceGrid(np.pi, 256))
        wbig = SamplePath(TG, np.full((TG.n + 1, 1), 3.5), seed=0)
        with pytest.raises(AveragingError, match="localisation"):
            average_grid(field, wbig)


class TestCheckCommutation:
    def test_spectral_route_is_exact(self):
        b = synthesize_drift(1.5, k_modes=16, support_radius=1.0, seed=3)
        w = _bounded_bm_path(TG, 7, 0.9)
        report = check_commutation(b, w)
        assert report.derivative_deviation < 1e-10
        assert report.convolution_deviation < 1e-10

    def test_grid_route_on_band_limited_drift(self):
        """Dual-route oracle: recompute the derivative commutator through
        average_grid and check it stays within the interpolation budget."""
        b = synthesize_drift(1.5, k_modes=16, support_radius=1.0, seed=3)
        tg = TimeGrid(0.0, 1.0, 2048)
        w = _bounded_bm_path(tg, 21, 0.8)
        sgrid = SpaceGrid(np.pi, 512)
        a1 = average_grid(b.render(sgrid), w)
        a2 = average_grid(b.derivative().render(sgrid), w)
        dev = np.max(np.abs(a1.derivative_stack[0].values - a2.field.values))
        assert dev < 1e-4

    def test_zero_drift_commutes_exactly(self):
        b = SpectralDrift(np.zeros(33, dtype=complex), 0.5, 1.0, 0, np.pi)
        w = _bounded_bm_path(TG, 3, 0.9)
        report = check_commutation(b, w)
        assert report.derivative_deviation == 0.0
        assert report.convolution_deviation == 0.0


class TestItoTanakaRhs:
    def test_zero_drift_gives_zero_terms(self):
        tg = TimeGrid(-10.0, 1.0, 11 * 512)
        driver = sample_two_sided_bm(4, tg)
        b = SpectralDrift(np.zeros(17, dtype=complex), 0.5, 1.0, 0, np.pi)
        i1, i2 = ito_tanaka_rhs(b, driver, 0.3, 0.25, 0.5)
        assert np.max(np.abs(i1.values)) == 0.0
        assert np.max(np.abs(i2.values)) == 0.0

    def test_empty_window_gives_zero(self):
        tg = TimeGrid(-10.0, 1.0, 11 * 512)
        driver = sample_two_sided_bm(4, tg)
        b = synthesize_drift(2.0, k_modes=16, support_radius=1.0, seed=2)
        i1, i2 = ito_tanaka_rhs(b, driver, 0.3, 0.25, 0.25)
        assert np.max(np.abs(i1.values)) == 0.0
        assert np.max(np.abs(i2.values)) == 0.0

    def test_short_history_rejected(self):
        tg = TimeGrid(-2.0, 1.0, 3 * 512)
        driver = sample_two_sided_bm(4, tg)
        b = synthesize_drift(2.0, k_modes=16, support_radius=1.0, seed=2)
        with pytest.raises(AveragingError, match="T_back"):
            ito_tanaka_rhs(b, driver, 0.3, 0.25, 0.5)

    def test_matches_direct_average_of_smooth_drift(self):
        """The two Ito-Tanaka terms reconstruct T^w b(t) - T^w b(s) for the
        fractional path built from the driver (single seed, H = 0.3)."""
        b = synthesize_drift(3.0, k_modes=16, support_radius=np.pi, seed=5)
        driver = sample_two_sided_bm(7, TimeGrid(-10.0, 1.0, 45056))
        w = fbm_from_driver(driver, 0.3)
        i1, i2 = ito_tanaka_rhs(b, driver, 0.3, 0.25, 0.5)
        rhs = i1.values + i2.values
        avg = average_spectral(b, w, n_space=256)
        lhs = avg.increment(0.25, 0.5, avg.field.sgrid.axis)
        rel = np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs)
        assert rel < 0.05


class TestThresholds:
    def test_beta_reference_point(self):
        report = threshold_beta(0.0, 0.25, 4.0, 2.0, 1)
        assert report.bound == pytest.approx(0.5, abs=1e-15)

    def test_beta_degenerate_delta_is_unconstrained(self):
        assert threshold_beta(0.0, 0.0, 4.0, 2.0, 1).bound == np.inf

    def test_beta_shift_is_affine(self):
        for s in (-1.0, 0.0, 0.7, 2.3):
            lo = threshold_beta(s, 0.25, 4.0, 2.0, 1).bound
            hi = threshold_beta(s + 1.0, 0.25, 4.0, 2.0, 1).bound
            assert hi == pytest.approx(lo + 1.0, abs=1e-12)

    def test_beta_input_validation(self):
        with pytest.raises(AveragingError):
            threshold_beta(0.0, 1.5, 4.0, 2.0, 1)
        with pytest.raises(AveragingError):
            threshold_beta(0.0, 0.25, 1.5, 2.0, 1)
        with pytest.raises(AveragingError):
            threshold_beta(0.0, 0.25, 4.0, 1.0, 1)

    def test_flow_reference_points(self):
        assert threshold_flow(0.0, 1).bound == pytest.approx(0.5, abs=1e-15)
        assert threshold_flow(0.0, 2).bound == pytest.approx(0.25, abs=1e-15)
        assert threshold_flow(-1.0, 1).bound == pytest.approx(0.25, abs=1e-15)

    def test_flow_rejects_degenerate_order(self):
        with pytest.raises(AveragingError):
            threshold_flow(2.0, 2)
        with pytest.raises(AveragingError):
            threshold_flow(0.5, 0)


class TestRegularityGain:
    def test_gain_at_half_half(self):
        report = regularity_gain_experiment(0.5, 0.5, seeds=20)
        assert report.beta_measured >= 1.2
        assert report.gamma_measured >= 0.5
        assert report.rejected == 0

    def test_control_without_noise_recovers_drift_class(self):
        report = regularity_gain_experiment(0.5, 0.5, seeds=20, control=True)
        assert abs(report.beta_measured - 0.5) < 0.15

    def test_monotone_gain_in_hurst(self):
        betas = [regularity_gain_experiment(0.5, h, seeds=20).beta_measured
                 for h in (0.2, 0.4, 0.6)]
        assert betas[0] >= betas[1] >= betas[2]

    def test_coarse_resolution_rejected(self):
        with pytest.raises(AveragingError, match="blocks"):
            regularity_gain_experiment(0.5, 0.5, seeds=2, n_space=32)


class TestAveragingInvariants:
    def test_linearity_on_spectral_route(self):
        w = _bounded_bm_path(TG, 31, 0.9)
        b1 = synthesize_drift(1.0, k_modes=16, support_radius=1.0, seed=1)
        b2 = synthesize_drift(1.4, k_modes=16, support_radius=1.0, seed=2)
        combo = SpectralDrift(2.5 * b1.coeffs - 0.75 * b2.coeffs, 1.0,
                              1.0, 0, np.pi)
        a1 = average_spectral(b1, w, n_space=256).field.values
        a2 = average_spectral(b2, w, n_space=256).field.values
        ac = average_spectral(combo, w, n_space=256).field.values
        assert np.max(np.abs(ac - (2.5 * a1 - 0.75 * a2))) < 1e-13

    def test_linearity_on_grid_route(self):
        w = _bounded_bm_path(TG, 31, 0.9)
        sgrid = SpaceGrid(np.pi, 256)
        b1 = synthesize_drift(1.0, k_modes=16, support_radius=1.0, seed=1)
        b2 = synthesize_drift(1.4, k_modes=16, support_radius=1.0, seed=2)
        f1, f2 = b1.render(sgrid), b2.render(sgrid)
        combo = ScalarField(sgrid, 2.5 * f1.values - 0.75 * f2.values)
        a1 = average_grid(f1, w).field.values
        a2 = average_grid(f2, w).field.values
        ac = average_grid(combo, w).field.values
        assert np.max(np.abs(ac - (2.5 * a1 - 0.75 * a2))) < 1e-10

    def test_translation_covariance(self):
        """Averaging b along w + phi equals averaging the shifted drift
        b(. + phi_t) along w; the shifted slices are rendered exactly by
        mode phases so the deviation is pure quadrature mismatch."""
        tg = TimeGrid(0.0, 1.0, 4096)
        wv = 0.3 * np.sin(2.0 * np.pi * tg.nodes) + 0.1 * np.sin(5.3 * tg.nodes)
        pv = 0.2 * (np.cos(3.1 * tg.nodes) - 1.0)
        n_modes = 4
        rng = np.random.default_rng(5)
        coeffs = np.zeros(2 * n_modes + 1, dtype=complex)
        raw = rng.normal(size=n_modes) + 1j * rng.normal(size=n_modes)
        for k in range(1, n_modes + 1):
            coeffs[n_modes + k] = raw[k - 1] / k
            coeffs[n_modes - k] = np.conj(raw[k - 1] / k)
        b = SpectralDrift(coeffs, 0.5, np.pi, 5, np.pi)
        w = SamplePath(tg, wv[:, None], seed=0)
        shifted_path = SamplePath(tg, (wv + pv)[:, None], seed=0)
        a1 = average_spectral(b, shifted_path, n_space=256)
        modes = np.arange(-n_modes, n_modes + 1)
        slices = np.real((coeffs[None, :] * np.exp(1j * np.outer(pv, modes)))
                         @ np.exp(1j * np.outer(modes, a1.field.sgrid.axis)))
        a2 = average_grid(SpaceTimeField(tg, a1.field.sgrid, slices[:, None, :]), w)
        assert np.max(np.abs(a1.field.values - a2.field.values)) < 1e-6

    def test_time_additivity_depends_only_on_restriction(self):
        b = synthesize_drift(1.5, k_modes=16, support_radius=1.0, seed=3)
        w = _bounded_bm_path(TG, 21, 0.8)
        i_s, i_t = 300, 700
        modified = w.values.copy()
        modified[:i_s] = modified[i_s] + 0.05
        modified[i_t + 1:] = modified[i_t] - 0.07
        w2 = SamplePath(TG, modified, seed=0)
        a1 = average_spectral(b, w, n_space=256)
        a2 = average_spectral(b, w2, n_space=256)
        inc1 = a1.field.values[i_t] - a1.field.values[i_s]
        inc2 = a2.field.values[i_t] - a2.field.values[i_s]
        assert np.max(np.abs(inc1 - inc2)) < 1e-13

    def test_mollification_exchange_on_spectral_route(self):
        """Mollify-then-average equals average-then-mollify when both sides
        use the same discrete kernel (circular convolution)."""
        b = synthesize_drift(1.5, k_modes=16, support_radius=1.0, seed=3)
        w = _bounded_bm_path(TG, 21, 0.8)
        sgrid = SpaceGrid(np.pi, 512)
        eps = 0.15
        a_mol = average_spectral(b.mollified(eps, sgrid), w, n_space=512)
        a_raw = average_spectral(b, w, n_space=512)
        kernel = mollifier_kernel(sgrid, eps)
        wrapped = np.zeros(sgrid.m)
        half = kernel.size // 2
        wrapped[np.arange(-half, half + 1) % sgrid.m] += kernel
        multiplier = np.fft.rfft(wrapped) * sgrid.h
        for k in (64, 512, 1024):
            smoothed = np.fft.irfft(
                np.fft.rfft(a_raw.field.values[k, 0]) * multiplier, n=sgrid.m)
            assert np.max(np.abs(smoothed - a_mol.field.values[k, 0])) < 1e-12

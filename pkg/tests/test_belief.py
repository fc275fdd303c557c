import math

import numpy as np
import pytest

from hiertopo.belief import (
    BeliefState,
    add_pose,
    add_pose_array,
    legacy_add_pose_array,
    legacy_predict_array,
    make_diffusion_kernel,
    measurement_update,
    measurement_update_array,
    predict,
    predict_array,
)
from hiertopo.errors import DomainError


class TestDiffusionKernel:
    def test_nine_taps_sum_to_mass(self):
        kernel = make_diffusion_kernel(radius=4, mass=0.9, sigma=2.0)
        assert kernel.taps.size == 9
        assert kernel.taps.sum() == pytest.approx(0.9, abs=1e-12)

    def test_symmetry(self):
        kernel = make_diffusion_kernel()
        assert kernel.taps[0] == pytest.approx(kernel.taps[8], abs=0)
        np.testing.assert_allclose(kernel.taps, kernel.taps[::-1], atol=0)

    def test_values_match_gaussian_oracle(self):
        radius, mass, sigma = 4, 0.9, 2.0
        kernel = make_diffusion_kernel(radius, mass, sigma)
        raw = [math.exp(-((i - radius) ** 2) / (2 * sigma**2)) for i in range(9)]
        scale = mass / sum(raw)
        for i in range(9):
            assert kernel.taps[i] == pytest.approx(raw[i] * scale, abs=1e-12)

    def test_invalid_params(self):
        with pytest.raises(DomainError):
            make_diffusion_kernel(radius=0)
        with pytest.raises(DomainError):
            make_diffusion_kernel(mass=0.0)
        with pytest.raises(DomainError):
            make_diffusion_kernel(sigma=-1.0)


class TestPredict:
    def test_single_pose_fixed_point(self):
        state = BeliefState(np.array([1.0]))
        out = predict(state, make_diffusion_kernel())
        np.testing.assert_allclose(out.beliefs, [1.0], atol=1e-12)

    def test_uniform_is_fixed_point(self):
        n = 37
        state = BeliefState(np.full(n, 1.0 / n))
        out = predict(state, make_diffusion_kernel())
        np.testing.assert_allclose(out.beliefs, 1.0 / n, atol=1e-12)

    def test_mass_conserved(self):
        rng = np.random.default_rng(4)
        b = rng.random(50)
        b /= b.sum()
        out = predict_array(b, make_diffusion_kernel())
        assert out.sum() == pytest.approx(1.0, abs=1e-9)

    def test_delta_flattens_completely_by_200_steps(self):
        n = 100
        kernel = make_diffusion_kernel()
        b = np.zeros(n)
        b[0] = 1.0
        for _ in range(200):
            b = predict_array(b, kernel)
            assert b.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.max(np.abs(b - 1.0 / n)) < 1e-3

    def test_translation_equivariance_away_from_boundary(self):
        n = 60
        kernel = make_diffusion_kernel()
        for i in (10, 25, 40):
            a = np.zeros(n)
            a[i] = 1.0
            c = np.zeros(n)
            c[i + 1] = 1.0
            out_a = predict_array(a, kernel)
            out_c = predict_array(c, kernel)
            np.testing.assert_allclose(out_a[:-1], out_c[1:], atol=1e-12)

    def test_requires_standard_mass(self):
        with pytest.raises(DomainError):
            predict(BeliefState(np.array([1.0])), make_diffusion_kernel(mass=0.5))

    def test_empty_state_rejected(self):
        with pytest.raises(DomainError):
            predict_array(np.zeros(0), make_diffusion_kernel())


class TestAddPose:
    def test_first_append(self):
        out = add_pose(BeliefState(np.array([1.0])))
        np.testing.assert_allclose(out.beliefs, [0.5, 0.5])

    def test_second_append(self):
        out = add_pose(BeliefState(np.array([0.5, 0.5])))
        np.testing.assert_allclose(out.beliefs, [1 / 3, 1 / 3, 1 / 3])

    def test_empty_initializes(self):
        np.testing.assert_allclose(add_pose_array(np.zeros(0)), [1.0])

    def test_always_renormalized(self):
        rng = np.random.default_rng(8)
        b = rng.random(17)
        b /= b.sum()
        out = add_pose_array(b)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)
        assert out.size == 18


class TestMeasurementUpdate:
    def test_uniform_likelihood_is_identity(self):
        rng = np.random.default_rng(1)
        b = rng.random(9)
        b /= b.sum()
        out = measurement_update_array(b, np.full(9, 0.37))
        np.testing.assert_allclose(out, b, atol=1e-12)

    def test_delta_likelihood(self):
        b = np.full(5, 0.2)
        like = np.zeros(5)
        like[3] = 1.0
        out = measurement_update_array(b, like)
        np.testing.assert_allclose(out, like)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(6)
        b = rng.random(30)
        b /= b.sum()
        like = rng.random(30)
        expected = np.array([b[i] * like[i] for i in range(30)])
        expected /= expected.sum()
        out = measurement_update_array(b, like)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_all_zero_likelihood_rejected(self):
        with pytest.raises(DomainError):
            measurement_update(BeliefState(np.array([0.5, 0.5])), [0.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            measurement_update_array(np.array([1.0]), np.array([1.0, 1.0]))


class TestNoEarlyPoseAccumulation:
    def test_any_start_flattens_with_fixed_n(self):
        rng = np.random.default_rng(123)
        kernel = make_diffusion_kernel()
        for _ in range(3):
            b = rng.random(80)
            b /= b.sum()
            for _ in range(200):
                b = predict_array(b, kernel)
            assert b.max() - b.min() < 1e-3


class TestLegacyEvolution:
    def test_zero_init_pose(self):
        out = legacy_add_pose_array(np.array([0.6, 0.4]))
        np.testing.assert_allclose(out, [0.6, 0.4, 0.0])

    def test_legacy_keeps_early_mass(self):
        """The uncorrected model concentrates belief around early poses
        while the fixed model spreads it toward uniform."""
        kernel = make_diffusion_kernel()
        legacy = np.array([1.0])
        fixed = np.array([1.0])
        for _ in range(30):
            legacy = legacy_add_pose_array(legacy_predict_array(legacy, kernel))
            fixed = add_pose_array(predict_array(fixed, kernel))
        early_legacy = legacy[:10].sum()
        early_fixed = fixed[:10].sum()
        assert early_legacy >= 2.0 * early_fixed

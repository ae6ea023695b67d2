"""
Unit tests for the diffusion algebra.
"""

import math

import pytest
import torch

from duetdiff.models.schedule import NoiseSchedule
from duetdiff.services.diffusion_service import DiffusionService
from duetdiff.utils.exceptions import ConfigurationError, InputError, ShapeMismatchError


class TestMakeSchedule:
    """Tests for the linear beta schedule."""

    def test_zero_noise_schedule(self):
        """Test T=1 with zero betas gives unit alphas."""
        schedule = DiffusionService.make_schedule(1, 0.0, 0.0)

        assert schedule.alphas.tolist() == [1.0]
        assert schedule.alpha_bars.tolist() == [1.0]

    def test_two_step_products(self):
        """Test alpha_bars are cumulative products of 1 - beta."""
        schedule = DiffusionService.make_schedule(2, 0.1, 0.2)

        assert schedule.alpha_bars.tolist() == pytest.approx([0.9, 0.72])

    def test_alpha_bars_non_increasing(self):
        """Test alpha_bars never increase."""
        schedule = DiffusionService.make_schedule(1000, 1e-4, 2e-2)

        diffs = schedule.alpha_bars[1:] - schedule.alpha_bars[:-1]
        assert bool((diffs <= 0).all())
        assert bool((schedule.sigmas == 0).all())

    def test_schedule_is_float64(self):
        """Test coefficients are kept in double precision."""
        schedule = DiffusionService.make_schedule(10, 1e-4, 2e-2)

        assert schedule.alphas.dtype == torch.float64

    @pytest.mark.parametrize("T,start,end", [(0, 1e-4, 2e-2), (10, 0.2, 0.1), (10, -0.1, 0.1), (10, 0.1, 1.0)])
    def test_invalid_range(self, T, start, end):
        """Test invalid step counts and beta ranges are rejected."""
        with pytest.raises(ConfigurationError):
            DiffusionService.make_schedule(T, start, end)


class TestForwardDiffuse:
    """Tests for forward noising."""

    def test_noiseless_limit(self):
        """Test alpha_bar = 1 returns z0."""
        schedule = NoiseSchedule.from_alphas([1.0])
        z0 = torch.tensor([0.3, -1.2], dtype=torch.float64)

        out = DiffusionService.forward_diffuse(z0, 1, torch.ones(2, dtype=torch.float64), schedule)

        assert torch.equal(out, z0)

    def test_pure_noise_limit(self):
        """Test a vanishing alpha_bar returns the noise."""
        schedule = NoiseSchedule.from_alphas([1e-12])
        eps = torch.tensor([0.4, -0.7], dtype=torch.float64)

        out = DiffusionService.forward_diffuse(torch.tensor([5.0, 5.0], dtype=torch.float64), 1, eps, schedule)

        assert torch.allclose(out, eps, atol=1e-5)

    def test_scalar_example(self):
        """Test 0.5 * 2 + sqrt(0.75) * 0.4."""
        schedule = NoiseSchedule.from_alphas([0.25])

        out = DiffusionService.forward_diffuse(
            torch.tensor([2.0], dtype=torch.float64), 1, torch.tensor([0.4], dtype=torch.float64), schedule
        )

        assert float(out) == pytest.approx(1.34641, abs=1e-5)

    def test_batched_timesteps(self):
        """Test per-item timesteps broadcast over the latent axes."""
        schedule = DiffusionService.make_schedule(10, 1e-4, 2e-2)
        z0 = torch.ones(2, 3, 4, 4, dtype=torch.float64)
        eps = torch.zeros_like(z0)

        out = DiffusionService.forward_diffuse(z0, torch.tensor([1, 10]), eps, schedule)

        assert float(out[0, 0, 0, 0]) == pytest.approx(math.sqrt(schedule.alpha_bar(1)))
        assert float(out[1, 0, 0, 0]) == pytest.approx(math.sqrt(schedule.alpha_bar(10)))

    def test_shape_mismatch(self):
        """Test mismatched shapes raise an input error."""
        schedule = NoiseSchedule.from_alphas([0.5])

        with pytest.raises(ShapeMismatchError):
            DiffusionService.forward_diffuse(torch.zeros(2), 1, torch.zeros(3), schedule)

    def test_timestep_out_of_range(self):
        """Test t outside [1, T] raises an input error."""
        schedule = NoiseSchedule.from_alphas([0.5, 0.5])

        with pytest.raises(InputError):
            DiffusionService.forward_diffuse(torch.zeros(2), 3, torch.zeros(2), schedule)


class TestGuidance:
    """Tests for classifier-free guidance."""

    def setup_method(self):
        self.uncond = torch.tensor([0.25, -1.5, 2.0])
        self.cond = torch.tensor([0.75, 0.5, -2.0])

    def test_w_one_gives_conditional(self):
        """Test w=1 returns the conditional prediction."""
        assert torch.equal(DiffusionService.cfg_combine(self.uncond, self.cond, 1.0), self.cond)

    def test_w_zero_gives_unconditional(self):
        """Test w=0 returns the unconditional prediction."""
        assert torch.equal(DiffusionService.cfg_combine(self.uncond, self.cond, 0.0), self.uncond)

    def test_equal_predictions(self):
        """Test equal inputs are returned for every w."""
        for w in (0.0, 1.0, 7.5, 100.0):
            assert torch.equal(DiffusionService.cfg_combine(self.cond, self.cond, w), self.cond)

    def test_affine_in_w(self):
        """Test result(w1) + result(w2) - result(0) = result(w1 + w2)."""
        f = lambda w: DiffusionService.cfg_combine(self.uncond, self.cond, w)  # noqa: E731

        assert torch.equal(f(0.5) + f(2.0) - f(0.0), f(2.5))


class TestDenoiseStep:
    """Tests for the reverse update."""

    def test_no_op_step(self):
        """Test alpha = 1 with sigma = 0 leaves the latent unchanged."""
        schedule = NoiseSchedule.from_alphas([1.0])
        z = torch.tensor([0.3, -0.4], dtype=torch.float64)

        out = DiffusionService.denoise_step(z, torch.tensor([9.0, 9.0], dtype=torch.float64), 1, schedule)

        assert torch.equal(out, z)

    def test_single_step_round_trip(self):
        """Test diffusing then stepping with the true noise recovers z0."""
        schedule = NoiseSchedule.from_alphas([0.37])
        generator = torch.Generator().manual_seed(3)
        z0 = torch.randn(3, 8, 8, generator=generator, dtype=torch.float64)
        eps = torch.randn(3, 8, 8, generator=generator, dtype=torch.float64)

        z_t = DiffusionService.forward_diffuse(z0, 1, eps, schedule)
        out = DiffusionService.denoise_step(z_t, eps, 1, schedule, torch.zeros_like(eps))

        assert torch.allclose(out, z0, atol=1e-6)

    def test_scalar_example(self):
        """Test alpha=0.99, alpha_bar=0.9, z=1, eps=0.5."""
        schedule = NoiseSchedule.from_alphas([0.9 / 0.99, 0.99])
        expected = (1.0 - 0.01 / math.sqrt(0.1) * 0.5) / math.sqrt(0.99)

        out = DiffusionService.denoise_step(
            torch.tensor([1.0], dtype=torch.float64), torch.tensor([0.5], dtype=torch.float64), 2, schedule
        )

        assert float(out) == pytest.approx(expected, abs=1e-9)
        assert float(out) == pytest.approx(0.989147, abs=1e-6)

    def test_timestep_out_of_range(self):
        """Test t = 0 raises an input error."""
        schedule = NoiseSchedule.from_alphas([0.5])

        with pytest.raises(InputError):
            DiffusionService.denoise_step(torch.zeros(2), torch.zeros(2), 0, schedule)


class TestDdimStep:
    """Tests for the implicit reverse update."""

    def setup_method(self):
        generator = torch.Generator().manual_seed(5)
        self.z0 = torch.rand(3, 4, 4, generator=generator, dtype=torch.float64) * 2 - 1
        self.eps = torch.randn(3, 4, 4, generator=generator, dtype=torch.float64)

    def test_lands_on_previous_timestep(self):
        """Test stepping with the true noise gives the same noise at t - 1."""
        schedule = DiffusionService.make_schedule(10, 1e-2, 2e-1)
        z_t = DiffusionService.forward_diffuse(self.z0, 5, self.eps, schedule)

        out = DiffusionService.ddim_step(z_t, self.eps, 5, schedule)

        assert torch.allclose(out, DiffusionService.forward_diffuse(self.z0, 4, self.eps, schedule), atol=1e-12)

    def test_last_step_returns_clean_latent(self):
        """Test the step from t = 1 returns the predicted clean latent."""
        schedule = NoiseSchedule.from_alphas([0.37])
        z_t = DiffusionService.forward_diffuse(self.z0, 1, self.eps, schedule)

        out = DiffusionService.ddim_step(z_t, self.eps, 1, schedule)

        assert torch.allclose(out, self.z0, atol=1e-6)

    def test_clean_latent_clipped(self):
        """Test the predicted clean latent is clamped to the codec range only when asked."""
        schedule = NoiseSchedule.from_alphas([0.5])
        z_t = torch.full((2,), 3.0, dtype=torch.float64)
        eps = torch.zeros(2, dtype=torch.float64)

        assert torch.equal(DiffusionService.ddim_step(z_t, eps, 1, schedule), torch.ones(2, dtype=torch.float64))
        assert torch.allclose(DiffusionService.ddim_step(z_t, eps, 1, schedule, clip=False), z_t / math.sqrt(0.5))

    def test_reverse_step_dispatch(self):
        """Test the named rules match their functions and unknown names are rejected."""
        schedule = DiffusionService.make_schedule(10, 1e-2, 2e-1)
        z_t = DiffusionService.forward_diffuse(self.z0, 7, self.eps, schedule)

        mean = DiffusionService.reverse_step(z_t, self.eps, 7, schedule, "mean")
        ddim = DiffusionService.reverse_step(z_t, self.eps, 7, schedule, "ddim")

        assert torch.equal(mean, DiffusionService.denoise_step(z_t, self.eps, 7, schedule))
        assert torch.equal(ddim, DiffusionService.ddim_step(z_t, self.eps, 7, schedule))
        with pytest.raises(ConfigurationError):
            DiffusionService.reverse_step(z_t, self.eps, 7, schedule, "ancestral")

    def test_mean_rule_shrinks_noise(self):
        """Test the posterior-mean rule leaves less noise than timestep t - 1 carries."""
        schedule = DiffusionService.make_schedule(1000, 1e-4, 2e-2).respace([1000, 980])
        z0 = torch.zeros(1, 8, 8, dtype=torch.float64)
        eps = torch.randn(1, 8, 8, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        z_t = DiffusionService.forward_diffuse(z0, 2, eps, schedule)

        mean = DiffusionService.denoise_step(z_t, eps, 2, schedule)
        ddim = DiffusionService.ddim_step(z_t, eps, 2, schedule)

        expected = math.sqrt(1.0 - schedule.alpha_bar(1))
        assert float(ddim.std() / eps.std()) == pytest.approx(expected, rel=1e-9)
        assert float(mean.std() / eps.std()) < 0.9 * expected


class TestNoiseLoss:
    """Tests for the noise-prediction loss."""

    def test_equal_arguments(self):
        """Test identical tensors give zero."""
        eps = torch.randn(4, 3, generator=torch.Generator().manual_seed(0))

        assert float(DiffusionService.noise_loss(eps, eps.clone())) == 0.0

    def test_mean_of_squares(self):
        """Test [1, 1] against [0, 0] gives 1."""
        assert float(DiffusionService.noise_loss(torch.tensor([1.0, 1.0]), torch.zeros(2))) == 1.0

    def test_symmetric(self):
        """Test the loss does not depend on argument order."""
        a, b = torch.tensor([0.5, -2.0, 1.0]), torch.tensor([1.5, 0.0, -1.0])

        assert float(DiffusionService.noise_loss(a, b)) == float(DiffusionService.noise_loss(b, a))


class TestTimesteps:
    """Tests for sampling timesteps and stage bookkeeping."""

    def test_sequence_endpoints(self):
        """Test 50 evenly spaced steps run from T down to 1."""
        seq = DiffusionService.timestep_sequence(1000, 50)

        assert len(seq) == 50
        assert seq[0] == 1000 and seq[-1] == 1
        assert all(a > b for a, b in zip(seq, seq[1:]))

    def test_more_steps_than_timesteps(self):
        """Test duplicate timesteps are dropped."""
        assert DiffusionService.timestep_sequence(3, 10) == [3, 2, 1]

    def test_single_step(self):
        """Test one step samples at T only."""
        assert DiffusionService.timestep_sequence(100, 1) == [100]

    def test_stage_iterations(self):
        """Test the early stage covers the leading fraction of iterations, rounded up."""
        assert DiffusionService.stage_a_iterations(50, 0.2) == 10
        assert DiffusionService.stage_a_iterations(50, 0.0) == 0
        assert DiffusionService.stage_a_iterations(50, 1.0) == 50
        assert DiffusionService.stage_a_iterations(7, 0.5) == 4

    def test_respace_keeps_alpha_bars(self):
        """Test a respaced schedule keeps the alpha_bar of each kept timestep."""
        schedule = DiffusionService.make_schedule(100, 1e-4, 2e-2)

        respaced = schedule.respace([100, 50, 1])

        assert respaced.T == 3
        assert respaced.alpha_bar(1) == schedule.alpha_bar(1)
        assert respaced.alpha_bar(3) == schedule.alpha_bar(100)
        assert torch.allclose(torch.cumprod(respaced.alphas, 0), respaced.alpha_bars)

"""
Unit tests for adapter training and the gradient oracle.
"""

import math

import pytest
import torch

from duetdiff.models.settings import ModelConfig, TrainConfig
from duetdiff.services.encoder_service import EncoderService
from duetdiff.services.training_service import TrainingService, build_model, parameter_group
from duetdiff.utils.exceptions import InputError


@pytest.fixture
def items(corpus, tiny_config):
    return TrainingService.prepare_items([(s.image, s.record) for s in corpus[:4]], tiny_config)


def snapshot(model, adapter):
    frozen, trainable = TrainingService.partition_params(model)
    names = set(trainable if adapter else frozen)
    return {name: p.detach().clone() for name, p in model.named_parameters() if name in names}


def run_steps(model, items, schedule, steps, lr, cond_drop_prob=0.0, weight_decay=0.0):
    config = TrainConfig(steps=steps, batch_size=2, lr=lr, weight_decay=weight_decay, cond_drop_prob=cond_drop_prob)
    params = TrainingService.set_trainable(model, "adapter")
    optimizer = TrainingService.make_optimizer(params, lr, config)
    generator = torch.Generator().manual_seed(0)
    return [
        TrainingService.train_step(model, optimizer, items[:2], schedule, cond_drop_prob, generator, step=s)
        for s in range(steps)
    ]


class TestPrepareItem:
    """Tests for turning rendered records into training items."""

    def test_latent_and_inputs(self, items, tiny_config):
        """Test the latent has model resolution and subjects follow the caption."""
        item = items[0]

        assert item.z0.shape == tiny_config.latent_shape
        assert float(item.z0.min()) >= -1.0 and float(item.z0.max()) <= 1.0
        assert (item.encoded.m1, item.encoded.m2) == (1, 4)

    def test_references_are_the_subjects(self, corpus, items, tiny_config):
        """Test faces cut from the render encode like the subjects' identities."""
        identities = corpus[0].identities

        assert torch.equal(items[0].encoded.id1, EncoderService.encode_face(identities[0], tiny_config.d_id))
        assert torch.equal(items[0].encoded.id2, EncoderService.encode_face(identities[1], tiny_config.d_id))

    def test_single_person_rejected(self, corpus, tiny_config):
        """Test records without two persons cannot be trained on."""
        record = corpus[0].record.with_changes(persons=corpus[0].record.persons[:1])

        with pytest.raises(InputError):
            TrainingService.prepare_item(corpus[0].image, record, tiny_config)


class TestParameterSplit:
    """Tests for the frozen/trainable split."""

    def test_partition_covers_everything(self, model):
        """Test every parameter is either frozen or trainable."""
        frozen, trainable = TrainingService.partition_params(model)

        assert sorted(frozen + trainable) == sorted(name for name, _ in model.named_parameters())
        assert not set(frozen) & set(trainable)

    def test_trainable_set(self, model):
        """Test the trainable set is the adapters."""
        _, trainable = TrainingService.partition_params(model)

        assert "sites.0.to_k_i1.weight" in trainable
        assert "projector_p2.id_fc1.weight" in trainable
        assert "sites.0.to_k.weight" not in trainable
        assert "conv_in.weight" not in trainable

    def test_set_trainable(self, model):
        """Test only the stage's parameters require gradients."""
        params = TrainingService.set_trainable(model, "adapter")
        _, trainable = TrainingService.partition_params(model)

        assert len(params) == len(trainable)
        assert all(p.requires_grad == (name in trainable) for name, p in model.named_parameters())

    def test_parameter_groups(self):
        """Test parameters group by adapter module."""
        assert parameter_group("sites.1.to_v_i2.weight") == "sites.1.to_v_i2"
        assert parameter_group("projector_p1.ff.fc1.bias") == "projector_p1"


class TestTrainStep:
    """Tests for single optimization steps."""

    def test_zero_learning_rate(self, tiny_config, items, schedule):
        """Test lr = 0 leaves every parameter unchanged."""
        model = build_model(tiny_config, seed=0)
        before = {name: p.detach().clone() for name, p in model.named_parameters()}

        run_steps(model, items, schedule, steps=3, lr=0.0)

        for name, p in model.named_parameters():
            assert torch.equal(p, before[name]), name

    def test_base_frozen(self, tiny_config, items, schedule):
        """Test adapter steps change adapters but never the backbone."""
        model = build_model(tiny_config, seed=0)
        base, adapters = snapshot(model, adapter=False), snapshot(model, adapter=True)

        run_steps(model, items, schedule, steps=3, lr=1e-2)

        params = dict(model.named_parameters())
        assert all(torch.equal(params[name], value) for name, value in base.items())
        assert any(not torch.equal(params[name], value) for name, value in adapters.items())

    @pytest.mark.slow
    def test_base_frozen_long_run(self, tiny_config, items, schedule):
        """Test a hundred adapter steps leave the backbone bitwise unchanged."""
        model = build_model(tiny_config, seed=0)
        base, adapters = snapshot(model, adapter=False), snapshot(model, adapter=True)

        run_steps(model, items, schedule, steps=100, lr=1e-3, weight_decay=0.01)

        params = dict(model.named_parameters())
        assert all(torch.equal(params[name], value) for name, value in base.items())
        assert any(not torch.equal(params[name], value) for name, value in adapters.items())

    def test_full_dropout_trains_nothing(self, tiny_config, items, schedule):
        """Test dropping every condition gives the adapters no gradient."""
        model = build_model(tiny_config, seed=0)
        adapters = snapshot(model, adapter=True)

        losses = run_steps(model, items, schedule, steps=2, lr=1e-2, cond_drop_prob=1.0)

        params = dict(model.named_parameters())
        assert all(torch.equal(params[name], value) for name, value in adapters.items())
        assert all(math.isfinite(loss) for loss in losses)

    def test_empty_batch(self, model, schedule):
        """Test an empty batch is rejected."""
        optimizer = torch.optim.SGD(TrainingService.set_trainable(model, "adapter"), lr=0.1)

        with pytest.raises(InputError):
            TrainingService.train_step(model, optimizer, [], schedule, 0.0, torch.Generator())


class TestTrain:
    """Tests for full training runs."""

    def test_zero_steps(self, items, tiny_config, schedule):
        """Test a run without steps returns the initial model."""
        result = TrainingService.train(items, tiny_config, TrainConfig(steps=0), schedule)

        assert result.losses == []
        assert result.final_loss is None
        assert not result.model.training

    def test_losses_recorded(self, items, tiny_config, schedule):
        """Test one finite loss per step."""
        result = TrainingService.train(items, tiny_config, TrainConfig(steps=4, batch_size=2, lr=1e-3), schedule)

        assert [step for step, _ in result.losses] == [1, 2, 3, 4]
        assert all(math.isfinite(loss) for _, loss in result.losses)

    def test_deterministic(self, items, tiny_config, schedule):
        """Test equal seeds give equal losses."""
        config = TrainConfig(steps=3, batch_size=2, lr=1e-3, seed=5)

        first = TrainingService.train(items, tiny_config, config, schedule)
        second = TrainingService.train(items, tiny_config, config, schedule)

        assert first.losses == second.losses

    def test_backbone_stage(self, items, tiny_config, schedule):
        """Test the backbone stage runs first and re-seeds the image adapters."""
        config = TrainConfig(steps=0, base_steps=2, batch_size=2, base_lr=1e-3)

        result = TrainingService.train(items, tiny_config, config, schedule)

        assert len(result.base_losses) == 2
        for site in result.model.sites:
            assert torch.equal(site.to_k_i1.weight, site.to_k.weight)

    @pytest.mark.slow
    def test_single_item_overfits(self, items, tiny_config, schedule):
        """Test 500 steps on one item at least halve the loss."""
        config = TrainConfig(steps=0, base_steps=500, batch_size=8, base_lr=1e-3, cond_drop_prob=0.0, log_every=0)

        result = TrainingService.train(items[:1], tiny_config, config, schedule)

        losses = [loss for _, loss in result.base_losses]
        assert sum(losses[-50:]) / 50 <= 0.5 * sum(losses[:20]) / 20

    def test_no_items(self, tiny_config, schedule):
        """Test training needs data."""
        with pytest.raises(InputError):
            TrainingService.train([], tiny_config, TrainConfig(steps=1), schedule)


class TestFiniteDifferences:
    """Tests for the finite-difference oracle."""

    def test_quadratic(self):
        """Test the gradient of sum(p^2) is 2p."""
        p = torch.tensor([0.5, -1.5, 2.0], dtype=torch.float64)

        (grad,) = TrainingService.finite_diff_grad(lambda: float((p**2).sum()), [p], h=1e-3)

        assert torch.allclose(grad, 2 * p, atol=1e-8)

    def test_linear_with_indices(self):
        """Test selected coordinates of a linear function."""
        p = torch.zeros(2, 3, dtype=torch.float64)
        w = torch.arange(6, dtype=torch.float64).reshape(2, 3)

        (grad,) = TrainingService.finite_diff_grad(lambda: float((w * p).sum()), [p], indices=[torch.tensor([1, 5])])

        assert torch.allclose(grad, torch.tensor([1.0, 5.0], dtype=torch.float64), atol=1e-8)

    def test_parameters_restored(self):
        """Test perturbed values are put back."""
        p = torch.tensor([0.25, 0.75], dtype=torch.float64)

        TrainingService.finite_diff_grad(lambda: float(p.sum()), [p])

        assert p.tolist() == [0.25, 0.75]

    def test_step_must_be_positive(self):
        """Test h <= 0 is rejected."""
        with pytest.raises(InputError):
            TrainingService.finite_diff_grad(lambda: 0.0, [torch.zeros(1)], h=0.0)


class TestGradientCheck:
    """Tests for the analytic-versus-numeric gradient check."""

    def test_sampled_coordinates_pass(self):
        """Test sampled coordinates of every adapter group agree."""
        report = TrainingService.gradient_check(max_coords=8)

        assert report.passed, [(g.group, g.rel_error) for g in report.groups]
        assert {g.group for g in report.groups} >= {"projector_p1", "projector_p2", "subject_mlp", "sites.0.to_k_i1"}
        assert all(g.coords <= 8 for g in report.groups)

    @pytest.mark.slow
    def test_all_coordinates_pass(self):
        """Test every adapter coordinate of the micro model agrees."""
        report = TrainingService.gradient_check(ModelConfig.micro())

        assert report.passed
        assert report.worst < 1e-3

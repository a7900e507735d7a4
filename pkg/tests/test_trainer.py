"""Optimization loop behavior, determinism and sweep bookkeeping."""

import numpy as np
import pytest

from earlyseq import numcore as nc
from earlyseq.datagen import GeneratorConfig, generate_paired_dataset, split
from earlyseq.trainer import (
    Adam,
    TrainConfig,
    TrainingDiverged,
    build_model,
    cell_seed,
    sweep,
    train,
)


def _tiny_dataset(n=44, seed=2, **overrides):
    cfg = GeneratorConfig(seed=seed, n_samples=n, words_total=3, **overrides)
    data = generate_paired_dataset(cfg)
    return split(data, 0.2, seed=0)


def _tiny_config(**overrides):
    base = dict(objective="cis", mu=1e-2, batch_size=16, learning_rate=3e-3,
                epochs=2, seed=1, d_model=8, n_heads=2, d_k=4, head_hidden=8,
                emb_dim=4)
    base.update(overrides)
    return TrainConfig(**base)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = nc.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        opt = Adam([("p", p)], lr=0.1)
        opt.step()
        np.testing.assert_array_equal(p.values, [1.0, -2.0, 3.0])

    def test_descends_a_quadratic(self):
        p = nc.Tensor(np.array([5.0]), requires_grad=True)
        opt = Adam([("p", p)], lr=0.1)
        for _ in range(200):
            opt.zero_grad()
            nc.backward(nc.tsum(nc.mul(p, p)))
            opt.step()
        assert abs(p.values[0]) < 0.1


class TestTrain:
    def test_zero_learning_rate_changes_nothing(self):
        train_data, val_data = _tiny_dataset()
        config = _tiny_config(learning_rate=0.0, epochs=3)
        model = build_model(train_data, val_data, config)
        before = [p.values.copy() for p in model.parameters()]
        result = train(train_data, val_data, config, model=model)
        for prev, (_, p) in zip(before, model.named_parameters()):
            np.testing.assert_array_equal(prev, p.values)
        assert len(set(round(v, 12) for v in result.epoch_losses)) == 1

    def test_deterministic_given_seed(self):
        train_data, val_data = _tiny_dataset()
        a = train(train_data, val_data, _tiny_config())
        b = train(train_data, val_data, _tiny_config())
        assert a.epoch_losses == b.epoch_losses
        assert [(p.mean_t, p.accuracy) for p in a.points] == \
               [(p.mean_t, p.accuracy) for p in b.points]

    def test_classification_loss_decreases_on_separable_data(self):
        # noiseless task with lambda=0 reduces to supervised per-step CE
        train_data, val_data = _tiny_dataset(n=80, noise=0.0,
                                             generic_words=(0, 0),
                                             specific_words=(2, 3))
        config = _tiny_config(lam=0.0, epochs=5, learning_rate=2e-3,
                              batch_size=64, seed=3)
        result = train(train_data, val_data, config)
        losses = result.epoch_losses
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_one_point_per_epoch(self):
        train_data, val_data = _tiny_dataset()
        result = train(train_data, val_data, _tiny_config(epochs=3))
        assert [p.epoch for p in result.points] == [0, 1, 2]
        assert all(p.mu == 1e-2 for p in result.points)

    def test_nan_loss_aborts_with_location(self):
        train_data, val_data = _tiny_dataset()
        config = _tiny_config()
        model = build_model(train_data, val_data, config)
        model.classifier.w2.values[0, 0] = np.nan
        with pytest.raises(TrainingDiverged, match="epoch 0 batch 0"):
            train(train_data, val_data, config, model=model)

    def test_empty_training_set_rejected(self):
        with pytest.raises(ValueError):
            train([], [], _tiny_config())

    def test_per_objective_default_learning_rates(self):
        assert TrainConfig(objective="cis").lr == 1e-5
        assert TrainConfig(objective="larm").lr == 1e-6
        assert TrainConfig(objective="larm", learning_rate=0.01).lr == 0.01


class TestSweep:
    def test_grid_shape_and_point_count(self):
        train_data, val_data = _tiny_dataset()
        config = _tiny_config(epochs=2)
        cells = sweep(train_data, val_data, config, [1e-2, 1e-1], trials=2)
        assert len(cells) == 4
        assert {(c.mu, c.trial) for c in cells} == {
            (1e-2, 0), (1e-2, 1), (1e-1, 0), (1e-1, 1),
        }
        total_points = sum(len(c.result.points) for c in cells)
        assert total_points == 4 * 2

    def test_single_cell_matches_plain_train(self):
        train_data, val_data = _tiny_dataset()
        config = _tiny_config(epochs=2)
        [cell] = sweep(train_data, val_data, config, [1e-2], trials=1)
        direct = train(train_data, val_data,
                       TrainConfig(**{**config.__dict__, "mu": 1e-2, "trial": 0,
                                      "seed": cell_seed(config.seed, 0, 0)}))
        assert cell.result.epoch_losses == direct.epoch_losses

    def test_parallel_equals_serial(self):
        train_data, val_data = _tiny_dataset(n=24)
        config = _tiny_config(epochs=1)
        serial = sweep(train_data, val_data, config, [1e-2, 1e-1], trials=1, workers=1)
        parallel = sweep(train_data, val_data, config, [1e-2, 1e-1], trials=1, workers=2)
        for a, b in zip(serial, parallel):
            assert (a.mu, a.trial) == (b.mu, b.trial)
            assert a.result.epoch_losses == b.result.epoch_losses
            for (na, pa), (nb, pb) in zip(a.result.model.named_parameters(),
                                          b.result.model.named_parameters()):
                assert na == nb
                np.testing.assert_array_equal(pa.values, pb.values)

    def test_diverged_cell_does_not_abort_others(self, monkeypatch):
        train_data, val_data = _tiny_dataset(n=24)
        config = _tiny_config(epochs=1)

        import earlyseq.trainer as trainer_module
        real_train = trainer_module.train

        def flaky(train_data, val_data, config, model=None):
            if config.mu == 1e-1:
                raise TrainingDiverged("non-finite loss at epoch 0 batch 0")
            return real_train(train_data, val_data, config, model)

        monkeypatch.setattr(trainer_module, "train", flaky)
        cells = trainer_module.sweep(train_data, val_data, config,
                                     [1e-2, 1e-1], trials=1)
        assert cells[0].error is None and cells[0].result is not None
        assert cells[1].error is not None and cells[1].result is None

    def test_empty_mu_list_rejected(self):
        with pytest.raises(ValueError):
            sweep([], [], _tiny_config(), [], trials=1)

    def test_cell_seeds_stable(self):
        assert cell_seed(7, 0, 0) == cell_seed(7, 0, 0)
        assert cell_seed(7, 0, 0) != cell_seed(7, 1, 0)
        assert cell_seed(7, 0, 0) != cell_seed(7, 0, 1)

"""Rollout collection, the PPO objective, and the training loop."""

import numpy as np
import pytest

from triagerl.env import TriageEnv
from triagerl.errors import EmptySplit, NonFiniteLoss
from triagerl.fuzz import SimOracleConfig, SimulatedBackend
from triagerl.policy import (
    draw_dropout_masks,
    flatten_params,
    init_params,
    unflatten_params,
)
from triagerl.synthetic import separable_task
from triagerl.trainer import (
    Adam,
    TrainConfig,
    TrajectoryBatch,
    _flat_grads,
    clipped_surrogate,
    collect_rollouts,
    discounted_returns,
    load_checkpoint,
    ppo_loss_and_grads,
    ppo_update,
    save_checkpoint,
    train,
)
from triagerl.evaluate import evaluate_checkpoint
from triagerl.warnings import Label, Split

from test_warnings import make_record

UNINFORMATIVE_ORACLE = SimOracleConfig(
    p_crash_given_tp=0.3, p_crash_given_fp=0.3, p_inconclusive=0.25, seed=3
)


def tiny_episodes(n=6, feature_dim=4, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = Label.TRUE_POSITIVE if i % 2 == 0 else Label.FALSE_POSITIVE
        out.append((make_record(i, label=label), rng.normal(size=feature_dim)))
    return out


def toy_batch(feature_dim=5, n=12, seed=0):
    rng = np.random.default_rng(seed)
    states = np.hstack([rng.normal(size=(n, feature_dim)), np.zeros((n, 6))])
    states[:, feature_dim] = 1.0
    states[2:4, feature_dim] = 0.0
    states[2:4, feature_dim + 1] = 1.0  # two post-fuzz states
    return TrajectoryBatch(
        states=states,
        actions=rng.integers(0, 2, size=n),
        behavior_logp=np.log(rng.uniform(0.2, 0.8, size=n)),
        rewards=rng.normal(size=n),
        values=rng.normal(size=n),
        episode_ids=np.arange(n),
        terminal=np.ones(n, dtype=bool),
        returns=rng.normal(size=n) * 10,
        advantages=rng.normal(size=n),
    )


class TestCollectRollouts:
    def setup_method(self):
        self.env = TriageEnv(feature_dim=4)
        self.backend = SimulatedBackend(SimOracleConfig(seed=0))
        self.params = init_params(self.env.state_dim, hidden=(8, 6), seed=1)

    def test_returns_are_suffix_sums_within_episodes(self):
        batch = collect_rollouts(
            self.params, tiny_episodes(), self.env, self.backend, None,
            np.random.default_rng(0), gamma=1.0,
        )
        for eid in np.unique(batch.episode_ids):
            rewards = batch.rewards[batch.episode_ids == eid]
            returns = batch.returns[batch.episode_ids == eid]
            assert returns.tolist() == pytest.approx(discounted_returns(list(rewards), 1.0))
        assert bool(batch.terminal[-1])

    def test_fuzz_episode_return_example(self):
        assert discounted_returns([-5.0, 25.0], 1.0) == [20.0, 25.0]

    def test_single_step_advantage_is_return_minus_value(self):
        batch = collect_rollouts(
            self.params, tiny_episodes(), self.env, self.backend, None,
            np.random.default_rng(3), gamma=1.0,
        )
        raw = batch.returns - batch.values
        normalized = (raw - raw.mean()) / (raw.std() + 1e-8)
        assert batch.advantages.tolist() == pytest.approx(normalized.tolist())
        assert abs(batch.advantages.mean()) < 1e-9
        assert abs(batch.advantages.std() - 1.0) < 1e-6

    def test_deterministic_for_fixed_seed(self):
        a = collect_rollouts(self.params, tiny_episodes(), self.env, self.backend,
                             None, np.random.default_rng(7), 1.0)
        b = collect_rollouts(self.params, tiny_episodes(), self.env, self.backend,
                             None, np.random.default_rng(7), 1.0)
        assert a.states.tobytes() == b.states.tobytes()
        assert a.actions.tolist() == b.actions.tolist()
        assert a.rewards.tolist() == b.rewards.tolist()

    def test_sampled_batch_size(self):
        batch = collect_rollouts(self.params, tiny_episodes(), self.env, self.backend,
                                 10, np.random.default_rng(0), 1.0)
        assert len(np.unique(batch.episode_ids)) == 10

    def test_empty_episodes_rejected(self):
        with pytest.raises(EmptySplit):
            collect_rollouts(self.params, [], self.env, self.backend, None,
                             np.random.default_rng(0), 1.0)


class TestPPOObjective:
    def test_clip_formula_by_hand(self):
        # rho=2, A=1, eps=0.2: the clipped branch caps the ratio at 1.2.
        assert clipped_surrogate(np.array([2.0]), np.array([1.0]), 0.2).tolist() == [1.2]

    def test_ratio_one_equals_unclipped(self):
        rho = np.ones(5)
        adv = np.array([1.0, -2.0, 0.5, 3.0, -0.1])
        assert clipped_surrogate(rho, adv, 0.2).tolist() == (rho * adv).tolist()

    def test_huge_epsilon_never_clips(self):
        rng = np.random.default_rng(0)
        rho = rng.uniform(0.05, 20.0, size=200)
        adv = rng.normal(size=200)
        assert np.abs(clipped_surrogate(rho, adv, 1e9) - rho * adv).max() < 1e-9

    def test_same_params_give_unit_ratio_objective(self):
        env = TriageEnv(feature_dim=4)
        backend = SimulatedBackend(SimOracleConfig(seed=0))
        params = init_params(env.state_dim, hidden=(8, 6), dropout_rate=0.0, seed=1)
        batch = collect_rollouts(params, tiny_episodes(), env, backend, None,
                                 np.random.default_rng(0), 1.0)
        config = TrainConfig(seed=0, dropout_rate=0.0)
        _, _, parts = ppo_loss_and_grads(params, batch, config, feature_dim=4)
        assert parts["policy_loss"] == pytest.approx(-batch.advantages.mean(), abs=1e-9)

    def test_gradient_check_against_central_differences(self):
        # Toy network: 5 features (11-dim state), hidden (4, 3).
        feature_dim = 5
        state_dim = feature_dim + 6
        params = init_params(state_dim, hidden=(4, 3), dropout_rate=0.0, seed=1)
        batch = toy_batch(feature_dim)
        config = TrainConfig(seed=0, dropout_rate=0.0)
        for masks in (None, draw_dropout_masks(np.random.default_rng(5), (4, 3), 0.3, n=len(batch))):
            _, grads, _ = ppo_loss_and_grads(params, batch, config, feature_dim, masks)
            analytic = _flat_grads(params, grads)
            flat = flatten_params(params)
            eps = 1e-6
            fd = np.zeros_like(flat)
            for i in range(len(flat)):
                up, dn = flat.copy(), flat.copy()
                up[i] += eps
                dn[i] -= eps
                lu, _, _ = ppo_loss_and_grads(
                    unflatten_params(up, state_dim, (4, 3), 0.0, 1), batch, config, feature_dim, masks)
                ld, _, _ = ppo_loss_and_grads(
                    unflatten_params(dn, state_dim, (4, 3), 0.0, 1), batch, config, feature_dim, masks)
                fd[i] = (lu - ld) / (2 * eps)
            significant = np.abs(fd) > 1e-7
            rel = np.abs(analytic - fd)[significant] / np.abs(fd)[significant]
            assert rel.max() < 1e-4

    def test_loss_decreases_on_pinned_batch(self):
        feature_dim = 5
        params = init_params(feature_dim + 6, hidden=(16, 8), dropout_rate=0.0, seed=2)
        batch = toy_batch(feature_dim, n=32, seed=4)
        config = TrainConfig(seed=0, learning_rate=1e-3, minibatch_size=32,
                             ppo_inner_epochs=1, dropout_rate=0.0)
        before, _, _ = ppo_loss_and_grads(params, batch, config, feature_dim)
        updated, _ = ppo_update(params, batch, config, np.random.default_rng(0), feature_dim)
        after, _, _ = ppo_loss_and_grads(updated, batch, config, feature_dim)
        assert after < before

    def test_non_finite_loss_aborts_with_minibatch(self):
        feature_dim = 5
        params = init_params(feature_dim + 6, hidden=(4, 3), dropout_rate=0.0, seed=2)
        batch = toy_batch(feature_dim)
        batch.advantages[3] = np.inf
        config = TrainConfig(seed=0, dropout_rate=0.0, minibatch_size=64)
        with pytest.raises(NonFiniteLoss, match="minibatch"):
            ppo_update(params, batch, config, np.random.default_rng(0), feature_dim)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        # Bias correction makes the first step lr * sign(grad).
        adam = Adam(lr=0.01)
        flat = np.zeros(4)
        grad = np.array([1.0, -2.0, 0.5, 0.0])
        stepped = adam.step(flat, grad)
        expected = -0.01 * np.sign(grad) * (np.abs(grad) / (np.abs(grad) + 1e-8))
        assert stepped == pytest.approx(expected, abs=1e-6)

    def test_state_accumulates(self):
        adam = Adam(lr=0.1)
        flat = np.zeros(2)
        for _ in range(3):
            flat = adam.step(flat, np.array([1.0, 1.0]))
        assert adam.t == 3
        assert flat[0] < 0


class TestTrainLoop:
    def make_task(self, n=120, seed=7):
        return separable_task(n=n, seed=seed)

    def test_patience_zero_runs_exactly_one_epoch(self):
        dataset, vectors = self.make_task()
        cfg = TrainConfig(epochs_max=10, patience=0, seed=0)
        ckpt = train(dataset, vectors, cfg, SimulatedBackend(UNINFORMATIVE_ORACLE))
        assert len(ckpt.history) == 1

    def test_reproducible_checkpoints(self):
        dataset, vectors = self.make_task()
        cfg = TrainConfig(epochs_max=3, patience=3, seed=5)
        backend = SimulatedBackend(UNINFORMATIVE_ORACLE)
        a = save_checkpoint(train(dataset, vectors, cfg, backend))
        b = save_checkpoint(train(dataset, vectors, cfg, backend))
        assert a == b

    def test_checkpoint_round_trip_preserves_predictions(self):
        dataset, vectors = self.make_task()
        cfg = TrainConfig(epochs_max=3, patience=3, seed=5)
        backend = SimulatedBackend(UNINFORMATIVE_ORACLE)
        ckpt = train(dataset, vectors, cfg, backend)
        restored = load_checkpoint(save_checkpoint(ckpt))
        val = dataset.split_records(Split.VAL)
        _, before = evaluate_checkpoint(ckpt, val, vectors, backend)
        _, after = evaluate_checkpoint(restored, val, vectors, backend)
        assert before == after
        assert save_checkpoint(restored) == save_checkpoint(ckpt)

    def test_history_has_required_log_fields(self):
        dataset, vectors = self.make_task()
        cfg = TrainConfig(epochs_max=2, patience=2, seed=1)
        log_lines: list[str] = []
        ckpt = train(dataset, vectors, cfg, SimulatedBackend(UNINFORMATIVE_ORACLE),
                     log_lines=log_lines)
        assert set(ckpt.history[0]) == {"epoch", "mean_return", "val_accuracy", "val_f1", "fuzz_rate"}
        assert len(log_lines) == len(ckpt.history)
        assert log_lines[0].startswith("epoch=1 ")

    def test_learns_separable_task(self):
        dataset, vectors = self.make_task(n=300)
        cfg = TrainConfig(epochs_max=20, patience=20, seed=7, learning_rate=1e-3)
        ckpt = train(dataset, vectors, cfg, SimulatedBackend(UNINFORMATIVE_ORACLE))
        assert max(h["val_accuracy"] for h in ckpt.history) >= 0.9

    def test_fuzz_dies_out_when_uninformative(self):
        # Outcomes independent of the label: the -5 cost should dominate.
        dataset, vectors = self.make_task(n=300)
        cfg = TrainConfig(epochs_max=30, patience=30, seed=7, learning_rate=1e-3)
        ckpt = train(dataset, vectors, cfg, SimulatedBackend(UNINFORMATIVE_ORACLE))
        assert ckpt.history[-1]["fuzz_rate"] < 0.10

    def test_empty_split_rejected(self):
        dataset, vectors = self.make_task()
        dataset.split_assignment = {
            wid: Split.TRAIN for wid in dataset.split_assignment
        }
        cfg = TrainConfig(epochs_max=1, patience=1, seed=0)
        with pytest.raises(EmptySplit):
            train(dataset, vectors, cfg, SimulatedBackend(UNINFORMATIVE_ORACLE))


class TestConfigValidation:
    def test_epsilon_range(self):
        with pytest.raises(ValueError):
            TrainConfig(clip_epsilon=1.5)

    def test_gamma_range(self):
        with pytest.raises(ValueError):
            TrainConfig(gamma=0.0)

    def test_negative_patience(self):
        with pytest.raises(ValueError):
            TrainConfig(patience=-1)

import numpy as np
import pytest

from prefermab.bench import baseline_no_action, baseline_random, held_out_population
from prefermab.engine import (Checkpoint, Population, TrainConfig, Trainer, epoch_rng, evaluate, finetune,
                              pad_population, pretrain, run_policy, sample_population)

SMALL = dict(capacity=4, budget=2.0, n_epochs=3, n_steps=5, seed=3)


def small_cfg(**kw):
    return TrainConfig(**{**SMALL, **kw})


@pytest.fixture(scope="module")
def trained():
    return pretrain(small_cfg(n_epochs=6, ppo={"lambda_freeze_epochs": 0}))


class TestTrainConfig:
    def test_budget_term_truncated(self):
        cfg = small_cfg(discount=0.5, n_steps=3)
        assert cfg.budget_term() == pytest.approx(2.0 * (1 + 0.5 + 0.25))

    def test_budget_term_infinite(self):
        assert small_cfg(discount=0.5, budget_horizon="infinite").budget_term() == pytest.approx(4.0)

    @pytest.mark.parametrize("kw", [{"K": 0}, {"capacity": 0}, {"discount": 1.0}, {"reset": "never"},
                                    {"shaping": "spline"}, {"training_opt_in_rate": 1.5}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            small_cfg(**kw)

    def test_dict_round_trip(self):
        cfg = small_cfg(ppo={"agent_clip_ratio": 1.5})
        back = TrainConfig.from_dict(cfg.to_dict())
        assert back == cfg and back.hash() == cfg.hash()

    def test_unknown_key(self):
        with pytest.raises(KeyError, match="bogus"):
            TrainConfig.from_dict({"bogus": 1})


class TestSeeding:
    def test_epoch_rng_streams_independent(self):
        a = epoch_rng(1, 2, 0).random(3)
        np.testing.assert_array_equal(a, epoch_rng(1, 2, 0).random(3))
        assert not np.array_equal(a, epoch_rng(1, 2, 1).random(3))
        assert not np.array_equal(a, epoch_rng(1, 3, 0).random(3))

    def test_pretrain_deterministic(self):
        a = pretrain(small_cfg())
        b = pretrain(small_cfg())
        assert a.content_hash() == b.content_hash()
        assert pretrain(small_cfg(seed=4)).content_hash() != a.content_hash()


class TestCheckpoint:
    def test_round_trip_bit_exact(self, trained, tmp_path):
        digest = trained.save(tmp_path / "m")
        back = Checkpoint.load(tmp_path / "m")
        assert back.content_hash() == digest
        for name, net in trained.agent.nets().items():
            assert back.agent.nets()[name].to_bytes() == net.to_bytes()
        assert back.cfg == trained.cfg

    def test_resumed_training_identical(self, trained, tmp_path):
        trained.save(tmp_path / "m")
        a = trained.copy()
        b = Checkpoint.load(tmp_path / "m")
        Trainer(a).train(2)
        Trainer(b).train(2)
        assert a.content_hash() == b.content_hash()

    def test_corrupt_blob_rejected(self, trained, tmp_path):
        trained.save(tmp_path / "m")
        blob = tmp_path / "m" / "actor.bin"
        raw = bytearray(blob.read_bytes())
        raw[0] ^= 0xFF
        blob.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="checksum"):
            Checkpoint.load(tmp_path / "m")

    def test_initial_lambda(self):
        ck = Checkpoint.initial(small_cfg())
        assert ck.agent.lam(np.zeros(4), np.zeros((4, 4)), np.ones(4)) == pytest.approx(np.log(2))


class TestTrainer:
    def test_history_and_samples(self):
        ck = Checkpoint.initial(small_cfg(training_opt_in_rate=1.0))
        t = Trainer(ck)
        t.train(3)
        assert [h["epoch"] for h in t.history] == [0, 1, 2]
        assert ck.meta["samples"] == 3 * 4 * 5
        assert all(h["n_live"] == 4 for h in t.history)

    def test_lambda_frozen_then_updated(self):
        ck = Checkpoint.initial(small_cfg(K=2, ppo={"lambda_freeze_epochs": 2}))
        t = Trainer(ck)
        t.train(5)
        assert ck.agent.n_lambda_updates == 2
        assert ck.agent.lambda_lr == pytest.approx(2e-3 * 0.99 ** 2)

    def test_unique_arms_pool(self):
        ck = Checkpoint.initial(small_cfg(unique_arms=6, training_opt_in_rate=0.5))
        t = Trainer(ck)
        seen = set()
        for _ in range(8):
            t.run_epoch()
            ids = t.arm_ids[t.xi == 1]
            assert len(set(ids.tolist())) == len(ids)
            seen.update(ids.tolist())
        assert seen <= set(range(6))
        for i in np.flatnonzero(t.xi):
            np.testing.assert_array_equal(t.params[i], t.pool.params[t.arm_ids[i]])

    def test_masked_features_zero(self):
        ck = Checkpoint.initial(small_cfg(mask_features=[0, 2]))
        t = Trainer(ck)
        t.run_epoch()
        np.testing.assert_array_equal(t.z[:, [0, 2]], 0.0)

    def test_population_slots_fixed(self):
        cfg = small_cfg()
        pop = sample_population(cfg.make_env(), cfg.make_feature_map(cfg.make_env()), 3, 0)
        t = Trainer(Checkpoint.initial(cfg), pop)
        t.run_epoch()
        assert t.xi[3] == 0
        np.testing.assert_array_equal(t.params[:3], pop.params)


class TestEvaluate:
    def test_same_seed_same_report(self, trained):
        pop, _ = held_out_population(trained.cfg, 9)
        a = evaluate(trained, pop, 0.8, trials=5, seed=2)
        b = evaluate(trained, pop, 0.8, trials=5, seed=2)
        np.testing.assert_array_equal(a.per_trial, b.per_trial)

    def test_zero_budget_equals_no_action(self, trained):
        pop, _ = held_out_population(trained.cfg, 9)
        a = evaluate(trained, pop, 1.0, trials=6, seed=4, budget=0.0)
        b = baseline_no_action(trained.cfg.make_env(), pop, trials=6, seed=4)
        np.testing.assert_array_equal(a.per_trial, b.per_trial)

    def test_padding_small_population(self, trained):
        pop, _ = held_out_population(trained.cfg, 9)
        small = Population(pop.params[:2], pop.features[:2], pop.states[:2])
        rep = evaluate(trained, small, 1.0, trials=3)
        assert np.all(np.isfinite(rep.per_trial))
        assert len(pad_population(small, 4)) == 4

    def test_oversized_population(self, trained):
        pop, _ = held_out_population(small_cfg(capacity=6), 9)
        with pytest.raises(ValueError):
            evaluate(trained, pop)

    def test_infeasible_policy_detected(self, trained):
        pop, _ = held_out_population(trained.cfg, 9)
        env = trained.cfg.make_env()

        def all_act(s, z, xi, rng):
            A = np.zeros((len(s), 2), dtype=np.int64)
            A[:, 1] = 1
            return A

        with pytest.raises(AssertionError):
            run_policy(all_act, env, pop, 1.0, 1.0, trials=1)

    def test_trials_validated(self, trained):
        pop, _ = held_out_population(trained.cfg, 9)
        with pytest.raises(ValueError):
            evaluate(trained, pop, trials=0)

    def test_report_files(self, trained, tmp_path):
        pop, _ = held_out_population(trained.cfg, 9)
        rep = evaluate(trained, pop, trials=3)
        rep.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "trial,reward_per_arm" and len(lines) == 4


def test_finetune_curve_starts_at_zero_shot(trained):
    pop, _ = held_out_population(trained.cfg, 9)
    before = trained.content_hash()
    ck, curve = finetune(trained, pop, n_epochs=2, eval_trials=3)
    assert trained.content_hash() == before
    assert [r["epoch"] for r in curve] == [0, 1, 2]
    assert curve[0]["samples_per_arm"] == 0.0
    zero_shot = evaluate(trained, pop, trained.cfg.training_opt_in_rate, 3, 10, 1234)
    assert curve[0]["reward"] == zero_shot.mean


def test_smoke_pretrain_beats_random():
    cfg = TrainConfig(capacity=4, budget=2.0, n_epochs=30, n_steps=10, seed=0, training_opt_in_rate=1.0,
                      ppo={"lambda_initial_learning_rate": 0.005})
    ck = pretrain(cfg)
    pop, _ = held_out_population(cfg, 77)
    ours = evaluate(ck, pop, 1.0, trials=40, seed=5)
    rand = baseline_random(cfg.make_env(), pop, 2.0, trials=40, seed=5)
    assert ours.mean > rand.mean


def test_lambda_period_defaults_to_n_subepochs():
    assert small_cfg().K == 4
    assert small_cfg(ppo={"n_subepochs": 3}).K == 3
    assert small_cfg(K=2, ppo={"n_subepochs": 3}).K == 2

import math

import numpy as np
import pytest

from fedshield import nn
from fedshield import orchestrator as orch
from fedshield.data import LabeledDataset, generate_synthetic
from fedshield.errors import ConfigurationError, DivergenceError
from fedshield.orchestrator import ExperimentConfig, Flip


def tiny(**kw):
    base = dict(
        rounds=2, num_clients=4, num_classes=3, dim=4, hidden_sizes=(5,),
        samples_per_class=60, learning_rate=0.05, noise_scale=1.0,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def records_equal(a, b):
    for x, y in zip(a.records, b.records):
        assert x.test_loss == y.test_loss
        np.testing.assert_array_equal(x.class_accuracy, y.class_accuracy)
        np.testing.assert_array_equal(x.client_losses, y.client_losses)
        assert x.noise_accuracy == y.noise_accuracy
    np.testing.assert_array_equal(a.final_params, b.final_params)


def test_no_local_training_keeps_initial_model():
    cfg = tiny(rounds=1, num_clients=2, aggregator="fedavg", local_epochs=0)
    result = orch.run_experiment(cfg, workers=1)
    init = nn.flatten(nn.init_model(cfg.layer_sizes, orch.child_seed(cfg.seed, orch.SEED_INIT)))
    np.testing.assert_array_equal(result.final_params, init)
    assert len(result.records) == 1


@pytest.mark.parametrize("aggregator", ["fedavg", "dual_attention", "multikrum"])
def test_identical_shards_give_identical_updates(aggregator):
    cfg = tiny(aggregator=aggregator, rounds=3)
    shards, test = orch.build_data(cfg)
    same = [shards[0]] * cfg.num_clients
    result = orch.run_experiment(cfg, workers=1, data=(same, test))
    for rec in result.records:
        assert np.all(rec.client_losses == rec.client_losses[0])
        if aggregator == "dual_attention":
            np.testing.assert_allclose(rec.attention.eta_combined, 1 / cfg.num_clients, atol=1e-15)


def test_secure_symmetry_fedavg_equals_dual_attention():
    cfg = tiny(rounds=4)
    shards, test = orch.build_data(cfg)
    data = ([shards[1]] * cfg.num_clients, test)
    fa = orch.run_experiment(tiny(rounds=4, aggregator="fedavg"), workers=1, data=data)
    da = orch.run_experiment(tiny(rounds=4, aggregator="dual_attention"), workers=1, data=data)
    np.testing.assert_allclose(da.final_params, fa.final_params, atol=1e-12)


def test_same_seed_is_deterministic_across_worker_counts():
    cfg = tiny(aggregator="dual_attention", flips=(Flip(1, 0),))
    a = orch.run_experiment(cfg, workers=1)
    b = orch.run_experiment(cfg, workers=1)
    c = orch.run_experiment(cfg, workers=4)
    records_equal(a, b)
    records_equal(a, c)


def test_different_seeds_differ():
    a = orch.run_experiment(tiny(seed=1), workers=1)
    b = orch.run_experiment(tiny(seed=2), workers=1)
    assert a.final.test_loss != b.final.test_loss


def test_attack_wiring_secure_is_passthrough():
    cfg = tiny()
    shards, _ = orch.build_data(cfg)
    wired = orch.attack_wiring(cfg, shards)
    assert all(w is s for w, s in zip(wired, shards))


def test_attack_wiring_only_touches_malicious_client():
    cfg = tiny(num_clients=6, flips=(Flip(4, 0),))
    shards, _ = orch.build_data(cfg)
    wired = orch.attack_wiring(cfg, shards)
    for k, (w, s) in enumerate(zip(wired, shards)):
        if k == 4:
            source = cfg.dominant_class_of()[4]
            assert np.any(w.labels != s.labels)
            assert not np.any(w.labels == source)
            np.testing.assert_array_equal(w.features, s.features)
        else:
            assert w.equals(s)


def test_two_attackers_mirror_paper_setup():
    cfg = tiny(num_clients=6, flips=orch.TWO_ATTACKERS)
    spec = cfg.poison_spec()
    assert spec.num_attackers == 2
    sources = {src for src, _ in spec.flips.values()}
    targets = {tgt for _, tgt in spec.flips.values()}
    assert len(sources) == 2 and len(targets) == 1


def test_flip_source_must_be_dominant_class():
    with pytest.raises(ConfigurationError, match="dominant"):
        tiny(flips=(Flip(client=1, target=0, source=2),))


def test_test_set_is_never_poisoned():
    cfg = tiny(flips=(Flip(1, 0),))
    _, clean_test = orch.build_data(tiny())
    _, test = orch.build_data(cfg)
    assert test.equals(clean_test)


def test_conservation_each_sample_seen_once_per_epoch(monkeypatch):
    cfg = tiny(local_epochs=2, batch_size=7)
    shards, _ = orch.build_data(cfg)
    seen = []
    original = nn.backward

    def counting(model, batch, labels):
        seen.append(len(labels))
        return original(model, batch, labels)

    monkeypatch.setattr(nn, "backward", counting)
    params = nn.flatten(nn.init_model(cfg.layer_sizes, 0))
    orch.local_train(params, cfg, shards[0], np.random.default_rng(0))
    assert sum(seen) == 2 * len(shards[0])
    assert seen[-1] == len(shards[0]) % 7 or len(shards[0]) % 7 == 0


def test_divergence_is_reported_with_round():
    cfg = tiny(learning_rate=1e4, rounds=5, noise_scale=3.0)
    with pytest.raises(DivergenceError) as info:
        orch.run_experiment(cfg, workers=1)
    assert info.value.round_index is not None
    assert "round" in str(info.value)


def test_config_validation():
    with pytest.raises(ConfigurationError, match="rounds"):
        tiny(rounds=0)
    with pytest.raises(ConfigurationError, match="beta"):
        tiny(beta=2.0)
    with pytest.raises(ConfigurationError, match="multikrum_f"):
        tiny(aggregator="multikrum", multikrum_f=2)
    with pytest.raises(ConfigurationError, match="aggregator"):
        tiny(aggregator="median")
    with pytest.raises(ConfigurationError):
        tiny(num_clients=1)


# --- evaluate -----------------------------------------------------------------

def test_evaluate_perfect_model():
    # one-hot inputs through a huge identity layer give near one-hot predictions
    x = np.eye(3)[[0, 1, 2, 1]]
    ds = LabeledDataset(x, [0, 1, 2, 1], [2, 2, 18, 18], 3)
    model = nn.MlpModel((3, 3), (np.eye(3) * 200.0,), (np.zeros(3),))
    ev = orch.evaluate(model, ds)
    assert ev.accuracy == 1.0
    assert ev.loss == pytest.approx(0.0, abs=1e-12)
    assert ev.noise_accuracy == {2.0: 1.0, 18.0: 1.0}


def test_evaluate_zero_model_on_balanced_set():
    ds = generate_synthetic(4, 5, 30, seed=0)
    ev = orch.evaluate(nn.zeros_model([5, 6, 4]), ds)
    assert ev.accuracy == pytest.approx(0.25)
    np.testing.assert_array_equal(ev.class_accuracy, [1, 0, 0, 0])
    assert ev.loss == pytest.approx(math.log(4))


def test_evaluate_class_accuracy_accounts_for_overall():
    cfg = tiny(rounds=3)
    result = orch.run_experiment(cfg, workers=1)
    _, test = orch.build_data(cfg)
    ev = orch.evaluate(result.final_model, test)
    counts = test.class_counts()
    assert np.dot(ev.class_accuracy, counts) / counts.sum() == pytest.approx(ev.accuracy)
    assert set(ev.noise_accuracy) == set(cfg.noise_levels)
    assert ev.loss == result.final.test_loss


def test_evaluate_dimension_mismatch():
    ds = generate_synthetic(3, 4, 5)
    with pytest.raises(ConfigurationError):
        orch.evaluate(nn.zeros_model([5, 3]), ds)


def test_sink_receives_every_round():
    got = []
    orch.run_experiment(tiny(rounds=3), sink=got.append, workers=1)
    assert [r.round for r in got] == [0, 1, 2]


def test_threads_env(monkeypatch):
    monkeypatch.setenv("FEDSHIELD_THREADS", "3")
    assert orch.default_workers() == 3
    monkeypatch.setenv("FEDSHIELD_THREADS", "zero")
    with pytest.raises(ConfigurationError):
        orch.default_workers()

import numpy as np
import pytest

import config
from core.client import ClientSettings, FederatedClient, client_in_step, client_local_step
from core.errors import ValidationError
from server.messages import FeaturePair, ServerBroadcast


@pytest.fixture
def client(make_model, small_blobs):
    train, _ = small_blobs
    return FederatedClient(0, make_model(variant="C", seed=0), train.subset(np.arange(64)))


def feature_sample(count, client_id=9, seed=0):
    rng = np.random.default_rng(seed)
    return tuple(FeaturePair(rng.standard_normal(6).astype(np.float32),
                             np.abs(rng.standard_normal(5)).astype(np.float32), client_id, 1)
                 for _ in range(count))


def shell_broadcast(model, round_num=2, sample=()):
    w_e, w_c = model.shell_arrays()
    return ServerBroadcast(round=round_num, w_e=w_e, w_c=w_c, sample=sample)


def test_local_step_leaves_the_model_alone(client):
    before = client.model.full_arrays()
    inputs, labels = client.shard.inputs[:8], client.shard.labels[:8]
    G_local, pairs, loss = client_local_step(client.model, inputs, labels, client_id=0, round_num=1)
    assert loss > 0
    assert len(pairs) == 8
    assert pairs[0].s_in.shape == (6,) and pairs[0].s_out.shape == (5,)
    assert pairs[0].s_in.dtype == np.float32
    assert G_local.norm() > 0
    for group, arrays in before.items():
        for name, values in arrays.items():
            np.testing.assert_array_equal(client.model.full_arrays()[group][name], values)


def test_in_step_touches_only_intermediate_layers(client):
    G_IN, loss = client_in_step(client.model, feature_sample(10))
    assert loss > 0
    assert np.all(G_IN.groups["extractor"] == 0)
    assert np.all(G_IN.groups["classifier"] == 0)
    assert np.any(G_IN.groups["intermediate"] != 0)


def test_in_step_rejects_foreign_widths(client):
    bad = (FeaturePair(np.zeros(7, dtype=np.float32), np.zeros(5, dtype=np.float32), 1, 1),)
    with pytest.raises(ValidationError):
        client_in_step(client.model, bad)
    with pytest.raises(ValidationError):
        client_in_step(client.model, ())


def test_zero_inner_epochs_only_installs_shells(client, make_model):
    donor = make_model(variant="A", seed=99)
    broadcast = shell_broadcast(donor)
    intermediate_before = client.model.arrays(("intermediate",))
    update = client.client_round(broadcast, ClientSettings(inner_epochs=0), seed=0)
    assert np.isnan(update.local_loss)
    assert update.in_loss is None
    assert update.pairs == ()
    for name, values in broadcast.w_e.items():
        np.testing.assert_array_equal(update.w_e[name], values)
    for name, values in intermediate_before["intermediate"].items():
        np.testing.assert_array_equal(client.model.intermediate[name].values, values)


def test_lambda_zero_moves_only_intermediate_layers(client):
    broadcast = shell_broadcast(client.model, sample=feature_sample(40))
    settings = ClientSettings(mode=config.MODE_FEDIN, lam=0.0, batch_size=16)
    intermediate_before = client.model.arrays(("intermediate",))["intermediate"]
    update = client.client_round(broadcast, settings, seed=0)

    assert update.in_loss is not None
    for name, values in broadcast.w_e.items():
        np.testing.assert_array_equal(update.w_e[name], values)
    for name, values in broadcast.w_c.items():
        np.testing.assert_array_equal(update.w_c[name], values)
    changed = [not np.array_equal(client.model.intermediate[name].values, values)
               for name, values in intermediate_before.items()]
    assert any(changed)


def test_fedin_round_reports_both_losses(client):
    broadcast = shell_broadcast(client.model, sample=feature_sample(40))
    update = client.client_round(broadcast, ClientSettings(batch_size=16), seed=0)
    assert update.local_loss > 0
    assert update.in_loss > 0
    assert update.num_samples == 64
    assert len(update.pairs) == 64
    assert all(p.client_id == 0 and p.round == 2 for p in update.pairs)
    assert update.w_in is None


def test_analytic_resolver_runs(client):
    broadcast = shell_broadcast(client.model, sample=feature_sample(40))
    update = client.client_round(broadcast, ClientSettings(resolver="analytic", batch_size=16), seed=0)
    assert np.isfinite(update.local_loss)


def test_ignore_divergence_mode(client):
    broadcast = shell_broadcast(client.model, sample=feature_sample(40))
    update = client.client_round(broadcast, ClientSettings(mode=config.MODE_IGNORE_DIVERGENCE), seed=0)
    assert update.in_loss is not None


def test_no_in_mode_skips_in_training(client):
    broadcast = shell_broadcast(client.model, sample=feature_sample(40))
    update = client.client_round(broadcast, ClientSettings(mode=config.MODE_NO_IN), seed=0)
    assert update.in_loss is None
    assert len(update.pairs) == 64


def test_no_aggregation_mode_keeps_own_shells(client, make_model):
    own_e, _ = client.model.shell_arrays()
    foreign = shell_broadcast(make_model(variant="A", seed=5))
    settings = ClientSettings(mode=config.MODE_NO_AGGREGATION, inner_epochs=0)
    update = client.client_round(foreign, settings, seed=0)
    for name, values in own_e.items():
        np.testing.assert_array_equal(update.w_e[name], values)


def test_upload_cap(client):
    update = client.client_round(ServerBroadcast(round=1), ClientSettings(upload_cap=10), seed=0)
    assert len(update.pairs) == 10


def test_exclude_self_filters_own_pairs(client):
    own = feature_sample(20, client_id=0)
    settings = ClientSettings(exclude_self=True)
    update = client.client_round(shell_broadcast(client.model, sample=own), settings, seed=0)
    assert update.in_loss is None


def test_client_round_is_deterministic(make_model, small_blobs):
    train, _ = small_blobs
    updates = []
    for _ in range(2):
        client = FederatedClient(1, make_model(variant="E", seed=3), train.subset(np.arange(50)))
        broadcast = shell_broadcast(client.model, sample=feature_sample(30))
        updates.append(client.client_round(broadcast, ClientSettings(batch_size=8), seed=11))
    assert updates[0].local_loss == updates[1].local_loss
    for name in updates[0].w_e:
        assert np.array_equal(updates[0].w_e[name], updates[1].w_e[name])


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_own_pairs_replay_with_zero_in_loss(make_model, small_blobs, dtype):
    train, _ = small_blobs
    model = make_model(variant="C", seed=4, dtype=dtype)
    _, pairs, _ = client_local_step(model, train.inputs[:16], train.labels[:16])
    assert pairs[0].s_in.dtype == dtype
    G_IN, loss = client_in_step(model, pairs)
    assert loss == 0.0
    assert G_IN.norm() == 0.0


def test_duplicate_rows_give_identical_pairs(client):
    inputs = np.repeat(client.shard.inputs[:1], 3, axis=0)
    labels = np.repeat(client.shard.labels[:1], 3)
    _, pairs, _ = client_local_step(client.model, inputs, labels)
    for pair in pairs[1:]:
        np.testing.assert_array_equal(pair.s_in, pairs[0].s_in)
        np.testing.assert_array_equal(pair.s_out, pairs[0].s_out)


def test_small_gradient_step_lowers_the_local_loss(make_model, small_blobs):
    train, _ = small_blobs
    model = make_model(variant="B", seed=2, dtype=np.float64)
    inputs, labels = train.inputs[:32], train.labels[:32]
    G_local, _, loss = client_local_step(model, inputs, labels)
    grads = G_local.unflatten()
    model.load_arrays({group: {name: values - 1e-2 * grads[group][name] for name, values in arrays.items()}
                       for group, arrays in model.full_arrays().items()})
    _, _, after = client_local_step(model, inputs, labels)
    assert after < loss


def float64_client(make_model, small_blobs, learning_rate=1e-3):
    train, _ = small_blobs
    return FederatedClient(0, make_model(variant="C", seed=0, dtype=np.float64), train.subset(np.arange(64)),
                           learning_rate=learning_rate)


def test_simplified_update_matches_a_hand_rolled_adam_step(make_model, small_blobs):
    lr, lam = 1e-3, 2.0
    client = float64_client(make_model, small_blobs, lr)
    sample = feature_sample(40)
    before = client.model.full_arrays()

    # One batch covering the shard, so the gradients are those of the whole shard
    G_local, _, _ = client_local_step(client.model, client.shard.inputs, client.shard.labels)
    G_IN, _ = client_in_step(client.model, sample)
    Z = (G_IN + G_local.scaled(lam / 2)).unflatten()

    settings = ClientSettings(mode=config.MODE_FEDIN, lam=lam, batch_size=64, inner_epochs=1)
    client.client_round(shell_broadcast(client.model, sample=sample), settings, seed=0)

    after = client.model.full_arrays()
    for group, arrays in before.items():
        for name, values in arrays.items():
            z = Z[group][name]
            expected = values - lr * z / (np.abs(z) + config.ADAM_EPS)
            np.testing.assert_allclose(after[group][name], expected, rtol=1e-9, atol=1e-10)


def test_ignore_divergence_takes_one_step_of_budget(make_model, small_blobs):
    lr = 1e-3
    client = float64_client(make_model, small_blobs, lr)
    before = client.model.full_arrays()
    settings = ClientSettings(mode=config.MODE_IGNORE_DIVERGENCE, batch_size=64, inner_epochs=1)
    update = client.client_round(shell_broadcast(client.model, sample=feature_sample(40)), settings, seed=0)
    assert update.in_loss is not None

    after = client.model.full_arrays()
    for group, arrays in before.items():
        moved = max(np.max(np.abs(after[group][name] - values)) for name, values in arrays.items())
        assert 0 < moved <= lr * (1 + 1e-9)
    assert {key[0] for key in client.in_optimizer.state} == {"intermediate"}
    assert all(moments.step == 1 for moments in client.in_optimizer.state.values())

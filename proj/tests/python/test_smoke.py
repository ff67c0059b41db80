import math

import numpy as np
import pytest

import fedssd


def test_synthetic_and_partitions_cover_every_index():
    ds = fedssd.generate_synthetic(num_classes=4, dims=3, per_class=25, separation=2.0, seed=7)
    assert len(ds) == 100
    assert ds.features.shape == (100, 3)
    assert ds.class_counts() == [25, 25, 25, 25]

    for plan in (
        fedssd.partition_dirichlet(ds, clients=5, concentration=0.5, seed=1),
        fedssd.partition_quantity(ds, clients=4, labels_per_client=2, seed=1),
    ):
        flat = sorted(i for client in plan for i in client)
        assert flat == list(range(100))


def test_auxiliary_is_disjoint_from_remaining():
    ds = fedssd.generate_synthetic(3, 2, 20, 2.0, 1)
    aux, aux_idx, rest = fedssd.sample_auxiliary(ds, per_class=5, seed=3)
    assert aux.class_counts() == [5, 5, 5]
    assert set(aux_idx).isdisjoint(rest)
    assert sorted(aux_idx + rest) == list(range(len(ds)))


def test_weights_match_closed_form():
    a = np.array([[0.8, 0.2], [0.4, 0.6]])
    mc = fedssd.class_weights(a)
    assert mc == pytest.approx([0.8 * 0.6, 0.6 * 0.8])

    p = 0.75
    s = fedssd.sample_weight(p)
    assert s == pytest.approx(1.0 - math.sqrt(1.0 - p))

    m = fedssd.weight_vector(mc, s, m_max=0.5)
    expected = [0.5 * max(0.0, c * s - 0.1) for c in mc]
    assert m == pytest.approx(expected)


def test_ssd_loss_and_gradient():
    t = np.array([[2.0, 7.0]])
    z = np.array([[0.0, 3.0]])
    w = np.array([[0.5, 0.0]])
    loss, grad = fedssd.ssd_loss(t, z, w)
    assert loss == pytest.approx(1.0)
    np.testing.assert_allclose(grad, [[-1.0, 0.0]])

    mse, _ = fedssd.mse_loss(t, z, alpha=0.25)
    assert mse == pytest.approx(fedssd.ssd_loss(t, z, np.full((1, 2), 0.5))[0])

    kl, _ = fedssd.kl_loss(t, t, temperature=2.0, alpha=1.0)
    assert kl == pytest.approx(0.0, abs=1e-12)


def test_model_round_trips_and_aggregates():
    m = fedssd.Model.mlp(input_dim=3, hidden=[4], num_classes=2, seed=11)
    assert m.parameter_count == 3 * 4 + 4 + 4 * 2 + 2
    assert fedssd.Model.from_bytes(m.to_bytes()) == m
    assert m.unflatten(m.flatten()) == m

    doubled = m.unflatten(2.0 * m.flatten())
    mean = fedssd.aggregate([m, doubled], [1, 1])
    np.testing.assert_allclose(mean.flatten(), 1.5 * m.flatten())

    x = np.zeros((5, 3))
    assert m.logits(x).shape == (5, 2)
    assert len(m.predict(x)) == 5


def test_credibility_rows_sum_to_one():
    ds = fedssd.generate_synthetic(3, 4, 10, 2.0, 2)
    teacher = fedssd.Model.mlp(4, [6], 3, 5)
    a = fedssd.credibility_matrix(teacher, ds)
    np.testing.assert_allclose(a.sum(axis=1), np.ones(3))


def test_errors_carry_codes():
    with pytest.raises(fedssd.FedssdError) as info:
        fedssd.sample_weight(1.5)
    assert info.value.code == "invalid_argument"

    m = fedssd.Model.mlp(3, [4], 2, 1)
    with pytest.raises(fedssd.FedssdError) as info:
        m.logits(np.zeros((1, 5)))
    assert info.value.code == "dimension_mismatch"


def test_short_federation_is_deterministic():
    text = fedssd.preset_text("toy-synthetic-compare")
    assert text is not None
    overrides = [("federation.rounds", "2"), ("federation.clients", "4")]
    rec_a, final_a = fedssd.run_federation(text, "ssd", seed=3, overrides=overrides, workers=2)
    rec_b, final_b = fedssd.run_federation(text, "ssd", seed=3, overrides=overrides, workers=1)
    assert len(rec_a) == 2
    assert final_a == final_b
    assert [r["params_digest"] for r in rec_a] == [r["params_digest"] for r in rec_b]
    assert rec_a[0]["credibility"] is not None
    for r in rec_a:
        assert r["forgetting_gap"] == pytest.approx(r["acc_global"] - r["acc_local_mean"])

    fedavg, _ = fedssd.run_federation(text, "fedavg", seed=3, overrides=overrides)
    assert fedavg[0]["credibility"] is None


def test_rounds_to_target():
    assert fedssd.rounds_to_target([0.1, 0.5, 0.7], 0.5) == 1
    assert fedssd.rounds_to_target([0.1, 0.2], 0.5) is None

import math

import numpy as np
import pytest

from misslayer import nn
from misslayer.activations import relu_layer_forward
from misslayer.data import DatasetWithMask
from misslayer.density import GmmParams, MissingPoint, em_fit
from misslayer.errors import InvalidArgument, TrainingDiverged
from misslayer.verification import finite_difference_sweep, mc_network_output

from conftest import reduction_trajectories


def small_net(rng, D=2, hidden=5, out=3, loss="cross-entropy", k=2, kind="generalized-relu", seed=0):
    gmm = GmmParams(rng.standard_normal(k), rng.standard_normal((k, D)), 0.3 * rng.standard_normal((k, D)))
    layers = [nn.LayerSpec(kind, hidden, "relu"),
              nn.LayerSpec("dense", out, "softmax" if loss == "cross-entropy" else "linear")]
    return nn.NetworkModel.build(D, layers, loss, density=gmm, seed=seed)


def test_complete_rows_bitwise_classical(rng):
    model = small_net(rng, D=4, hidden=6)
    x = rng.standard_normal((10, 4))
    dense = model.copy()
    dense.layers[0] = nn.LayerSpec("dense", 6, "relu")
    dense.density = None
    assert np.array_equal(nn.forward_batch(model, x), nn.forward_batch(dense, x))


def test_mixed_batch_routes_rows(rng):
    model = small_net(rng, D=3)
    x = rng.standard_normal((6, 3))
    miss = np.zeros((6, 3), dtype=bool)
    miss[[1, 4], 0] = True
    full = nn.forward_batch(model, np.where(miss, np.nan, x), miss)
    for i in range(6):
        single = nn.forward(model, MissingPoint(np.where(miss[i], 0.0, x[i]), miss[i]))
        assert np.allclose(full[i], single, rtol=1e-14, atol=1e-300)
    dense = model.copy()
    dense.layers[0] = nn.LayerSpec("dense", 5, "relu")
    dense.density = None
    ok = ~miss.any(axis=1)
    assert np.array_equal(full[ok], nn.forward_batch(dense, x[ok]))


def test_one_unit_layer_nr_zero():
    gmm = GmmParams([0.0], [[0.0]], [[0.0]])
    model = nn.NetworkModel(1, [nn.LayerSpec("generalized-relu", 1), nn.LayerSpec("dense", 1, "linear")],
                            "masked-mse", [{"W": np.ones((1, 1)), "b": np.zeros(1)},
                                           {"W": np.ones((1, 1)), "b": np.zeros(1)}], gmm)
    out = nn.forward(model, MissingPoint([0.0], [True]))
    assert out[0] == pytest.approx(0.3989422804, abs=1e-10)


@pytest.mark.parametrize("kind", ["generalized-relu", "generalized-rbf"])
def test_network_matches_monte_carlo(kind):
    rng = np.random.default_rng(5 if kind == "generalized-relu" else 6)
    D = 4
    gmm = GmmParams(rng.standard_normal(3), rng.standard_normal((3, D)), 0.3 * rng.standard_normal((3, D)))
    layers = [nn.LayerSpec(kind, 6, "relu"), nn.LayerSpec("dense", 5, "relu"), nn.LayerSpec("dense", 2, "linear")]
    model = nn.NetworkModel.build(D, layers, "masked-mse", density=gmm, seed=1,
                                  init_data=rng.standard_normal((20, D)))
    point = MissingPoint(rng.standard_normal(D), [True, False, True, False])
    _, mc_first, se = mc_network_output(model, point, n=100_000, seed=2)
    _, caches = nn.forward_batch(model, point.values[None], point.mask[None], return_cache=True)
    first = nn.forward_batch(nn.NetworkModel(D, layers[:1] + [nn.LayerSpec("dense", 6, "linear")], "masked-mse",
                                             [model.params[0], {"W": np.eye(6), "b": np.zeros(6)}], gmm),
                             point.values[None], point.mask[None])[0]
    assert np.all(np.abs(first - mc_first) <= 4 * se + 1e-15)
    out, _, _ = mc_network_output(model, point, n=100_000, seed=2)
    # layers after the first see the averaged activation, so they agree up to MC noise
    assert np.allclose(nn.forward(model, point), out, atol=0.05)


def test_masked_mse_examples():
    p = MissingPoint([1.0, 2.0, 3.0, 4.0], [False] * 4)
    assert nn.loss_masked_mse(p.values, p) == 0.0
    assert nn.loss_masked_mse(p.values + 1.0, p) == 1.0
    half = MissingPoint([1.0, 2.0, 0.0, 0.0], [False, False, True, True])
    pred = np.array([0.0, 4.0, 9.0, 9.0])
    assert nn.loss_masked_mse(pred, half) == pytest.approx(np.mean([1.0, 4.0]))
    assert nn.loss_masked_mse(pred, MissingPoint(np.zeros(4), [True] * 4)) == 0.0


def test_cross_entropy_examples(rng):
    assert nn.loss_cross_entropy(np.zeros(7), 3) == pytest.approx(math.log(7), abs=1e-15)
    logits = np.zeros(4)
    logits[2] = 1e6
    assert nn.loss_cross_entropy(logits, 2) < 1e-12
    z = rng.standard_normal(5)
    ref = -math.log(math.exp(z[1]) / sum(math.exp(v) for v in z))
    assert nn.loss_cross_entropy(z, 1) == pytest.approx(ref, abs=1e-12)
    with pytest.raises(InvalidArgument):
        nn.loss_cross_entropy(z, 5)


def test_complete_batch_density_gradients_zero(rng):
    model = small_net(rng)
    _, _, dens = nn.backward(model, rng.standard_normal((4, 2)), None, np.array([0, 1, 2, 0]))
    assert all(np.all(v == 0.0) for v in dens.values())


def test_linear_layer_normal_equation_gradient(rng):
    X = rng.standard_normal((8, 3))
    Y = rng.standard_normal((8, 2))
    W, b = rng.standard_normal((3, 2)), rng.standard_normal(2)
    model = nn.NetworkModel(3, [nn.LayerSpec("dense", 2, "linear")], "masked-mse", [{"W": W, "b": b}])
    # a single dense layer is both first and last: go through the generic path with an identity layer
    model = nn.NetworkModel(3, [nn.LayerSpec("dense", 3, "linear"), nn.LayerSpec("dense", 2, "linear")],
                            "masked-mse", [{"W": np.eye(3), "b": np.zeros(3)}, {"W": W, "b": b}])
    _, grads, _ = nn.backward(model, X, None, (Y, np.zeros_like(Y, dtype=bool)))
    R = X @ W + b - Y
    # mean over rows of per-row mean over 2 outputs
    assert np.allclose(grads[1]["W"], X.T @ R / 8.0, atol=1e-14)
    assert np.allclose(grads[1]["b"], R.sum(axis=0) / 8.0, atol=1e-14)


def test_fd_sweep_small_generalized_mlp():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        model = small_net(rng, seed=seed)
        x = rng.standard_normal((4, 2))
        miss = np.zeros((4, 2), dtype=bool)
        miss[0, 0] = miss[1, 1] = miss[2, 0] = True
        assert finite_difference_sweep(model, x, miss, rng.integers(0, 3, 4)) < 1e-4


def test_fd_sweep_rbf_and_mse(rng):
    model = small_net(rng, D=3, hidden=4, out=3, loss="masked-mse", kind="generalized-rbf")
    x = rng.standard_normal((3, 3))
    miss = np.array([[True, False, False], [False, True, True], [False, False, False]])
    tmask = np.array([[True, False, False], [False, False, False], [False, False, True]])
    assert finite_difference_sweep(model, x, miss, (x, tmask)) < 1e-4


def _blobs(n=200, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    x = rng.standard_normal((n, 2)) * 0.5 + np.where(labels[:, None] == 1, 2.0, -2.0)
    return DatasetWithMask(x, np.zeros_like(x, dtype=bool), labels)


def test_zero_learning_rate_keeps_parameters(rng):
    data = _blobs()
    data.mask[::3, 0] = True
    model = small_net(rng, out=2)
    out = nn.train(model, data, nn.TrainConfig(lr=0.0, epochs=3)).model
    for (a, _), (b, _) in zip(model.parameter_arrays(), out.parameter_arrays()):
        assert np.array_equal(a, b)


def test_separable_data_fits():
    data = _blobs()
    model = nn.NetworkModel.build(2, [nn.LayerSpec("dense", 8), nn.LayerSpec("dense", 2, "softmax")],
                                  "cross-entropy", seed=0)
    res = nn.train(model, data, nn.TrainConfig(epochs=200, lr=1e-2, batch_size=32))
    assert nn.accuracy(res.model, data.values, data.mask, data.labels) >= 0.99
    assert len(res.history) == 200


def test_training_deterministic(rng):
    data = _blobs()
    data.mask[::4, 1] = True
    model = small_net(rng, out=2)
    cfg = nn.TrainConfig(epochs=3, lr=1e-2, seed=4)
    a, b = nn.train(model, data, cfg).model, nn.train(model, data, cfg).model
    assert a.to_dict() == b.to_dict()


def test_reduction_training_bitwise():
    data = _blobs(64)
    gen, cls = reduction_trajectories(data, [5, 4], 2, "cross-entropy", epochs=3)
    assert len(gen) == 3
    for g, c in zip(gen, cls):
        assert [l["params"] for l in g] == [l["params"] for l in c]


def test_softmax_outputs_sum_to_one(rng):
    model = small_net(rng)
    x = rng.standard_normal((5, 2))
    x[0, 1] = np.nan
    out = nn.forward_batch(model, x)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-15)


def test_checkpoint_round_trip(rng, tmp_path):
    model = small_net(rng)
    model.save(tmp_path / "m.json")
    back = nn.NetworkModel.load(tmp_path / "m.json")
    x = np.array([[0.3, np.nan], [1.0, -1.0]])
    assert np.array_equal(nn.forward_batch(model, x), nn.forward_batch(back, x))


def test_density_variances_floored_during_training(rng):
    data = _blobs()
    data.mask[::2, 0] = True
    model = small_net(rng, out=2)
    model.density.log_vars[:] = math.log(2e-6)
    out = nn.train(model, data, nn.TrainConfig(epochs=2, lr=0.5)).model
    assert np.all(out.density.variances >= 1e-6 * (1 - 1e-12))


def test_divergence_raises(rng):
    data = _blobs()
    model = nn.NetworkModel.build(2, [nn.LayerSpec("dense", 4), nn.LayerSpec("dense", 2, "linear")],
                                  "masked-mse", seed=0)
    data = data.replace(values=data.values * 1e200)
    with pytest.raises(TrainingDiverged) as err, np.errstate(over="ignore", invalid="ignore"):
        nn.train(model, data, nn.TrainConfig(epochs=2, lr=1.0, optimizer="sgd"))
    assert err.value.epoch == 1


def test_invalid_configurations():
    with pytest.raises(InvalidArgument):
        nn.LayerSpec("conv", 3)
    with pytest.raises(InvalidArgument):
        nn.NetworkModel.build(2, [nn.LayerSpec("generalized-relu", 3), nn.LayerSpec("dense", 2, "softmax")],
                              "cross-entropy")
    with pytest.raises(InvalidArgument):
        nn.TrainConfig(optimizer="rmsprop")
    with pytest.raises(InvalidArgument):
        nn.NetworkModel.build(2, [nn.LayerSpec("dense", 3), nn.LayerSpec("generalized-relu", 2)], "masked-mse",
                              density=GmmParams([0.0], [[0.0, 0.0]], [[0.0, 0.0]]))


def test_classical_first_layer_rejects_missing(rng):
    model = nn.NetworkModel.build(2, [nn.LayerSpec("dense", 3), nn.LayerSpec("dense", 2, "softmax")],
                                  "cross-entropy", seed=0)
    with pytest.raises(InvalidArgument):
        nn.forward_batch(model, np.array([[np.nan, 1.0]]))


def test_patience_restores_best(rng):
    data = _blobs()
    model = nn.NetworkModel.build(2, [nn.LayerSpec("dense", 4), nn.LayerSpec("dense", 2, "softmax")],
                                  "cross-entropy", seed=0)
    res = nn.train(model, data, nn.TrainConfig(epochs=50, lr=1e-2, patience=2), val=data)
    best = max(r["val_metric"] for r in res.history)
    assert nn.evaluate(res.model, data) == best

import numpy as np
import pytest

from misslayer import kernels
from misslayer.activations import nr
from misslayer.density import GmmParams
from misslayer.verification import (
    OracleConfig, bench_layer_cost, distinguish_check, distinguish_measures, mc_check,
    mixture_relu_response,
)


def gauss1(mean, var=1.0):
    return GmmParams([0.0], [[mean]], [[np.log(var)]])


def test_oracle_config_bounds():
    with pytest.raises(ValueError):
        OracleConfig(n_samples=100)
    with pytest.raises(ValueError):
        OracleConfig(k_se=2)


def test_identical_mixtures_inconclusive(rng):
    g = GmmParams(rng.standard_normal(3), rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))
    res = distinguish_measures(g, g.copy(), trials=200, seed=0)
    assert res["gap"] < 1e-12 and res["status"] == "inconclusive"


def test_shifted_unit_gaussians():
    a, b = gauss1(0.0), gauss1(1.0)
    at_origin = abs(mixture_relu_response(a, np.ones(1), 0.0) - mixture_relu_response(b, np.ones(1), 0.0))
    ref = abs(nr(0.0) - nr(1.0))
    assert at_origin == pytest.approx(ref, abs=1e-15) and ref > 0.1
    res = distinguish_measures(a, b, trials=100, seed=0)
    assert res["status"] == "certified" and res["gap"] >= ref


def test_mean_matched_variance_differs():
    a = GmmParams([0.0, 0.0], [[-1.0], [1.0]], [[0.0], [0.0]])
    b = GmmParams([0.0], [[0.0]], [[np.log(2.0)]])
    res = distinguish_measures(a, b, trials=1000, seed=0)
    assert res["status"] == "certified"


def test_never_reports_equality():
    a = gauss1(0.0)
    b = gauss1(1e-9)
    res = distinguish_measures(a, b, trials=50, seed=0)
    assert res["status"] in ("certified", "inconclusive")
    assert "equal" not in res["status"]


def test_suite_checks_small():
    rows = mc_check("rbf", 3, 20_000, seed=4)
    assert all(r["pass"] for r in rows)
    assert all(r["pass"] for r in distinguish_check(5, 300, seed=2))


def test_mc_check_deterministic():
    a = mc_check("relu", 2, 20_000, seed=9)
    b = mc_check("relu", 2, 20_000, seed=9)
    assert a == b


def test_bench_requires_trials():
    with pytest.raises(ValueError):
        bench_layer_cost(8, 1, 4, trials=10)


def test_bench_classical_independent_of_k():
    a = bench_layer_cost(64, 1, 32, trials=100, batch=64)
    b = bench_layer_cost(64, 4, 32, trials=100, batch=64)
    assert a["backend"] == kernels.BACKEND
    assert 0.5 < a["classical_ns"] / b["classical_ns"] < 2.0


def test_bench_k1_ratio():
    r = bench_layer_cost(784, 1, 256, trials=100)
    print(f"k=1 ratio {r['ratio']:.2f} ({r['backend']})")
    assert r["ratio"] <= 4.0


def test_bench_ratio_at_most_linear_in_k():
    ks = np.array([1, 2, 4, 8])
    ratios = np.array([bench_layer_cost(784, int(k), 256, trials=100)["ratio"] for k in ks])
    print("ratios", np.round(ratios, 2))
    slope = np.polyfit(ks, ratios, 1)[0]
    assert slope > 0
    assert np.all(ratios <= 1.5 * ks * ratios[0])


def test_relu_second_moment():
    from misslayer.activations import ReluUnit
    from misslayer.density import MissingPoint, conditional
    from misslayer.verification import _draw, relu_second_moment

    point = MissingPoint(np.zeros(1), np.array([True]))
    cond = conditional(gauss1(0.0), point)
    assert abs(relu_second_moment(ReluUnit(np.ones(1), 0.0), cond, point) - 0.5) < 1e-15
    rng = np.random.default_rng(4)
    gmm = GmmParams(rng.standard_normal(3), rng.standard_normal((3, 4)), 0.5 * rng.standard_normal((3, 4)))
    point = MissingPoint(np.array([0.0, 0.3, 0.0, -1.2]), np.array([True, False, True, False]))
    cond = conditional(gmm, point)
    unit = ReluUnit(rng.standard_normal(4), 0.2)
    a = np.maximum(_draw(cond, point, 400_000, rng) @ unit.w + unit.b, 0.0)
    se = np.std(a * a) / np.sqrt(a.size)
    assert abs(relu_second_moment(unit, cond, point) - np.mean(a * a)) < 4 * se

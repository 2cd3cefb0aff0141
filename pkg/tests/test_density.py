import math

import numpy as np
import pytest

from misslayer.data import DatasetWithMask
from misslayer.density import (
    GmmParams, MissingPoint, conditional, conditional_limits, em_fit, log_component_coeff,
    sample_completion, sample_completions,
)
from misslayer.errors import InvalidArgument
from misslayer.verification import quadrature_responsibilities

from conftest import random_gmm, random_point

# mpmath: x=(1, missing), m=(0,0), variances (4,1), gamma=1
LOG_COEFF_2D = -1.8236574894217229291


def pt(values, mask):
    return MissingPoint(np.asarray(values, float), np.asarray(mask, bool))


def test_log_coeff_standard_normal_at_mean():
    v = log_component_coeff([0.0], [1.0], pt([0.0], [False]), 0.0)
    assert v == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)


def test_log_coeff_all_missing_is_zero():
    assert log_component_coeff([1.0, 2.0], [1.0, 3.0], pt([0, 0], [True, True]), 0.5) == 0.0


def test_log_coeff_frozen_value():
    v = log_component_coeff([0.0, 0.0], [4.0, 1.0], pt([1.0, 0.0], [False, True]), 1.0)
    assert v == pytest.approx(LOG_COEFF_2D, rel=1e-15)


def test_log_coeff_ignores_missing_values():
    a = log_component_coeff([0.3, 1.0], [2.0, 0.5], pt([1.0, 0.0], [False, True]), 0.1)
    b = log_component_coeff([0.3, 1.0], [2.0, 0.5], pt([1.0, 1e300], [False, True]), 0.1)
    assert a == b


def test_log_coeff_rejects_negative_gamma():
    with pytest.raises(InvalidArgument):
        log_component_coeff([0.0], [1.0], pt([0.0], [False]), -1.0)


def test_single_component_resp_is_one(rng):
    gmm = random_gmm(rng, 1, 4)
    for _ in range(5):
        cond = conditional(gmm, random_point(rng, 4))
        assert cond.resp.tolist() == [1.0]


def test_symmetric_components_split_evenly():
    gmm = GmmParams([0.0, 0.0], [[-1.0, 0.0], [1.0, 0.0]], np.zeros((2, 2)), gamma=0.0)
    cond = conditional(gmm, pt([0.0, 0.0], [False, True]))
    assert np.allclose(cond.resp, [0.5, 0.5], atol=1e-15)


def test_conditional_blocks_restrict_to_missing(rng):
    gmm = random_gmm(rng, 3, 5)
    p = pt(rng.standard_normal(5), [True, False, True, False, False])
    cond = conditional(gmm, p)
    assert np.array_equal(cond.means_missing, gmm.means[:, [0, 2]])
    assert np.allclose(cond.vars_missing, gmm.variances[:, [0, 2]])
    cm = cond.completed_means(p)
    assert np.array_equal(cm[:, 1], np.full(3, p.values[1]))


def test_complete_point_gives_degenerate_flag(rng):
    cond = conditional(random_gmm(rng, 2, 3), pt([1, 2, 3], [False] * 3))
    assert cond.complete


def test_resp_is_probability_vector(rng):
    for _ in range(50):
        k, d = int(rng.integers(1, 6)), int(rng.integers(1, 8))
        gmm = random_gmm(rng, k, d, spread=3.0, log_var_scale=1.5)
        cond = conditional(gmm, random_point(rng, d))
        assert np.all(cond.resp >= 0)
        assert abs(cond.resp.sum() - 1.0) < 1e-10


def test_resp_matches_quadrature_2d():
    gmm = GmmParams([0.2, -0.4], [[0.0, 1.0], [1.5, -0.5]], np.log([[1.0, 0.5], [0.3, 2.0]]), gamma=0.0)
    p = pt([0.7, 0.0], [False, True])
    quad = quadrature_responsibilities(gmm, p)
    assert np.max(np.abs(conditional(gmm, p).resp - quad)) < 1e-6


def test_resp_matches_quadrature_3d_two_missing():
    gmm = GmmParams([0.0, 0.5, -0.5], [[0, 1, 0], [2, -1, 1], [-1, 0, 2.0]],
                    np.log([[1, .5, 2], [.4, 1, .7], [2, 2, .3]]), gamma=0.0)
    p = pt([0.0, 0.4, 0.0], [True, False, True])
    quad = quadrature_responsibilities(gmm, p)
    assert np.max(np.abs(conditional(gmm, p).resp - quad)) < 1e-6


def test_marginal_limit_at_large_gamma(rng):
    for _ in range(10):
        gmm = random_gmm(rng, 2, 3)
        cond = conditional_limits(gmm, random_point(rng, 3), [1e12])[0]
        assert np.max(np.abs(cond.resp - gmm.weights)) < 1e-4


def test_gamma_zero_limit_matches_conditional(rng):
    gmm = random_gmm(rng, 3, 4)
    p = random_point(rng, 4)
    lim = conditional_limits(gmm, p, [0.0])[0]
    assert np.array_equal(lim.resp, conditional(gmm, p, gamma=0.0).resp)


def test_gamma_interpolates_between_limits():
    # two Gaussians, second coordinate observed at -1
    gmm = GmmParams([0.0, 0.0], [[0.0, 1.0], [0.0, -2.0]], np.log([[1.0, 0.25], [1.0, 0.25]]), gamma=0.0)
    p = pt([0.0, -1.0], [True, False])
    r0, r1, rinf = (c.resp[0] for c in conditional_limits(gmm, p, [0.0, 1.0, 1e12]))
    assert min(r0, rinf) < r1 < max(r0, rinf)


def test_gamma_limits_reject_unsorted():
    gmm = GmmParams([0.0], [[0.0]], [[0.0]])
    with pytest.raises(InvalidArgument):
        conditional_limits(gmm, pt([0.0], [True]), [1.0, 0.5])


def test_component_permutation_invariance(rng):
    gmm = random_gmm(rng, 4, 3)
    perm = np.array([2, 0, 3, 1])
    other = GmmParams(gmm.logits[perm], gmm.means[perm], gmm.log_vars[perm], gmm.gamma)
    p = random_point(rng, 3)
    assert np.allclose(conditional(gmm, p).resp[perm], conditional(other, p).resp, atol=1e-15)


def test_sample_completion_complete_point_verbatim(rng):
    p = pt([1.5, -2.0], [False, False])
    out = sample_completion(conditional(random_gmm(rng, 2, 2), p), p, 7)
    assert np.array_equal(out, p.values)


def test_sample_completion_collapsing_variance():
    gmm = GmmParams([0.0], [[3.0, -1.0]], [[math.log(1e-14), 0.0]])
    p = pt([0.0, 2.0], [True, False])
    out = sample_completion(conditional(gmm, p), p, 3)
    assert out[1] == 2.0
    assert abs(out[0] - 3.0) < 1e-6


def test_sample_completion_deterministic(rng):
    gmm = random_gmm(rng, 3, 4)
    p = random_point(rng, 4)
    cond = conditional(gmm, p)
    assert np.array_equal(sample_completion(cond, p, 11), sample_completion(cond, p, 11))


def test_sample_mean_matches_mixture_mean(rng):
    gmm = random_gmm(rng, 3, 3)
    p = pt([0.0, 0.5, 0.0], [True, False, True])
    cond = conditional(gmm, p)
    xs = sample_completions(cond, p, 100_000, np.random.default_rng(5))
    expected = cond.resp @ cond.means_missing
    se = xs[:, p.mask].std(axis=0) / math.sqrt(xs.shape[0])
    assert np.all(np.abs(xs[:, p.mask].mean(axis=0) - expected) < 4 * se)
    assert np.all(xs[:, 1] == 0.5)


def test_em_single_component_closed_form(rng):
    x = rng.standard_normal((200, 3)) * [1.0, 2.0, 0.5] + [1.0, -1.0, 3.0]
    gmm = em_fit(x, 1, seed=0)
    assert np.allclose(gmm.means[0], x.mean(axis=0), atol=1e-12)
    assert np.allclose(gmm.variances[0], x.var(axis=0), rtol=1e-10)


def test_em_recovers_separated_clusters(rng):
    centers = np.array([[-5.0, 0.0], [5.0, 3.0]])
    x = np.concatenate([c + 0.5 * rng.standard_normal((300, 2)) for c in centers])
    gmm = em_fit(x, 2, seed=1)
    order = np.argsort(gmm.means[:, 0])
    assert np.max(np.abs(gmm.means[order] - centers)) < 0.1


def test_em_loglik_non_decreasing(rng):
    x = rng.standard_normal((150, 4))
    x[rng.random(x.shape) < 0.2] = np.nan
    _, hist = em_fit(x, 3, seed=2, return_history=True)
    assert np.all(np.diff(hist) >= -1e-9)


def test_em_deterministic(rng):
    x = rng.standard_normal((100, 3))
    a, b = em_fit(x, 3, seed=4), em_fit(x, 3, seed=4)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.log_vars, b.log_vars)


def test_em_accepts_dataset_and_floors_variances():
    x = np.zeros((20, 2))
    x[:, 1] = np.arange(20)
    data = DatasetWithMask(x, np.zeros_like(x, dtype=bool))
    gmm = em_fit(data, 1)
    assert gmm.variances[0, 0] >= 1e-6


def test_em_rejects_too_many_components():
    with pytest.raises(InvalidArgument):
        em_fit(np.zeros((3, 2)), 4)


def test_invalid_gmm_shapes():
    with pytest.raises(InvalidArgument):
        GmmParams([0.0, 0.0], [[0.0]], [[0.0]])


def test_missing_point_rejects_non_finite_observed():
    with pytest.raises(InvalidArgument):
        MissingPoint(np.array([np.nan, 1.0]), np.array([False, False]))
    # NaN at a missing coordinate is fine
    MissingPoint(np.array([np.nan, 1.0]), np.array([True, False]))


def test_gmm_json_round_trip(rng, tmp_path):
    gmm = random_gmm(rng, 3, 4, gamma=0.25)
    gmm.save(tmp_path / "g.json")
    back = GmmParams.load(tmp_path / "g.json")
    assert np.array_equal(back.means, gmm.means)
    assert np.array_equal(back.log_vars, gmm.log_vars)
    assert np.array_equal(back.logits, gmm.logits)
    assert back.gamma == gmm.gamma

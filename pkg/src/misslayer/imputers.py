"""Baseline imputation strategies: mean, k-nn, input dropout, GMM sampling."""
from __future__ import annotations

import numpy as np

from .data import DatasetWithMask
from .density import MissingPoint, conditional, em_fit, sample_completion
from .errors import FitError, InvalidArgument

KINDS = ("mean", "knn", "dropout", "gmm-sample")


def _check_columns(data):
    empty = np.flatnonzero(data.mask.all(axis=0))
    if empty.size:
        raise FitError(f"column {int(empty[0])} has no observed training values")


def _column_means(data):
    obs = ~data.mask
    counts = obs.sum(axis=0)
    sums = np.where(obs, data.values, 0.0).sum(axis=0)
    return np.divide(sums, counts, out=np.zeros(data.d), where=counts > 0)


class Imputer:
    kind = ""

    def fit(self, data):
        raise NotImplementedError

    def transform(self, point, index=0):
        """Completed copy of ``point`` (a MissingPoint)."""
        raise NotImplementedError

    def transform_data(self, data):
        """Complete every row; returns (DatasetWithMask with empty mask, metadata)."""
        out = np.empty_like(data.values)
        self.metadata = {"fallback_rows": []}
        for i in range(data.n):
            out[i] = self.transform(MissingPoint(np.where(data.mask[i], 0.0, data.values[i]),
                                                 data.mask[i]), index=i)
        meta = self.metadata
        done = DatasetWithMask(out, np.zeros_like(data.mask), data.labels, data.norm,
                               list(data.label_names))
        return done, meta


class MeanImputer(Imputer):
    kind = "mean"

    def fit(self, data):
        _check_columns(data)
        self.means = _column_means(data)
        return self

    def transform(self, point, index=0):
        return np.where(point.mask, self.means, point.values)


class KnnImputer(Imputer):
    """Each missing coordinate gets the average over the K nearest training rows
    observed at that coordinate. Distance: squared Euclidean over mutually
    observed features divided by their count. Ties go to the lower row index."""

    kind = "knn"

    def __init__(self, k=5):
        if int(k) < 1:
            raise InvalidArgument("K must be >= 1")
        self.k = int(k)
        self.metadata = {"fallback_rows": []}

    def fit(self, data):
        _check_columns(data)
        self.obs = ~data.mask
        self.train = np.where(self.obs, data.values, 0.0)
        self.means = _column_means(data)
        return self

    def distances(self, point):
        """Normalized distance to every training row (inf where nothing is shared)."""
        q_obs = ~point.mask
        shared = self.obs & q_obs[None, :]
        count = shared.sum(axis=1)
        diff = np.where(shared, self.train - np.where(q_obs, point.values, 0.0)[None, :], 0.0)
        sq = np.sum(diff * diff, axis=1)
        return np.where(count > 0, sq / np.maximum(count, 1), np.inf)

    def transform(self, point, index=0):
        if point.complete:
            return point.values.copy()
        dist = self.distances(point)
        out = point.values.copy()
        fell_back = False
        for j in point.missing:
            cand = np.flatnonzero(self.obs[:, j] & np.isfinite(dist))
            if cand.size == 0:
                out[j] = self.means[j]
                fell_back = True
                continue
            order = cand[np.argsort(dist[cand], kind="stable")][: self.k]
            out[j] = self.train[order, j].mean()
        if fell_back:
            self.metadata["fallback_rows"].append(int(index))
        return out


class DropoutImputer(Imputer):
    """Missing inputs set to 0, observed inputs of incomplete rows divided by (1 - rate).

    The default rate is the missing fraction of the training set.
    """

    kind = "dropout"

    def __init__(self, rate=None):
        if rate is not None and not 0.0 <= rate < 1.0:
            raise InvalidArgument("dropout rate must lie in [0, 1)")
        self.rate = rate

    def fit(self, data):
        if self.rate is None:
            self.rate = min(data.missing_fraction(), 1.0 - 1e-12) if data.mask.size else 0.0
        return self

    def transform(self, point, index=0):
        if point.complete:
            return point.values.copy()
        return np.where(point.mask, 0.0, point.values / (1.0 - self.rate))


class GmmSampleImputer(Imputer):
    """Draws missing values from the exact conditional of an EM-fitted mixture."""

    kind = "gmm-sample"

    def __init__(self, n_components=3, seed=0, gmm=None):
        self.n_components = int(n_components)
        self.seed = int(seed)
        self.gmm = gmm

    def fit(self, data):
        _check_columns(data)
        if self.gmm is None:
            self.gmm = em_fit(data, min(self.n_components, data.n), seed=self.seed)
        self.gmm = self.gmm.with_gamma(0.0)
        return self

    def transform(self, point, index=0):
        if point.complete:
            return point.values.copy()
        cond = conditional(self.gmm, point, gamma=0.0)
        return sample_completion(cond, point, np.random.SeedSequence([self.seed, int(index)]))


def make(kind, **opts):
    if kind == "mean":
        return MeanImputer()
    if kind == "knn":
        return KnnImputer(opts.get("k", 5))
    if kind == "dropout":
        return DropoutImputer(opts.get("rate"))
    if kind == "gmm-sample":
        return GmmSampleImputer(opts.get("n_components", 3), opts.get("seed", 0), opts.get("gmm"))
    raise InvalidArgument(f"unknown imputer {kind!r}")


def fit(kind, train_data, **opts):
    return make(kind, **opts).fit(train_data)


def transform(imputer, point, index=0):
    return imputer.transform(point, index)


__all__ = ["KINDS", "Imputer", "MeanImputer", "KnnImputer", "DropoutImputer",
           "GmmSampleImputer", "make", "fit", "transform"]

"""Diagonal Gaussian mixture density for missing data and its regularized
conditional on the affine subspace of an incomplete point."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FitError, InvalidArgument

VAR_FLOOR = 1e-6
LOG_VAR_FLOOR = float(np.log(VAR_FLOOR))
DEFAULT_GAMMA = 1e-6
LOG_2PI = 1.8378770664093453


def logsumexp(a, axis=-1):
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def softmax(a, axis=-1):
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(a - np.max(a, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class GmmParams:
    """Mixture in the unconstrained training parameterization.

    ``weights`` and ``variances`` give the constrained view.
    """

    logits: np.ndarray
    means: np.ndarray
    log_vars: np.ndarray
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=np.float64).reshape(-1)
        self.means = np.array(self.means, dtype=np.float64)
        self.log_vars = np.array(self.log_vars, dtype=np.float64)
        self.gamma = float(self.gamma)
        self.validate()

    def validate(self):
        k = self.logits.shape[0]
        if k < 1 or self.means.ndim != 2 or self.means.shape[1] < 1:
            raise InvalidArgument("need k >= 1 components over D >= 1 dimensions")
        if self.means.shape[0] != k or self.log_vars.shape != self.means.shape:
            raise InvalidArgument(
                f"inconsistent shapes: logits {self.logits.shape}, means {self.means.shape}, "
                f"log_vars {self.log_vars.shape}")
        if not (np.all(np.isfinite(self.logits)) and np.all(np.isfinite(self.means))
                and np.all(np.isfinite(self.log_vars))):
            raise InvalidArgument("mixture parameters must be finite")
        if not np.all(np.isfinite(np.exp(self.log_vars))):
            raise InvalidArgument("variances overflow")
        if not (self.gamma >= 0 and np.isfinite(self.gamma)):
            raise InvalidArgument("gamma must be finite and >= 0")

    @classmethod
    def from_constrained(cls, weights, means, variances, gamma=DEFAULT_GAMMA):
        weights = np.asarray(weights, dtype=np.float64)
        if np.any(weights <= 0):
            raise InvalidArgument("mixture weights must be positive")
        variances = np.asarray(variances, dtype=np.float64)
        if np.any(variances <= 0):
            raise InvalidArgument("variances must be positive")
        return cls(np.log(weights / weights.sum()), means, np.log(variances), gamma)

    @property
    def k(self):
        return self.logits.shape[0]

    @property
    def d(self):
        return self.means.shape[1]

    @property
    def weights(self):
        return softmax(self.logits)

    @property
    def log_weights(self):
        return self.logits - logsumexp(self.logits)

    @property
    def variances(self):
        return np.exp(self.log_vars)

    def floor_variances(self, floor=VAR_FLOOR):
        np.maximum(self.log_vars, np.log(floor), out=self.log_vars)

    def copy(self):
        return GmmParams(self.logits.copy(), self.means.copy(), self.log_vars.copy(), self.gamma)

    def with_gamma(self, gamma):
        return GmmParams(self.logits, self.means, self.log_vars, gamma)

    def to_dict(self):
        return {
            "k": self.k,
            "d": self.d,
            "gamma": self.gamma,
            "logits": self.logits.tolist(),
            "means": self.means.tolist(),
            "log_vars": self.log_vars.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            gmm = cls(doc["logits"], doc["means"], doc["log_vars"], doc["gamma"])
        except KeyError as exc:
            raise InvalidArgument(f"GMM document lacks field {exc}") from None
        if doc.get("k", gmm.k) != gmm.k or doc.get("d", gmm.d) != gmm.d:
            raise InvalidArgument("GMM document k/d disagree with its arrays")
        return gmm

    def to_json(self):
        # json emits repr() floats, which round-trip IEEE doubles exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


@dataclass
class MissingPoint:
    """Observed values plus a boolean mask (True = missing)."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64).reshape(-1)
        self.mask = np.array(self.mask, dtype=bool).reshape(-1)
        if self.values.shape != self.mask.shape:
            raise InvalidArgument("mask length must equal values length")
        if not np.all(np.isfinite(self.values[~self.mask])):
            raise InvalidArgument("observed entries must be finite")

    @classmethod
    def from_nan(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.isnan(values))

    @property
    def d(self):
        return self.values.shape[0]

    @property
    def missing(self):
        return np.flatnonzero(self.mask)

    @property
    def observed(self):
        return np.flatnonzero(~self.mask)

    @property
    def complete(self):
        return not self.mask.any()

    def filled(self, fill=0.0):
        return np.where(self.mask, fill, self.values)


@dataclass
class ConditionalGmm:
    """Degenerate mixture supported on the subspace of a missing point."""

    resp: np.ndarray
    means_missing: np.ndarray
    vars_missing: np.ndarray
    mask: np.ndarray
    log_norm: float = 0.0
    log_resp: np.ndarray | None = field(default=None, repr=False)

    @property
    def complete(self):
        """Degenerate-complete: nothing missing, no mixture data."""
        return not np.any(self.mask)

    @property
    def k(self):
        return self.resp.shape[0]

    def completed_means(self, point):
        """k x D means with observed coordinates taken from the point."""
        out = np.tile(point.filled(), (self.k, 1))
        out[:, self.mask] = self.means_missing
        return out

    def full_variances(self):
        out = np.zeros((self.k, self.mask.shape[0]))
        out[:, self.mask] = self.vars_missing
        return out


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidArgument("non-finite input")


def log_component_coeff(mean_i, var_i, point, gamma):
    """log C^gamma for one diagonal component over the observed coordinates."""
    mean_i = np.asarray(mean_i, dtype=np.float64)
    var_i = np.asarray(var_i, dtype=np.float64)
    gamma = float(gamma)
    if gamma < 0:
        raise InvalidArgument("gamma must be >= 0")
    obs = ~point.mask
    _check_finite(mean_i, var_i, np.array([gamma]), point.values[obs])
    if not obs.any():
        return 0.0
    v = var_i[obs] + gamma
    d = mean_i[obs] - point.values[obs]
    return float(np.sum(-0.5 * (LOG_2PI + np.log(v)) - 0.5 * d * d / v))


def log_responsibilities(gmm, x, miss, gamma=None):
    """Batched log r_i and log normalizing mass for rows of ``x``.

    Returns (log_resp (B, k), log_norm (B,)).
    """
    gamma = gmm.gamma if gamma is None else float(gamma)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    miss = np.atleast_2d(np.asarray(miss, dtype=bool))
    lc = kernels.log_coeffs(x, miss.view(np.uint8), gmm.means, gmm.variances, gamma)
    lq = gmm.log_weights[None, :] + lc
    norm = logsumexp(lq, axis=1)
    if not np.all(np.isfinite(norm)):
        raise RuntimeError("all component masses vanished")
    return lq - norm[:, None], norm


def conditional(gmm, point, gamma=None):
    """Regularized conditional mixture F^gamma_S for one incomplete point."""
    if point.d != gmm.d:
        raise InvalidArgument(f"point has {point.d} coordinates, density has {gmm.d}")
    mask = point.mask.copy()
    if not mask.any():
        empty = np.zeros(0)
        return ConditionalGmm(empty, np.zeros((0, 0)), np.zeros((0, 0)), mask, 0.0, empty)
    log_r, norm = log_responsibilities(gmm, point.values[None, :], mask[None, :], gamma)
    return ConditionalGmm(
        resp=np.exp(log_r[0]),
        means_missing=gmm.means[:, mask].copy(),
        vars_missing=gmm.variances[:, mask],
        mask=mask,
        log_norm=float(norm[0]),
        log_resp=log_r[0],
    )


def conditional_limits(gmm, point, gammas):
    gammas = [float(g) for g in gammas]
    if any(g < 0 for g in gammas):
        raise InvalidArgument("gammas must be >= 0")
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise InvalidArgument("gammas must be sorted ascending")
    return [conditional(gmm, point, g) for g in gammas]


def sample_completions(cond, point, n, rng):
    """Draw ``n`` completions of ``point`` from ``cond``: (n, D)."""
    out = np.tile(point.filled(), (n, 1))
    if cond.complete:
        return out
    comp = rng.choice(cond.k, size=n, p=cond.resp / cond.resp.sum())
    noise = rng.standard_normal((n, cond.means_missing.shape[1]))
    out[:, cond.mask] = cond.means_missing[comp] + np.sqrt(cond.vars_missing[comp]) * noise
    return out


def sample_completion(cond, point, rng_seed):
    if cond.complete:
        return point.values.copy()
    rng = np.random.default_rng(rng_seed)
    return sample_completions(cond, point, 1, rng)[0]


def _as_arrays(data, mask=None):
    if hasattr(data, "values") and hasattr(data, "mask"):
        return np.asarray(data.values, dtype=np.float64), np.asarray(data.mask, dtype=bool)
    x = np.asarray(data, dtype=np.float64)
    if mask is None:
        mask = np.isnan(x)
    return x, np.asarray(mask, dtype=bool)


def mean_impute(x, mask):
    obs = ~mask
    counts = obs.sum(axis=0)
    sums = np.where(obs, x, 0.0).sum(axis=0)
    means = np.divide(sums, counts, out=np.zeros(x.shape[1]), where=counts > 0)
    return np.where(mask, means[None, :], x)


def diag_log_prob(x, means, variances):
    """log N(x; m_i, diag(v_i)) for every row and component: (N, k)."""
    lv = np.log(variances)
    iv = 1.0 / variances
    quad = (x * x) @ iv.T - 2.0 * x @ (means * iv).T + np.sum(means * means * iv, axis=1)
    return -0.5 * (x.shape[1] * LOG_2PI + lv.sum(axis=1)[None, :] + quad)


def em_fit(data, k, seed=0, max_iter=200, tol=1e-8, mask=None, gamma=DEFAULT_GAMMA,
           floor=VAR_FLOOR, return_history=False):
    """Diagonal GMM fitted by EM on mean-imputed data.

    ``data`` is a DatasetWithMask or an array (NaN = missing unless ``mask``
    is given).
    """
    x, miss = _as_arrays(data, mask)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidArgument("em_fit needs a non-empty 2-D data matrix")
    n, d = x.shape
    if k < 1 or k > n:
        raise InvalidArgument(f"need 1 <= k <= rows ({n}), got k={k}")
    x = mean_impute(x, miss)
    if not np.all(np.isfinite(x)):
        raise FitError("data contains non-finite observed values")

    rng = np.random.default_rng(seed)
    means = x[rng.choice(n, size=k, replace=False)].copy()
    variances = np.tile(np.maximum(x.var(axis=0), floor), (k, 1))
    weights = np.full(k, 1.0 / k)
    history = []

    for _ in range(max_iter):
        lp = diag_log_prob(x, means, variances) + np.log(weights)[None, :]
        norm = logsumexp(lp, axis=1)
        ll = float(norm.sum())
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * max(1.0, abs(ll)):
            break
        r = np.exp(lp - norm[:, None])
        nk = r.sum(axis=0)
        alive = nk > 1e-10
        weights = np.where(alive, nk / n, weights)
        safe = np.where(alive, nk, 1.0)[:, None]
        new_means = (r.T @ x) / safe
        new_vars = np.stack([r[:, i] @ (x - new_means[i]) ** 2 for i in range(k)]) / safe
        means = np.where(alive[:, None], new_means, means)
        variances = np.where(alive[:, None], np.maximum(new_vars, floor), variances)
        weights = weights / weights.sum()

    gmm = GmmParams(np.log(weights), means, np.log(variances), gamma)
    if return_history:
        return gmm, history
    return gmm

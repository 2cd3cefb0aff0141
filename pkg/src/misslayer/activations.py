"""Expected ReLU / RBF activations over (degenerate) diagonal Gaussian mixtures.

Two levels:

* per-point functions (``relu_expected`` and friends) taking a
  ``ConditionalGmm``, used for checks and inspection;
* batched layer functions (``relu_layer_forward``/``_backward`` and the RBF
  pair) that go from mixture parameters to activations and back, including
  gradients into the mixture through the responsibilities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .density import ConditionalGmm, GmmParams, MissingPoint, conditional, log_responsibilities
from .errors import InvalidArgument

EPS_VAR = 1e-12


def _scalar_or_array(fn, w):
    w = np.asarray(w, dtype=np.float64)
    out = fn(w)
    return float(np.reshape(out, -1)[0]) if w.ndim == 0 else out


def nr(w):
    """E[max(z, 0)] for z ~ N(w, 1)."""
    return _scalar_or_array(kernels.nr, w)


def nr_deriv(w):
    """dNR/dw, which is the standard normal CDF."""
    return _scalar_or_array(kernels.norm_cdf, w)


@dataclass
class ReluUnit:
    w: np.ndarray
    b: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        self.b = float(self.b)
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b)):
            raise InvalidArgument("ReLU unit parameters must be finite")


@dataclass
class RbfUnit:
    c: np.ndarray
    log_gamma_diag: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        self.log_gamma_diag = np.asarray(self.log_gamma_diag, dtype=np.float64).reshape(-1)
        if self.c.shape != self.log_gamma_diag.shape:
            raise InvalidArgument("center and width shapes differ")
        if not np.all(np.isfinite(self.c)) or not np.all(np.isfinite(np.exp(self.log_gamma_diag))):
            raise InvalidArgument("RBF unit parameters must be finite")

    @property
    def widths(self):
        return np.exp(self.log_gamma_diag)


@dataclass
class ActivationGradients:
    """Gradients of one expected activation.

    ``d_unit`` maps parameter name to gradient; the mixture blocks are k x D
    with zero columns at observed coordinates.
    """

    d_unit: dict
    d_resp: np.ndarray
    d_means: np.ndarray
    d_vars: np.ndarray


def _check(unit_dim, cond, point):
    if unit_dim != point.d:
        raise InvalidArgument(f"unit expects {unit_dim} inputs, point has {point.d}")
    if cond.mask.shape != point.mask.shape or np.any(cond.mask != point.mask):
        raise InvalidArgument("conditional density does not belong to this point")
    if not cond.complete and cond.means_missing.shape != (cond.k, int(point.mask.sum())):
        raise InvalidArgument("conditional mixture blocks have the wrong shape")


def _relu_components(unit, cond, point):
    w, mask = unit.w, point.mask
    base = float(w[~mask] @ point.values[~mask]) + unit.b
    mu = base + cond.means_missing @ w[mask]
    s2 = cond.vars_missing @ (w[mask] ** 2)
    return mu, s2


def relu_expected(unit, cond, point):
    """E[max(w.x + b, 0)] for x drawn from the conditional mixture."""
    _check(unit.w.shape[0], cond, point)
    if cond.complete:
        return max(float(unit.w @ point.values) + unit.b, 0.0)
    mu, s2 = _relu_components(unit, cond, point)
    g, _, _ = kernels.relu_terms(mu, s2, EPS_VAR)
    return float(cond.resp @ g)


def relu_expected_grad(unit, cond, point):
    _check(unit.w.shape[0], cond, point)
    d = point.d
    if cond.complete:
        z = float(unit.w @ point.values) + unit.b
        on = 1.0 if z > 0 else 0.0
        grads = ActivationGradients(
            {"w": on * point.values.copy(), "b": on}, np.zeros(0), np.zeros((0, d)), np.zeros((0, d)))
        return max(z, 0.0), grads
    mask = point.mask
    mu, s2 = _relu_components(unit, cond, point)
    g, dmu, ds2 = kernels.relu_terms(mu, s2, EPS_VAR)
    r = cond.resp
    m_full = cond.completed_means(point)
    v_full = cond.full_variances()
    dw = (r * dmu) @ m_full + 2.0 * unit.w * ((r * ds2) @ v_full)
    d_means = np.zeros((cond.k, d))
    d_vars = np.zeros((cond.k, d))
    d_means[:, mask] = np.outer(r * dmu, unit.w[mask])
    d_vars[:, mask] = np.outer(r * ds2, unit.w[mask] ** 2)
    grads = ActivationGradients({"w": dw, "b": float(r @ dmu)}, g.copy(), d_means, d_vars)
    return float(r @ g), grads


def _rbf_log_h(unit, cond, point):
    d = point.d
    if cond.complete:
        means, variances, miss = np.zeros((1, d)), np.ones((1, d)), np.zeros((1, d), np.uint8)
    else:
        means = np.zeros((cond.k, d))
        means[:, point.mask] = cond.means_missing
        variances = np.ones((cond.k, d))
        variances[:, point.mask] = cond.vars_missing
        miss = point.mask[None, :].astype(np.uint8)
    x = point.filled()[None, :]
    centers, widths = unit.c[None, :], unit.widths[None, :]
    args = (x, miss, means, variances, centers, widths)
    return kernels.rbf_log_terms(*args)[0, :, 0], args


def rbf_expected(unit, cond, point):
    """E[N(c, Gamma)(x)] for x drawn from the conditional mixture."""
    _check(unit.c.shape[0], cond, point)
    log_h, _ = _rbf_log_h(unit, cond, point)
    if cond.complete:
        return float(np.exp(log_h[0]))
    return float(cond.resp @ np.exp(log_h))


def rbf_expected_grad(unit, cond, point):
    _check(unit.c.shape[0], cond, point)
    log_h, args = _rbf_log_h(unit, cond, point)
    h = np.exp(log_h)
    r = np.ones(1) if cond.complete else cond.resp
    e = (r * h)[None, :, None]
    dmeans, dvars, dcenters, dwidths = kernels.rbf_log_terms_grad(*args, e)
    d_unit = {"c": dcenters[0], "log_gamma_diag": dwidths[0] * unit.widths}
    value = float(r @ h)
    if cond.complete:
        d = point.d
        return value, ActivationGradients(d_unit, np.zeros(0), np.zeros((0, d)), np.zeros((0, d)))
    return value, ActivationGradients(d_unit, h.copy(), dmeans, dvars)


# ----------------------------------------------------------------------------
# batched layers over incomplete rows


@dataclass
class _Cache:
    x: np.ndarray
    miss: np.ndarray
    gmm: GmmParams
    resp: np.ndarray
    out: dict


def _density_grads(cache, dr):
    """Backpropagate dL/dr (B, k) into the mixture parameters."""
    gmm, r = cache.gmm, cache.resp
    dlogq = r * (dr - np.sum(r * dr, axis=1, keepdims=True))
    p = gmm.weights
    dlogits = dlogq.sum(axis=0) - p * dlogq.sum()
    dmeans, dvars = kernels.log_coeffs_grad(
        cache.x, cache.miss.view(np.uint8), gmm.means, gmm.variances, gmm.gamma, dlogq)
    return dlogits, dmeans, dvars


def _completed(x, miss, gmm):
    return kernels.completed(x, miss.view(np.uint8), gmm.means, gmm.variances)


def relu_layer_forward(W, b, gmm, x, miss):
    """Expected ReLU activations (B, t) for incomplete rows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    miss = np.asarray(miss, dtype=bool)
    B, D = x.shape
    k, t = gmm.k, W.shape[1]
    log_r, _ = log_responsibilities(gmm, x, miss)
    r = np.exp(log_r)
    mt, vt = _completed(x, miss, gmm)
    W2 = W * W
    mu = (mt.reshape(B * k, D) @ W).reshape(B, k, t)
    mu += b
    s2 = (vt.reshape(B * k, D) @ W2).reshape(B, k, t)
    g, dmu, ds2 = kernels.relu_terms(mu, s2, EPS_VAR)
    a = np.einsum("bk,bkt->bt", r, g)
    return a, _Cache(x, miss, gmm, r, {"W": W, "W2": W2, "mt": mt, "vt": vt,
                                       "g": g, "dmu": dmu, "ds2": ds2})


def relu_layer_backward(cache, G):
    """Gradients of sum(G * a) for the output of ``relu_layer_forward``."""
    c = cache.out
    W, W2, mt, vt = c["W"], c["W2"], c["mt"], c["vt"]
    B, k, D = mt.shape
    t = W.shape[1]
    r = cache.resp
    dr = np.einsum("bt,bkt->bk", G, c["g"])
    rg = G[:, None, :] * r[:, :, None]
    Dmu = (rg * c["dmu"]).reshape(B * k, t)
    Ds2 = (rg * c["ds2"]).reshape(B * k, t)
    dW = mt.reshape(B * k, D).T @ Dmu + 2.0 * W * (vt.reshape(B * k, D).T @ Ds2)
    db = Dmu.sum(axis=0)
    m3 = cache.miss[:, None, :]
    dmeans = np.where(m3, (Dmu @ W.T).reshape(B, k, D), 0.0).sum(axis=0)
    dvars = np.where(m3, (Ds2 @ W2.T).reshape(B, k, D), 0.0).sum(axis=0)
    dlogits, dm_c, dv_c = _density_grads(cache, dr)
    variances = cache.gmm.variances
    return {"W": dW, "b": db}, {
        "logits": dlogits,
        "means": dmeans + dm_c,
        "log_vars": (dvars + dv_c) * variances,
    }


def rbf_layer_forward(centers, log_widths, gmm, x, miss):
    """Expected RBF activations (B, t) for incomplete rows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    miss = np.asarray(miss, dtype=bool)
    log_r, _ = log_responsibilities(gmm, x, miss)
    r = np.exp(log_r)
    widths = np.exp(log_widths)
    xf = np.where(miss, 0.0, x)
    log_h = kernels.rbf_log_terms(xf, miss.view(np.uint8), gmm.means, gmm.variances,
                                  centers, widths)
    h = np.exp(log_h)
    a = np.einsum("bk,bkt->bt", r, h)
    return a, _Cache(xf, miss, gmm, r, {"centers": centers, "widths": widths, "h": h})


def rbf_layer_backward(cache, G):
    c = cache.out
    r, h = cache.resp, c["h"]
    gmm = cache.gmm
    dr = np.einsum("bt,bkt->bk", G, h)
    e = G[:, None, :] * r[:, :, None] * h
    dmeans, dvars, dcenters, dwidths = kernels.rbf_log_terms_grad(
        cache.x, cache.miss.view(np.uint8), gmm.means, gmm.variances, c["centers"], c["widths"], e)
    dlogits, dm_c, dv_c = _density_grads(cache, dr)
    return {"centers": dcenters, "log_widths": dwidths * c["widths"]}, {
        "logits": dlogits,
        "means": dmeans + dm_c,
        "log_vars": (dvars + dv_c) * gmm.variances,
    }


def rbf_classical_forward(centers, log_widths, x):
    """N(c_u, Gamma_u)(x) for complete rows: (B, t)."""
    x = np.asarray(x, dtype=np.float64)
    B, D = x.shape
    widths = np.exp(log_widths)
    dummy = np.zeros((1, D))
    log_h = kernels.rbf_log_terms(x, np.zeros((B, D), np.uint8), dummy, np.ones((1, D)),
                                  centers, widths)[:, 0, :]
    h = np.exp(log_h)
    return h, {"x": x, "centers": centers, "widths": widths, "h": h}


def rbf_classical_backward(cache, G):
    x = cache["x"]
    B, D = x.shape
    e = (G * cache["h"])[:, None, :]
    _, _, dcenters, dwidths = kernels.rbf_log_terms_grad(
        x, np.zeros((B, D), np.uint8), np.zeros((1, D)), np.ones((1, D)),
        cache["centers"], cache["widths"], e)
    return {"centers": dcenters, "log_widths": dwidths * cache["widths"]}


def expected_with_density_grad(unit, gmm, point):
    """Expected activation of one unit plus gradients w.r.t. the unit and the
    mixture parameters (through the conditional)."""
    if point.d != gmm.d:
        raise InvalidArgument("point and density dimensions differ")
    x, miss = point.values[None, :], point.mask[None, :]
    G = np.ones((1, 1))
    if point.complete:
        cond = conditional(gmm, point)
        fn = relu_expected_grad if isinstance(unit, ReluUnit) else rbf_expected_grad
        value, grads = fn(unit, cond, point)
        zero = {"logits": np.zeros(gmm.k), "means": np.zeros_like(gmm.means),
                "log_vars": np.zeros_like(gmm.log_vars)}
        return value, grads.d_unit, zero
    if isinstance(unit, ReluUnit):
        a, cache = relu_layer_forward(unit.w[:, None], np.array([unit.b]), gmm, x, miss)
        du, dg = relu_layer_backward(cache, G)
        return float(a[0, 0]), {"w": du["W"][:, 0], "b": float(du["b"][0])}, dg
    a, cache = rbf_layer_forward(unit.c[None, :], unit.log_gamma_diag[None, :], gmm, x, miss)
    du, dg = rbf_layer_backward(cache, G)
    return float(a[0, 0]), {"c": du["centers"][0], "log_gamma_diag": du["log_widths"][0]}, dg


__all__ = [
    "EPS_VAR", "nr", "nr_deriv", "ReluUnit", "RbfUnit", "ActivationGradients",
    "relu_expected", "relu_expected_grad", "rbf_expected", "rbf_expected_grad",
    "relu_layer_forward", "relu_layer_backward", "rbf_layer_forward", "rbf_layer_backward",
    "rbf_classical_forward", "rbf_classical_backward", "expected_with_density_grad",
    "ConditionalGmm", "MissingPoint",
]

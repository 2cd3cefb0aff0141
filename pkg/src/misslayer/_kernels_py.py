"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the identical signature in the compiled
``_kernels`` extension. ``misslayer.kernels`` picks one at import time.

Arrays are float64; ``miss`` arrays are uint8/bool with 1 = missing. Values of
``x`` at missing coordinates are never used (they may be NaN).
"""
import numpy as np

SQRT2 = 1.4142135623730951
INV_SQRT_2PI = 0.3989422804014327
LOG_2PI = 1.8378770664093453

# erf / erfc: rational approximations on five intervals (fdlibm s_erf.c).
_ERX = 8.45062911510467529297e-01
_EFX = 1.28379167095512586316e-01
_PP = (1.28379167095512558561e-01, -3.25042107247001499370e-01,
       -2.84817495755985104766e-02, -5.77027029648944159157e-03,
       -2.37630166566501626084e-05)
_QQ = (1.0, 3.97917223959155352819e-01, 6.50222499887672944485e-02,
       5.08130628187576562776e-03, 1.32494738004321644526e-04,
       -3.96022827877536812320e-06)
_PA = (-2.36211856075265944077e-03, 4.14856118683748331666e-01,
       -3.72207876035701323847e-01, 3.18346619901161753674e-01,
       -1.10894694282396677476e-01, 3.54783043256182359371e-02,
       -2.16637559486879084300e-03)
_QA = (1.0, 1.06420880400844228286e-01, 5.40397917702171048937e-01,
       7.18286544141962662868e-02, 1.26171219808761642112e-01,
       1.36370839120290507362e-02, 1.19844998467991074170e-02)
_RA = (-9.86494403484714822705e-03, -6.93858572707181764372e-01,
       -1.05586262253232909814e01, -6.23753324503260060396e01,
       -1.62396669462573470355e02, -1.84605092906711035994e02,
       -8.12874355063065934246e01, -9.81432934416914548592e00)
_SA = (1.0, 1.96512716674392571292e01, 1.37657754143519042600e02,
       4.34565877475229228821e02, 6.45387271733267880336e02,
       4.29008140027567833386e02, 1.08635005541779435134e02,
       6.57024977031928170135e00, -6.04244152148580987438e-02)
_RB = (-9.86494292470009928597e-03, -7.99283237680523006574e-01,
       -1.77579549177547519889e01, -1.60636384855821916062e02,
       -6.37566443368389627722e02, -1.02509513161107724954e03,
       -4.83519191608651397019e02)
_SB = (1.0, 3.03380607434824582924e01, 3.25792512996573918826e02,
       1.53672958608443695994e03, 3.19985821950859553908e03,
       2.55305040643316442583e03, 4.74528541206955367215e02,
       -2.24409524465858183362e01)


def _poly(coef, z):
    out = np.full_like(z, coef[-1])
    for c in coef[-2::-1]:
        out = out * z + c
    return out


def _tail(a):
    # erfc(a) for 1.25 <= a < 28; z keeps 24 mantissa bits so z*z is exact
    s = 1.0 / (a * a)
    near = a < 1.0 / 0.35
    ratio = np.where(near, _poly(_RA, s) / _poly(_SA, s), _poly(_RB, s) / _poly(_SB, s))
    z = a.astype(np.float32).astype(np.float64)
    return np.exp(-z * z - 0.5625) * np.exp((z - a) * (z + a) + ratio) / a


def _pieces(x):
    a = np.abs(x)
    small = a < 0.84375
    mid = (a >= 0.84375) & (a < 1.25)
    big = (a >= 1.25) & (a < 28.0)
    z = x * x
    # inf/nan lanes produce junk here that the selects below discard
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        y_small = np.where(a < 2.0 ** -28, _EFX, _poly(_PP, z) / _poly(_QQ, z))
        pq_mid = _poly(_PA, a - 1.0) / _poly(_QA, a - 1.0)
        tail = _tail(np.where(big, a, 2.0))
    return a, small, mid, big, y_small, pq_mid, tail


def erf(x):
    x = np.asarray(x, dtype=np.float64)
    a, small, mid, big, y_small, pq_mid, tail = _pieces(x)
    sign = np.where(x < 0, -1.0, 1.0)
    out = sign * np.ones_like(x)
    out = np.where(big, sign * (1.0 - tail), out)
    out = np.where(mid, sign * (_ERX + pq_mid), out)
    out = np.where(small, x + x * y_small, out)
    return np.where(np.isnan(x), np.nan, out)


def erfc(x):
    x = np.asarray(x, dtype=np.float64)
    a, small, mid, big, y_small, pq_mid, tail = _pieces(x)
    neg = x < 0
    out = np.where(neg, 2.0, 0.0)
    out = np.where(big, np.where(neg, 2.0 - tail, tail), out)
    out = np.where(mid, np.where(neg, 1.0 + _ERX + pq_mid, 1.0 - _ERX - pq_mid), out)
    r = x * y_small
    small_val = np.where(x < 0.25, 1.0 - (x + r), 0.5 - (x - 0.5 + r))
    out = np.where(small, small_val, out)
    return np.where(np.isnan(x), np.nan, out)


def norm_cdf(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * erfc(-x / SQRT2)


def norm_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return INV_SQRT_2PI * np.exp(-0.5 * x * x)


def nr(x):
    """Expected ReLU of N(x, 1)."""
    x = np.asarray(x, dtype=np.float64)
    return norm_pdf(x) + x * norm_cdf(x)


def relu_terms(mu, s2, eps):
    """Elementwise s*NR(mu/s) with derivatives w.r.t. mu and s2.

    Entries with s2 < eps fall back to max(mu, 0) and its subgradient
    (0 at the kink).
    """
    mu = np.asarray(mu, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    degen = s2 < eps
    s = np.sqrt(np.where(degen, 1.0, s2))
    z = mu / s
    pdf = norm_pdf(z)
    cdf = norm_cdf(z)
    g = np.where(degen, np.maximum(mu, 0.0), s * (pdf + z * cdf))
    dmu = np.where(degen, (mu > 0).astype(np.float64), cdf)
    ds2 = np.where(degen, 0.0, pdf / (2.0 * s))
    return g, dmu, ds2


def log_coeffs(x, miss, means, variances, gamma):
    """log C^gamma_i for every point (rows of x) and component: (B, k)."""
    obs = ~np.asarray(miss, dtype=bool)
    xf = np.where(obs, x, 0.0)
    v = variances[None, :, :] + gamma
    d = means[None, :, :] - xf[:, None, :]
    terms = -0.5 * (LOG_2PI + np.log(v)) - 0.5 * d * d / v
    return np.einsum("bkd,bd->bk", terms, obs.astype(np.float64))


def completed(x, miss, means, variances):
    """Per-component completed means and variances: two (B, k, D) arrays."""
    m3 = np.asarray(miss, dtype=bool)[:, None, :]
    mt = np.where(m3, means[None, :, :], np.asarray(x, dtype=np.float64)[:, None, :])
    vt = np.where(m3, variances[None, :, :], 0.0)
    return mt, vt


def log_coeffs_grad(x, miss, means, variances, gamma, g):
    """Gradients of sum(g * log_coeffs) w.r.t. means and variances."""
    obs = ~np.asarray(miss, dtype=bool)
    obsf = obs.astype(np.float64)
    xf = np.where(obs, x, 0.0)
    v = variances[None, :, :] + gamma
    d = means[None, :, :] - xf[:, None, :]
    w = g[:, :, None] * obsf[:, None, :]
    dmeans = np.sum(w * (-d / v), axis=0)
    dvars = np.sum(w * (-0.5 / v + 0.5 * d * d / (v * v)), axis=0)
    return dmeans, dvars


def _rbf_parts(x, miss, means, variances, centers, widths):
    m = np.asarray(miss, dtype=bool)[:, None, :]
    mt = np.where(m, means[None, :, :], x[:, None, :])
    vt = np.where(m, variances[None, :, :], 0.0)
    v = vt[:, :, None, :] + widths[None, None, :, :]
    d = mt[:, :, None, :] - centers[None, None, :, :]
    return v, d


def rbf_log_terms(x, miss, means, variances, centers, widths):
    """log N(m_i - c_u, Gamma_u + Sigma_i)(0) for completed means: (B, k, t)."""
    v, d = _rbf_parts(x, miss, means, variances, centers, widths)
    return np.sum(-0.5 * (LOG_2PI + np.log(v)) - 0.5 * d * d / v, axis=3)


def rbf_log_terms_grad(x, miss, means, variances, centers, widths, e):
    """Gradients of sum(e * rbf_log_terms) w.r.t. means, variances, centers, widths."""
    v, d = _rbf_parts(x, miss, means, variances, centers, widths)
    mf = np.asarray(miss, dtype=np.float64)
    ee = e[:, :, :, None]
    dv = ee * (-0.5 / v + 0.5 * d * d / (v * v))
    dd = ee * (-d / v)
    dmeans = np.einsum("bktd,bd->kd", dd, mf)
    dvars = np.einsum("bktd,bd->kd", dv, mf)
    dcenters = -np.sum(dd, axis=(0, 1))
    dwidths = np.sum(dv, axis=(0, 1))
    return dmeans, dvars, dcenters, dwidths

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``.

Same signatures and semantics; loops are fused so no (B, k, t, D)
temporaries are materialised.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, isnan, NAN
from libc.string cimport memcpy
from libc.stdint cimport uint64_t

cnp.import_array()

cdef double SQRT2 = 1.4142135623730951
cdef double INV_SQRT_2PI = 0.3989422804014327
cdef double SQRT_2PI = 2.5066282746310002
cdef double LOG_2PI = 1.8378770664093453

cdef double ERX = 8.45062911510467529297e-01
cdef double EFX = 1.28379167095512586316e-01
cdef double pp0 = 1.28379167095512558561e-01, pp1 = -3.25042107247001499370e-01
cdef double pp2 = -2.84817495755985104766e-02, pp3 = -5.77027029648944159157e-03
cdef double pp4 = -2.37630166566501626084e-05
cdef double qq1 = 3.97917223959155352819e-01, qq2 = 6.50222499887672944485e-02
cdef double qq3 = 5.08130628187576562776e-03, qq4 = 1.32494738004321644526e-04
cdef double qq5 = -3.96022827877536812320e-06
cdef double pa0 = -2.36211856075265944077e-03, pa1 = 4.14856118683748331666e-01
cdef double pa2 = -3.72207876035701323847e-01, pa3 = 3.18346619901161753674e-01
cdef double pa4 = -1.10894694282396677476e-01, pa5 = 3.54783043256182359371e-02
cdef double pa6 = -2.16637559486879084300e-03
cdef double qa1 = 1.06420880400844228286e-01, qa2 = 5.40397917702171048937e-01
cdef double qa3 = 7.18286544141962662868e-02, qa4 = 1.26171219808761642112e-01
cdef double qa5 = 1.36370839120290507362e-02, qa6 = 1.19844998467991074170e-02
cdef double ra0 = -9.86494403484714822705e-03, ra1 = -6.93858572707181764372e-01
cdef double ra2 = -1.05586262253232909814e01, ra3 = -6.23753324503260060396e01
cdef double ra4 = -1.62396669462573470355e02, ra5 = -1.84605092906711035994e02
cdef double ra6 = -8.12874355063065934246e01, ra7 = -9.81432934416914548592e00
cdef double sa1 = 1.96512716674392571292e01, sa2 = 1.37657754143519042600e02
cdef double sa3 = 4.34565877475229228821e02, sa4 = 6.45387271733267880336e02
cdef double sa5 = 4.29008140027567833386e02, sa6 = 1.08635005541779435134e02
cdef double sa7 = 6.57024977031928170135e00, sa8 = -6.04244152148580987438e-02
cdef double rb0 = -9.86494292470009928597e-03, rb1 = -7.99283237680523006574e-01
cdef double rb2 = -1.77579549177547519889e01, rb3 = -1.60636384855821916062e02
cdef double rb4 = -6.37566443368389627722e02, rb5 = -1.02509513161107724954e03
cdef double rb6 = -4.83519191608651397019e02
cdef double sb1 = 3.03380607434824582924e01, sb2 = 3.25792512996573918826e02
cdef double sb3 = 1.53672958608443695994e03, sb4 = 3.19985821950859553908e03
cdef double sb5 = 2.55305040643316442583e03, sb6 = 4.74528541206955367215e02
cdef double sb7 = -2.24409524465858183362e01


cdef inline double _small_y(double x) nogil:
    cdef double z
    if fabs(x) < 3.725290298461914e-09:
        return EFX
    z = x * x
    return (pp0 + z * (pp1 + z * (pp2 + z * (pp3 + z * pp4)))) / (
        1.0 + z * (qq1 + z * (qq2 + z * (qq3 + z * (qq4 + z * qq5)))))


cdef inline double _mid_pq(double a) nogil:
    cdef double s = a - 1.0
    return (pa0 + s * (pa1 + s * (pa2 + s * (pa3 + s * (pa4 + s * (pa5 + s * pa6)))))) / (
        1.0 + s * (qa1 + s * (qa2 + s * (qa3 + s * (qa4 + s * (qa5 + s * qa6))))))


cdef inline double _tail(double a) nogil:
    cdef double s = 1.0 / (a * a)
    cdef double r, q, z
    if a < 2.857142857142857:
        r = ra0 + s * (ra1 + s * (ra2 + s * (ra3 + s * (ra4 + s * (ra5 + s * (ra6 + s * ra7))))))
        q = 1.0 + s * (sa1 + s * (sa2 + s * (sa3 + s * (sa4 + s * (sa5 + s * (sa6 + s * (sa7 + s * sa8)))))))
    else:
        r = rb0 + s * (rb1 + s * (rb2 + s * (rb3 + s * (rb4 + s * (rb5 + s * rb6)))))
        q = 1.0 + s * (sb1 + s * (sb2 + s * (sb3 + s * (sb4 + s * (sb5 + s * (sb6 + s * sb7))))))
    z = <double>(<float>a)
    return exp(-z * z - 0.5625) * exp((z - a) * (z + a) + r / q) / a


cdef inline double c_erf(double x) nogil:
    cdef double a = fabs(x)
    cdef double sign = -1.0 if x < 0 else 1.0
    if isnan(x):
        return NAN
    if a < 0.84375:
        return x + x * _small_y(x)
    if a < 1.25:
        return sign * (ERX + _mid_pq(a))
    if a < 28.0:
        return sign * (1.0 - _tail(a))
    return sign


cdef inline double c_erfc(double x) nogil:
    cdef double a = fabs(x)
    cdef double r
    if isnan(x):
        return NAN
    if a < 0.84375:
        r = x * _small_y(x)
        if x < 0.25:
            return 1.0 - (x + r)
        return 0.5 - (x - 0.5 + r)
    if a < 1.25:
        if x < 0:
            return 1.0 + ERX + _mid_pq(a)
        return 1.0 - ERX - _mid_pq(a)
    if a < 28.0:
        r = _tail(a)
        if x < 0:
            return 2.0 - r
        return r
    return 2.0 if x < 0 else 0.0


cdef inline double c_cdf(double x) nogil:
    return 0.5 * c_erfc(-x / SQRT2)


cdef inline double c_pdf(double x) nogil:
    return INV_SQRT_2PI * exp(-0.5 * x * x)


cdef inline double _pdf_cdf(double z, double* cdf) nogil:
    """Standard normal pdf at z; Phi(z) stored in cdf.

    The erfc tail reuses the pdf exponential, saving one exp per call.
    """
    cdef double pdf = INV_SQRT_2PI * exp(-0.5 * z * z)
    cdef double x = -z / SQRT2
    cdef double a = fabs(x)
    cdef double s, r, q
    if a < 0.84375:
        cdf[0] = 0.5 - 0.5 * (x + x * _small_y(x))
    elif a < 1.25:
        r = ERX + _mid_pq(a)
        cdf[0] = 0.5 - 0.5 * r if x > 0 else 0.5 + 0.5 * r
    elif a < 28.0:
        s = 1.0 / (a * a)
        if a < 2.857142857142857:
            r = ra0 + s * (ra1 + s * (ra2 + s * (ra3 + s * (ra4 + s * (ra5 + s * (ra6 + s * ra7))))))
            q = 1.0 + s * (sa1 + s * (sa2 + s * (sa3 + s * (sa4 + s * (sa5 + s * (sa6 + s * (sa7 + s * sa8)))))))
        else:
            r = rb0 + s * (rb1 + s * (rb2 + s * (rb3 + s * (rb4 + s * (rb5 + s * rb6)))))
            q = 1.0 + s * (sb1 + s * (sb2 + s * (sb3 + s * (sb4 + s * (sb5 + s * (sb6 + s * sb7))))))
        r = 0.5 * pdf * SQRT_2PI * exp(r / q - 0.5625) / a
        cdf[0] = r if x > 0 else 1.0 - r
    else:
        cdf[0] = 0.0 if x > 0 else 1.0
    return pdf


def _elementwise(x, int which):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    cdef double[::1] xv = flat
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = flat.shape[0]
    with nogil:
        for i in range(n):
            if which == 0:
                ov[i] = c_erf(xv[i])
            elif which == 1:
                ov[i] = c_erfc(xv[i])
            elif which == 2:
                ov[i] = c_cdf(xv[i])
            elif which == 3:
                ov[i] = c_pdf(xv[i])
            else:
                ov[i] = c_pdf(xv[i]) + xv[i] * c_cdf(xv[i])
    return out.reshape(arr.shape)


def erf(x):
    return _elementwise(x, 0)


def erfc(x):
    return _elementwise(x, 1)


def norm_cdf(x):
    return _elementwise(x, 2)


def norm_pdf(x):
    return _elementwise(x, 3)


def nr(x):
    """Expected ReLU of N(x, 1)."""
    return _elementwise(x, 4)


def relu_terms(mu, s2, double eps):
    """Elementwise s*NR(mu/s) with derivatives w.r.t. mu and s2.

    Both exponentials go through numpy's vectorized exp; the scalar
    passes only do the rational parts of erfc.
    """
    mu_arr = np.ascontiguousarray(mu, dtype=np.float64)
    s2_arr = np.ascontiguousarray(s2, dtype=np.float64)
    shape = mu_arr.shape
    cdef double[::1] m = mu_arr.reshape(-1)
    cdef double[::1] v = s2_arr.reshape(-1)
    cdef Py_ssize_t i, n = m.shape[0]
    g = np.empty(n)
    dmu = np.empty(n)
    ds2 = np.empty(n)
    part = np.empty(n)
    cdef double[::1] gv = g      # z, then g
    cdef double[::1] dmv = dmu   # tail exponent, then dPhi
    cdef double[::1] dsv = ds2   # pdf exponent, then ds2
    cdef double[::1] cv = part   # Phi(z), or -1 where the tail needs exp
    cdef double s, z, x, a, r, q, pdf, cdf
    with nogil:
        for i in range(n):
            z = m[i] / sqrt(v[i]) if v[i] >= eps else 0.0
            gv[i] = z
            dsv[i] = -0.5 * z * z
            dmv[i] = 0.0
            x = -z / SQRT2
            a = fabs(x)
            if a < 0.84375:
                cv[i] = 0.5 - 0.5 * (x + x * _small_y(x))
            elif a < 1.25:
                r = ERX + _mid_pq(a)
                cv[i] = 0.5 - 0.5 * r if x > 0 else 0.5 + 0.5 * r
            elif a < 28.0:
                s = 1.0 / (a * a)
                if a < 2.857142857142857:
                    r = ra0 + s * (ra1 + s * (ra2 + s * (ra3 + s * (ra4 + s * (ra5 + s * (ra6 + s * ra7))))))
                    q = 1.0 + s * (sa1 + s * (sa2 + s * (sa3 + s * (sa4 + s * (sa5 + s * (sa6 + s * (sa7 + s * sa8)))))))
                else:
                    r = rb0 + s * (rb1 + s * (rb2 + s * (rb3 + s * (rb4 + s * (rb5 + s * rb6)))))
                    q = 1.0 + s * (sb1 + s * (sb2 + s * (sb3 + s * (sb4 + s * (sb5 + s * (sb6 + s * sb7))))))
                dmv[i] = r / q - 0.5625
                cv[i] = -1.0
            else:
                cv[i] = 0.0 if x > 0 else 1.0
    np.exp(ds2, out=ds2)
    np.exp(dmu, out=dmu)
    with nogil:
        for i in range(n):
            if v[i] < eps:
                gv[i] = m[i] if m[i] > 0 else 0.0
                dmv[i] = 1.0 if m[i] > 0 else 0.0
                dsv[i] = 0.0
                continue
            s = sqrt(v[i])
            z = gv[i]
            pdf = INV_SQRT_2PI * dsv[i]
            cdf = cv[i]
            if cdf < 0.0:
                a = fabs(z) / SQRT2
                r = 0.5 * pdf * SQRT_2PI * dmv[i] / a
                cdf = 1.0 - r if z > 0 else r
            gv[i] = s * (pdf + z * cdf)
            dmv[i] = cdf
            dsv[i] = pdf / (2.0 * s)
    return g.reshape(shape), dmu.reshape(shape), ds2.reshape(shape)


cdef inline double _keep(double x, cnp.uint8_t m) nogil:
    """x when m == 0, +0.0 when m == 1 (also for NaN x), without a branch.

    Masks are random, so branching on them mispredicts about half the time.
    """
    cdef uint64_t bits
    memcpy(&bits, &x, 8)
    bits &= (<uint64_t>m) - 1
    memcpy(&x, &bits, 8)
    return x


def log_coeffs(x, miss, means, variances, double gamma):
    """log C^gamma_i for every point (rows of x) and component: (B, k)."""
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] mv = np.ascontiguousarray(miss, dtype=np.uint8)
    cdef double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef double[:, ::1] var = np.ascontiguousarray(variances, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], D = xv.shape[1], K = mu.shape[0]
    out = np.zeros((B, K))
    cdef double[:, ::1] ov = out
    # per-component normaliser terms are shared across points
    lv_arr = np.log(np.asarray(var) + gamma)
    iv_arr = 1.0 / (np.asarray(var) + gamma)
    cdef double[:, ::1] iv = iv_arr
    cst_arr = -0.5 * (LOG_2PI + lv_arr)
    cdef double[:, ::1] cst = cst_arr
    cdef Py_ssize_t b, i, j
    cdef double acc, d
    with nogil:
        for b in range(B):
            for i in range(K):
                acc = 0.0
                for j in range(D):
                    # masks are random; multiply instead of branching
                    d = mu[i, j] - _keep(xv[b, j], mv[b, j])
                    acc = acc + <double>(1 - mv[b, j]) * (cst[i, j] - 0.5 * d * d * iv[i, j])
                ov[b, i] = acc
    return out


def completed(x, miss, means, variances):
    """Per-component completed means and variances: two (B, k, D) arrays."""
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] mv = np.ascontiguousarray(miss, dtype=np.uint8)
    cdef double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef double[:, ::1] var = np.ascontiguousarray(variances, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], D = xv.shape[1], K = mu.shape[0]
    mt = np.empty((B, K, D))
    vt = np.empty((B, K, D))
    cdef double[:, :, ::1] mo = mt
    cdef double[:, :, ::1] vo = vt
    cdef Py_ssize_t b, i, j
    cdef double mf
    with nogil:
        for b in range(B):
            for i in range(K):
                for j in range(D):
                    mf = <double>mv[b, j]
                    mo[b, i, j] = _keep(xv[b, j], mv[b, j]) + mf * mu[i, j]
                    vo[b, i, j] = mf * var[i, j]
    return mt, vt


def log_coeffs_grad(x, miss, means, variances, double gamma, g):
    """Gradients of sum(g * log_coeffs) w.r.t. means and variances."""
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] mv = np.ascontiguousarray(miss, dtype=np.uint8)
    cdef double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef double[:, ::1] var = np.ascontiguousarray(variances, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], D = xv.shape[1], K = mu.shape[0]
    dmeans = np.zeros((K, D))
    dvars = np.zeros((K, D))
    cdef double[:, ::1] dm = dmeans
    cdef double[:, ::1] dv = dvars
    iv_arr = 1.0 / (np.asarray(var) + gamma)
    cdef double[:, ::1] iv = iv_arr
    cdef Py_ssize_t b, i, j
    cdef double d, w, of
    with nogil:
        for b in range(B):
            for i in range(K):
                w = gv[b, i]
                if w == 0.0:
                    continue
                for j in range(D):
                    of = w * <double>(1 - mv[b, j])
                    d = mu[i, j] - _keep(xv[b, j], mv[b, j])
                    dm[i, j] -= of * d * iv[i, j]
                    dv[i, j] += of * (-0.5 * iv[i, j] + 0.5 * d * d * iv[i, j] * iv[i, j])
    return dmeans, dvars


cdef _rbf_tables(var, w):
    """log and reciprocal of the per-coordinate variance, indexed by
    [missing flag, component, unit, coordinate]."""
    v = np.empty((2, var.shape[0], w.shape[0], w.shape[1]))
    v[0] = w[None, :, :]
    v[1] = w[None, :, :] + var[:, None, :]
    return np.log(v), 1.0 / v


def rbf_log_terms(x, miss, means, variances, centers, widths):
    """log N(m_i - c_u, Gamma_u + Sigma_i)(0) for completed means: (B, k, t)."""
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] mv = np.ascontiguousarray(miss, dtype=np.uint8)
    cdef double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    var_arr = np.ascontiguousarray(variances, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    w_arr = np.ascontiguousarray(widths, dtype=np.float64)
    lt_arr, it_arr = _rbf_tables(var_arr, w_arr)
    cdef double[:, :, :, ::1] lt = lt_arr
    cdef double[:, :, :, ::1] it = it_arr
    cdef Py_ssize_t B = xv.shape[0], D = xv.shape[1], K = mu.shape[0], T = c.shape[0]
    out = np.empty((B, K, T))
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t b, i, u, j
    cdef cnp.uint8_t m
    cdef double acc, d
    with nogil:
        for b in range(B):
            for i in range(K):
                for u in range(T):
                    acc = 0.0
                    for j in range(D):
                        # table lookup by mask flag instead of a branch
                        m = mv[b, j]
                        d = _keep(xv[b, j], m) + m * mu[i, j] - c[u, j]
                        acc = acc - 0.5 * (LOG_2PI + lt[m, i, u, j]) - 0.5 * d * d * it[m, i, u, j]
                    ov[b, i, u] = acc
    return out


def rbf_log_terms_grad(x, miss, means, variances, centers, widths, e):
    """Gradients of sum(e * rbf_log_terms) w.r.t. means, variances, centers, widths."""
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] mv = np.ascontiguousarray(miss, dtype=np.uint8)
    cdef double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    var_arr = np.ascontiguousarray(variances, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    w_arr = np.ascontiguousarray(widths, dtype=np.float64)
    _, it_arr = _rbf_tables(var_arr, w_arr)
    cdef double[:, :, :, ::1] it = it_arr
    cdef double[:, :, ::1] ev = np.ascontiguousarray(e, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], D = xv.shape[1], K = mu.shape[0], T = c.shape[0]
    dmeans = np.zeros((K, D))
    dvars = np.zeros((K, D))
    dcenters = np.zeros((T, D))
    dwidths = np.zeros((T, D))
    cdef double[:, ::1] dm = dmeans
    cdef double[:, ::1] dva = dvars
    cdef double[:, ::1] dc = dcenters
    cdef double[:, ::1] dw = dwidths
    cdef Py_ssize_t b, i, u, j
    cdef cnp.uint8_t m
    cdef double d, iv, ee, gd, gv, mf
    with nogil:
        for b in range(B):
            for i in range(K):
                for u in range(T):
                    ee = ev[b, i, u]
                    if ee == 0.0:
                        continue
                    for j in range(D):
                        m = mv[b, j]
                        mf = <double>m
                        iv = it[m, i, u, j]
                        d = _keep(xv[b, j], m) + mf * mu[i, j] - c[u, j]
                        gd = -ee * d * iv
                        gv = ee * (-0.5 * iv + 0.5 * d * d * iv * iv)
                        dc[u, j] -= gd
                        dw[u, j] += gv
                        dm[i, j] += mf * gd
                        dva[i, j] += mf * gv
    return dmeans, dvars, dcenters, dwidths

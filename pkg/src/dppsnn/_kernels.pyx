# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same API and conventions as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, lgamma, fmin

cnp.import_array()

BACKEND = "cython"

cdef double TINY = np.finfo(np.float64).tiny
cdef double ONE_MINUS = np.nextafter(1.0, 0.0)


cdef inline double _kappa(double x) nogil:
    cdef double v = 0.75 * (1.0 - x * x)
    return v if v > 0.0 else 0.0


cdef inline double _log_sigmoid(double x) nogil:
    if x >= 0.0:
        return -log1p(exp(-x))
    return x - log1p(exp(x))


cdef inline Py_ssize_t _lower(const double[::1] a, Py_ssize_t n, double x) nogil:
    # first index with a[i] >= x
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t _upper(const double[::1] a, Py_ssize_t n, double x) nogil:
    # first index with a[i] > x
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef void _project_row(const double[::1] mark, const double[:, :, ::1] W,
                       double[:, ::1] out) nogil:
    # out[l, d] = sum_f mark[f] W[f, d, l]
    cdef Py_ssize_t D = W.shape[0], L = W.shape[2], f, d, l
    cdef double m
    for l in range(L):
        for d in range(D):
            out[l, d] = 0.0
    for f in range(D):
        m = mark[f]
        if m == 0.0:
            continue
        for d in range(D):
            for l in range(L):
                out[l, d] += m * W[f, d, l]


cdef void _accumulate(const double[::1] times, Py_ssize_t n, double t,
                      const double[::1] centers, const double[:, :, ::1] Z,
                      double[::1] u) nogil:
    # u += sum over history events in a kernel support of kappa * Z[j, l]
    cdef Py_ssize_t L = centers.shape[0], D = u.shape[0], l, j, d, lo, hi
    cdef double c, k
    for l in range(L):
        c = centers[l]
        lo = _upper(times, n, t - c - 1.0)
        hi = _lower(times, n, fmin(t - c + 1.0, t))
        for j in range(lo, hi):
            k = _kappa(t - times[j] - c)
            if k > 0.0:
                for d in range(D):
                    u[d] += k * Z[j, l, d]


def potentials(qt, et, em, ubar, W, centers):
    cdef const double[::1] q = np.ascontiguousarray(qt, dtype=np.float64)
    cdef const double[::1] times = np.ascontiguousarray(et, dtype=np.float64)
    cdef const double[:, ::1] marks = np.ascontiguousarray(em, dtype=np.float64).reshape(times.shape[0], np.shape(W)[0])
    cdef const double[:, :, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[::1] ub = np.ascontiguousarray(ubar, dtype=np.float64)
    cdef const double[::1] cs = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t Q = q.shape[0], N = times.shape[0], D = w.shape[0], L = w.shape[2]
    cdef double[:, :, ::1] Z = np.zeros((N, L, D))
    out_arr = np.empty((Q, D))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, d
    with nogil:
        for i in range(N):
            _project_row(marks[i], w, Z[i])
        for i in range(Q):
            for d in range(D):
                out[i, d] = ub[d]
            _accumulate(times, N, q[i], cs, Z, out[i])
    return out_arr


def potentials_backward(qt, et, em, centers, gU):
    cdef const double[::1] q = np.ascontiguousarray(qt, dtype=np.float64)
    cdef const double[::1] times = np.ascontiguousarray(et, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(gU, dtype=np.float64)
    cdef Py_ssize_t Q = q.shape[0], N = times.shape[0], D = g.shape[1]
    cdef const double[:, ::1] marks = np.ascontiguousarray(em, dtype=np.float64).reshape(N, D)
    cdef const double[::1] cs = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t L = cs.shape[0]
    g_ubar_arr = np.zeros(D)
    g_W_arr = np.zeros((D, D, L))
    cdef double[::1] g_ubar = g_ubar_arr
    cdef double[:, :, ::1] g_W = g_W_arr
    cdef double[:, ::1] acc = np.zeros((L, D))
    cdef Py_ssize_t i, j, l, d, f, lo, hi
    cdef double c, k, t
    with nogil:
        for i in range(Q):
            t = q[i]
            for d in range(D):
                g_ubar[d] += g[i, d]
            for l in range(L):
                for f in range(D):
                    acc[l, f] = 0.0
                c = cs[l]
                lo = _upper(times, N, t - c - 1.0)
                hi = _lower(times, N, fmin(t - c + 1.0, t))
                for j in range(lo, hi):
                    k = _kappa(t - times[j] - c)
                    if k > 0.0:
                        for f in range(D):
                            acc[l, f] += k * marks[j, f]
                for f in range(D):
                    if acc[l, f] != 0.0:
                        for d in range(D):
                            g_W[f, d, l] += acc[l, f] * g[i, d]
    return g_ubar_arr, g_W_arr


def thin_hidden(prop_t, prop_u, obs_t, obs_m, ubar, W, centers, double amplitude,
                double lambda_bar, hidden):
    cdef const double[::1] pt = np.ascontiguousarray(prop_t, dtype=np.float64)
    cdef const double[::1] pu = np.ascontiguousarray(prop_u, dtype=np.float64)
    cdef const double[::1] ot = np.ascontiguousarray(obs_t, dtype=np.float64)
    cdef const double[:, :, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef Py_ssize_t D = w.shape[0], L = w.shape[2]
    cdef Py_ssize_t n_obs = ot.shape[0], K = pt.shape[0]
    cdef const double[:, ::1] om = np.ascontiguousarray(obs_m, dtype=np.float64).reshape(n_obs, D)
    cdef const double[::1] ub = np.ascontiguousarray(ubar, dtype=np.float64)
    cdef const double[::1] cs = np.ascontiguousarray(centers, dtype=np.float64)
    cdef const cnp.int64_t[::1] hid = np.ascontiguousarray(hidden, dtype=np.int64)
    cdef Py_ssize_t nh = hid.shape[0]
    cdef double[::1] times = np.empty(n_obs + K + 1)
    cdef double[:, :, ::1] Z = np.zeros((n_obs + K + 1, L, D))
    cdef double[::1] u = np.empty(D)
    acc_idx_arr = np.empty(K, dtype=np.int64)
    acc_dim_arr = np.empty(K, dtype=np.int64)
    cdef cnp.int64_t[::1] acc_idx = acc_idx_arr
    cdef cnp.int64_t[::1] acc_dim = acc_dim_arr
    cdef Py_ssize_t n = 0, oi = 0, na = 0, k, a, d, l, h
    cdef double s, cum, log_a = log(amplitude), log_bar = log(lambda_bar)
    with nogil:
        for k in range(K):
            s = pt[k]
            while oi < n_obs and ot[oi] < s:
                times[n] = ot[oi]
                _project_row(om[oi], w, Z[n])
                n += 1
                oi += 1
            for d in range(D):
                u[d] = ub[d]
            _accumulate(times, n, s, cs, Z, u)
            cum = 0.0
            for a in range(nh):
                h = hid[a]
                cum += exp(log_a + _log_sigmoid(u[h]) - log_bar)
                if pu[k] < cum:
                    times[n] = s
                    for l in range(L):
                        for d in range(D):
                            Z[n, l, d] = w[h, d, l]
                    n += 1
                    acc_idx[na] = k
                    acc_dim[na] = h
                    na += 1
                    break
    return acc_idx_arr[:na].copy(), acc_dim_arr[:na].copy()


cdef double _lse(const double[::1] v, Py_ssize_t n) nogil:
    cdef double m = v[0], s = 0.0
    cdef Py_ssize_t i
    for i in range(1, n):
        if v[i] > m:
            m = v[i]
    for i in range(n):
        s += exp(v[i] - m)
    return m + log(s)


cdef double _log_pi(const double[::1] u_h, Py_ssize_t nh, double log_a, double log_bar,
                    double log_slack, double[::1] out, double[::1] work) nogil:
    # fills out[0..nh] and returns log(bar - sum lambda_h)
    cdef Py_ssize_t a
    cdef double log_rest
    for a in range(nh):
        out[a] = log_a + _log_sigmoid(u_h[a]) - log_bar
        work[a] = log_a + _log_sigmoid(-u_h[a])
    if log_slack > -1e300:
        work[nh] = log_slack
        log_rest = _lse(work, nh + 1)
    else:
        log_rest = _lse(work, nh)
    out[nh] = log_rest - log_bar
    return log_rest


cdef double _concrete_logpdf(const double[::1] lp, const double[::1] lpi, Py_ssize_t k,
                             double tau, double[::1] work) nogil:
    cdef Py_ssize_t i
    cdef double acc = lgamma(<double>k) + (k - 1) * log(tau)
    for i in range(k):
        acc += lpi[i] - (tau + 1.0) * lp[i]
        work[i] = lpi[i] - tau * lp[i]
    return acc - k * _lse(work, k)


cdef void _softmax(const double[::1] v, Py_ssize_t n, double[::1] out) nogil:
    cdef double m = v[0], s = 0.0
    cdef Py_ssize_t i
    for i in range(1, n):
        if v[i] > m:
            m = v[i]
    for i in range(n):
        out[i] = exp(v[i] - m)
        s += out[i]
    for i in range(n):
        out[i] /= s


cdef void _push(const double[::1] times, Py_ssize_t n, double t, const double[::1] cs,
                const double[::1] gu, double[::1] g_ubar, double[:, :, ::1] A) nogil:
    # adjoint of u(t) = ubar + sum kappa * Z[j, l]; A[j, l] collects the adjoint of Z[j, l]
    cdef Py_ssize_t D = gu.shape[0], L = cs.shape[0], l, j, d, lo, hi
    cdef double c, k
    for d in range(D):
        g_ubar[d] += gu[d]
    for l in range(L):
        c = cs[l]
        lo = _upper(times, n, t - c - 1.0)
        hi = _lower(times, n, fmin(t - c + 1.0, t))
        for j in range(lo, hi):
            k = _kappa(t - times[j] - c)
            if k > 0.0:
                for d in range(D):
                    A[j, l, d] += k * gu[d]


cdef double _mark_adjoint(const double[:, :, ::1] A, Py_ssize_t j, Py_ssize_t f,
                          const double[:, :, ::1] W) nogil:
    # d/d mark[j, f] of sum_{l, d} A[j, l, d] Z[j, l, d] with Z[j, l, d] = sum_f mark[f] W[f, d, l]
    cdef Py_ssize_t L = A.shape[1], D = A.shape[2], l, d
    cdef double acc = 0.0
    for l in range(L):
        for d in range(D):
            acc += W[f, d, l] * A[j, l, d]
    return acc


cdef void _contract(const double[:, ::1] marks, const double[:, :, ::1] A,
                    double[:, :, ::1] g_W) nogil:
    cdef Py_ssize_t N = A.shape[0], L = A.shape[1], D = A.shape[2], j, f, d, l
    cdef double m
    for j in range(N):
        for f in range(D):
            m = marks[j, f]
            if m == 0.0:
                continue
            for d in range(D):
                for l in range(L):
                    g_W[f, d, l] += m * A[j, l, d]


def pathwise(prop_t, gumbel_u, obs_t, obs_m, mc_t, th_ubar, th_W, ph_ubar, ph_W,
             centers, double amplitude, double lambda_bar, double tau, double horizon,
             hidden, observable):
    cdef const double[:, :, ::1] thW = np.ascontiguousarray(th_W, dtype=np.float64)
    cdef const double[:, :, ::1] phW = np.ascontiguousarray(ph_W, dtype=np.float64)
    cdef const double[::1] thU = np.ascontiguousarray(th_ubar, dtype=np.float64)
    cdef const double[::1] phU = np.ascontiguousarray(ph_ubar, dtype=np.float64)
    cdef const double[::1] cs = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t D = thW.shape[0], L = thW.shape[2]
    pt_arr = np.ascontiguousarray(prop_t, dtype=np.float64)
    ot_arr = np.ascontiguousarray(obs_t, dtype=np.float64)
    cdef Py_ssize_t K = pt_arr.shape[0], n_obs = ot_arr.shape[0]
    om_arr = np.ascontiguousarray(obs_m, dtype=np.float64).reshape(n_obs, D)
    cdef const double[::1] mct = np.ascontiguousarray(mc_t, dtype=np.float64)
    cdef const cnp.int64_t[::1] hid = np.ascontiguousarray(hidden, dtype=np.int64)
    cdef const cnp.int64_t[::1] obsv = np.ascontiguousarray(observable, dtype=np.int64)
    cdef Py_ssize_t nh = hid.shape[0], K1 = nh + 1, M = mct.shape[0], n_ov = obsv.shape[0]
    gum_arr = np.ascontiguousarray(gumbel_u, dtype=np.float64).reshape(K, K1)
    gum_arr = -np.log(-np.log(np.clip(gum_arr, TINY, ONE_MINUS)))
    cdef const double[:, ::1] gum = gum_arr

    all_t = np.concatenate([ot_arr, pt_arr])
    order_arr = np.argsort(all_t, kind="stable").astype(np.int64)
    times_arr = np.ascontiguousarray(all_t[order_arr])
    cdef Py_ssize_t N = times_arr.shape[0]
    cdef const double[::1] times = times_arr
    cdef const cnp.int64_t[::1] order = order_arr
    marks_arr = np.zeros((N, D))
    cdef double[:, ::1] marks = marks_arr
    cdef const double[:, ::1] om = om_arr
    cdef double[:, :, ::1] Zth = np.zeros((N, L, D))
    cdef double[:, :, ::1] Zph = np.zeros((N, L, D))

    cdef double[:, ::1] lpi_th = np.zeros((K, K1))
    cdef double[:, ::1] lpi_ph = np.zeros((K, K1))
    cdef double[:, ::1] u_th = np.zeros((K, nh))
    cdef double[:, ::1] u_ph = np.zeros((K, nh))
    cdef double[::1] rest_th = np.zeros(K)
    cdef double[::1] rest_ph = np.zeros(K)
    lp_arr = np.zeros((K, K1))
    pp_arr = np.zeros((K, K1))
    cdef double[:, ::1] lp = lp_arr
    cdef double[:, ::1] pp = pp_arr
    cdef cnp.int64_t[::1] pos = np.zeros(K, dtype=np.int64)
    cdef double[::1] obs_u = np.zeros(N)
    cdef cnp.int64_t[::1] obs_dim = np.full(N, -1, dtype=np.int64)
    cdef double[::1] uth = np.empty(D)
    cdef double[::1] uph = np.empty(D)
    cdef double[::1] y = np.empty(K1)
    cdef double[::1] work = np.empty(K1 + 1)
    cdef double[::1] s_th = np.empty(K1)
    cdef double[::1] s_ph = np.empty(K1)
    cdef double[::1] d_lp = np.empty(K1)
    cdef double[::1] d_lpi_th = np.empty(K1)
    cdef double[::1] d_lpi_ph = np.empty(K1)
    cdef double[::1] gu = np.zeros(D)
    cdef double[:, :, ::1] A_th = np.zeros((N, L, D))
    cdef double[:, :, ::1] A_ph = np.zeros((N, L, D))
    cdef double[:, ::1] u_mc = np.zeros((M, D))

    g_th_ubar_arr = np.zeros(D)
    g_th_W_arr = np.zeros((D, D, L))
    g_ph_ubar_arr = np.zeros(D)
    g_ph_W_arr = np.zeros((D, D, L))
    cdef double[::1] g_th_ubar = g_th_ubar_arr
    cdef double[:, :, ::1] g_th_W = g_th_W_arr
    cdef double[::1] g_ph_ubar = g_ph_ubar_arr
    cdef double[:, :, ::1] g_ph_W = g_ph_W_arr

    cdef double log_a = log(amplitude), log_bar = log(lambda_bar)
    cdef double slack = lambda_bar - amplitude * nh
    cdef double log_slack = log(slack) if slack > 0.0 else -1e308
    cdef double log_p = 0.0, log_q = 0.0, comp = 0.0, z, x, tot, t, ls, lsm
    cdef Py_ssize_t i, j, k, a, d, l, m, src, best
    cdef double bestv

    with nogil:
        for i in range(N):
            if order[i] < n_obs:
                src = order[i]
                for d in range(D):
                    marks[i, d] = om[src, d]
                _project_row(marks[i], thW, Zth[i])
                _project_row(marks[i], phW, Zph[i])

        for i in range(N):
            t = times[i]
            if order[i] < n_obs:
                best = 0
                bestv = marks[i, 0]
                for d in range(1, D):
                    if marks[i, d] > bestv:
                        bestv = marks[i, d]
                        best = d
                for d in range(D):
                    uth[d] = thU[d]
                _accumulate(times, i, t, cs, Zth, uth)
                obs_u[i] = uth[best]
                obs_dim[i] = best
                log_p += log_a + _log_sigmoid(uth[best])
                continue
            k = order[i] - n_obs
            pos[k] = i
            for d in range(D):
                uth[d] = thU[d]
                uph[d] = phU[d]
            _accumulate(times, i, t, cs, Zth, uth)
            _accumulate(times, i, t, cs, Zph, uph)
            for a in range(nh):
                u_th[k, a] = uth[hid[a]]
                u_ph[k, a] = uph[hid[a]]
            rest_th[k] = _log_pi(u_th[k], nh, log_a, log_bar, log_slack, lpi_th[k], work)
            rest_ph[k] = _log_pi(u_ph[k], nh, log_a, log_bar, log_slack, lpi_ph[k], work)
            for a in range(K1):
                y[a] = (lpi_ph[k, a] + gum[k, a]) / tau
            z = _lse(y, K1)
            for a in range(K1):
                lp[k, a] = y[a] - z
                pp[k, a] = exp(lp[k, a])
            for a in range(nh):
                marks[i, hid[a]] = pp[k, a]
            _project_row(marks[i], thW, Zth[i])
            _project_row(marks[i], phW, Zph[i])
            log_p += log_bar + _concrete_logpdf(lp[k], lpi_th[k], K1, tau, work)
            log_q += log_bar + _concrete_logpdf(lp[k], lpi_ph[k], K1, tau, work)

        for m in range(M):
            for d in range(D):
                u_mc[m, d] = thU[d]
            _accumulate(times, N, mct[m], cs, Zth, u_mc[m])
            for a in range(n_ov):
                comp += amplitude * exp(_log_sigmoid(u_mc[m, obsv[a]]))
        if M > 0:
            comp *= horizon / M
        log_p -= lambda_bar * horizon + comp
        log_q -= lambda_bar * horizon

        # reverse sweep
        for i in range(N):
            if order[i] < n_obs:
                for d in range(D):
                    gu[d] = 0.0
                gu[obs_dim[i]] = exp(_log_sigmoid(-obs_u[i]))
                _push(times, N, times[i], cs, gu, g_th_ubar, A_th)
        for m in range(M):
            for d in range(D):
                gu[d] = 0.0
            for a in range(n_ov):
                x = u_mc[m, obsv[a]]
                gu[obsv[a]] = -horizon / M * amplitude * exp(_log_sigmoid(x) + _log_sigmoid(-x))
            _push(times, N, mct[m], cs, gu, g_th_ubar, A_th)

        for k in range(K - 1, -1, -1):
            i = pos[k]
            t = times[i]
            for a in range(K1):
                work[a] = lpi_th[k, a] - tau * lp[k, a]
            _softmax(work, K1, s_th)
            for a in range(K1):
                work[a] = lpi_ph[k, a] - tau * lp[k, a]
            _softmax(work, K1, s_ph)
            tot = 0.0
            for a in range(K1):
                d_lp[a] = K1 * tau * (s_th[a] - s_ph[a])
                d_lpi_th[a] = 1.0 - K1 * s_th[a]
                d_lpi_ph[a] = -(1.0 - K1 * s_ph[a])
                if a < nh:
                    d_lp[a] += (_mark_adjoint(A_th, i, hid[a], thW) + _mark_adjoint(A_ph, i, hid[a], phW)) * pp[k, a]
                tot += d_lp[a]
            for a in range(K1):
                d_lpi_ph[a] += (d_lp[a] - pp[k, a] * tot) / tau

            for d in range(D):
                gu[d] = 0.0
            for a in range(nh):
                ls = _log_sigmoid(u_th[k, a])
                lsm = _log_sigmoid(-u_th[k, a])
                gu[hid[a]] = d_lpi_th[a] * exp(lsm) - d_lpi_th[nh] * exp(log_a + ls + lsm - rest_th[k])
            _push(times, N, t, cs, gu, g_th_ubar, A_th)

            for d in range(D):
                gu[d] = 0.0
            for a in range(nh):
                ls = _log_sigmoid(u_ph[k, a])
                lsm = _log_sigmoid(-u_ph[k, a])
                gu[hid[a]] = d_lpi_ph[a] * exp(lsm) - d_lpi_ph[nh] * exp(log_a + ls + lsm - rest_ph[k])
            _push(times, N, t, cs, gu, g_ph_ubar, A_ph)

        _contract(marks, A_th, g_th_W)
        _contract(marks, A_ph, g_ph_W)

    out_marks = np.zeros((K, D))
    hid_arr = np.asarray(hidden, dtype=np.int64)
    out_marks[:, hid_arr] = pp_arr[:, :nh]
    return {
        "elbo": log_p - log_q, "log_p": log_p, "log_q": log_q,
        "g_theta_ubar": g_th_ubar_arr, "g_theta_W": g_th_W_arr,
        "g_phi_ubar": g_ph_ubar_arr, "g_phi_W": g_ph_W_arr,
        "marks": out_marks, "log_marks": lp_arr,
    }

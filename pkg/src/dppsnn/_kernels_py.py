"""Pure-Python kernels (fallback for the compiled ``_kernels`` extension).

Conventions shared with the extension:

* events are ``times (N,)`` sorted ascending with ``marks (N, D)``;
* ``W`` has shape ``(D, D, L)`` indexed ``[from, to, l]``;
* the history of a query at ``t`` is every event with time ``< t``;
* only events whose lag falls inside some kernel support are scanned,
  located by binary search per kernel centre.
"""
from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def _kappa(x):
    v = 0.75 * (1.0 - x * x)
    return v if v > 0.0 else 0.0


def _log_sigmoid(x):
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _windows(times, t, centers):
    """Yield ``(l, j, kappa)`` for every history event inside a kernel support."""
    for l, c in enumerate(centers):
        lo = np.searchsorted(times, t - c - 1.0, side="right")
        hi = np.searchsorted(times, min(t - c + 1.0, t), side="left")
        for j in range(lo, hi):
            k = _kappa(t - times[j] - c)
            if k > 0.0:
                yield l, j, k


def _project(marks, W):
    # Z[j, l, d] = sum_d' marks[j, d'] W[d', d, l]
    return np.einsum("jf,ftl->jlt", marks, W) if len(marks) else np.zeros((0, W.shape[2], W.shape[1]))


def potentials(qt, et, em, ubar, W, centers):
    qt = np.asarray(qt, dtype=np.float64)
    et = np.asarray(et, dtype=np.float64)
    Z = _project(np.asarray(em, dtype=np.float64), W)
    out = np.tile(np.asarray(ubar, dtype=np.float64), (len(qt), 1))
    for q, t in enumerate(qt):
        for l, j, k in _windows(et, t, centers):
            out[q] += k * Z[j, l]
    return out


def potentials_backward(qt, et, em, centers, gU):
    em = np.asarray(em, dtype=np.float64)
    gU = np.asarray(gU, dtype=np.float64)
    D, L = gU.shape[1], len(centers)
    g_ubar = gU.sum(axis=0)
    g_W = np.zeros((D, D, L))
    for q, t in enumerate(np.asarray(qt, dtype=np.float64)):
        acc = np.zeros((L, D))
        for l, j, k in _windows(et, t, centers):
            acc[l] += k * em[j]
        for l in range(L):
            g_W[:, :, l] += np.outer(acc[l], gU[q])
    return g_ubar, g_W


def thin_hidden(prop_t, prop_u, obs_t, obs_m, ubar, W, centers, amplitude, lambda_bar, hidden):
    """Thinning over the ``hidden`` neurons with observed events clamped.

    Returns ``(accepted proposal indices, accepted neuron indices)``.
    """
    D, L = W.shape[0], W.shape[2]
    hidden = np.asarray(hidden, dtype=np.int64)
    n_obs = len(obs_t)
    cap = n_obs + len(prop_t)
    times = np.empty(cap)
    Z = np.zeros((cap, L, D))
    Z_obs = _project(np.asarray(obs_m, dtype=np.float64).reshape(n_obs, D), W)
    n = 0
    oi = 0
    acc_idx, acc_dim = [], []
    log_a, log_bar = math.log(amplitude), math.log(lambda_bar)
    for k, (s, u) in enumerate(zip(prop_t, prop_u)):
        while oi < n_obs and obs_t[oi] < s:
            times[n] = obs_t[oi]
            Z[n] = Z_obs[oi]
            n += 1
            oi += 1
        uvec = np.array(ubar, dtype=np.float64)
        for l, j, kap in _windows(times[:n], s, centers):
            uvec += kap * Z[j, l]
        cum = 0.0
        for h in hidden:
            cum += math.exp(log_a + _log_sigmoid(uvec[h]) - log_bar)
            if u < cum:
                times[n] = s
                Z[n] = W[h].T
                n += 1
                acc_idx.append(k)
                acc_dim.append(int(h))
                break
    return np.asarray(acc_idx, dtype=np.int64), np.asarray(acc_dim, dtype=np.int64)


def _softmax(v):
    m = v.max()
    e = np.exp(v - m)
    return e / e.sum()


def _lse(v):
    m = v.max()
    return m + math.log(np.exp(v - m).sum())


def _log_pi(u_h, log_a, log_bar, slack, amplitude):
    """Log of ``[lambda_h; bar - sum lambda_h] / bar`` for sigmoid intensities."""
    ls = np.array([_log_sigmoid(x) for x in u_h])
    lsm = np.array([_log_sigmoid(-x) for x in u_h])
    terms = list(log_a + lsm)
    if slack > 0.0:
        terms.append(math.log(slack))
    log_rest = _lse(np.asarray(terms))
    out = np.empty(len(u_h) + 1)
    out[:-1] = log_a + ls - log_bar
    out[-1] = log_rest - log_bar
    return out, ls, lsm, log_rest


def _concrete_logpdf(lp, lpi, tau):
    k = len(lp)
    return (math.lgamma(k) + (k - 1) * math.log(tau) + lpi.sum() - (tau + 1.0) * lp.sum()
            - k * _lse(lpi - tau * lp))


def pathwise(prop_t, gumbel_u, obs_t, obs_m, mc_t, th_ubar, th_W, ph_ubar, ph_W,
             centers, amplitude, lambda_bar, tau, horizon, hidden, observable):
    """One reparameterised ELBO sample and its gradients in theta and phi.

    Samples relaxed hidden marks from the differentiable point process driven
    by ``phi`` (proposal times ``prop_t``, Gumbel uniforms ``gumbel_u``), scores
    them under the differentiable SNN driven by ``theta``, and back-propagates
    through the whole sequential sampler.
    """
    prop_t = np.asarray(prop_t, dtype=np.float64)
    obs_t = np.asarray(obs_t, dtype=np.float64)
    obs_m = np.asarray(obs_m, dtype=np.float64)
    mc_t = np.asarray(mc_t, dtype=np.float64)
    hidden = np.asarray(hidden, dtype=np.int64)
    observable = np.asarray(observable, dtype=np.int64)
    D, L = th_W.shape[0], th_W.shape[2]
    nh, K = len(hidden), len(prop_t)
    K1 = nh + 1
    log_a, log_bar = math.log(amplitude), math.log(lambda_bar)
    slack = lambda_bar - amplitude * nh
    n_obs = len(obs_t)

    times = np.concatenate([obs_t, prop_t])
    order = np.argsort(times, kind="stable")
    times = times[order]
    N = len(times)
    is_prop = order >= n_obs
    src = np.where(is_prop, order - n_obs, order)
    marks = np.zeros((N, D))
    marks[~is_prop] = obs_m[src[~is_prop]] if n_obs else 0.0
    Zth = np.zeros((N, L, D))
    Zph = np.zeros((N, L, D))
    for i in np.nonzero(~is_prop)[0]:
        Zth[i] = (marks[i] @ th_W.reshape(D, D * L)).reshape(D, L).T
        Zph[i] = (marks[i] @ ph_W.reshape(D, D * L)).reshape(D, L).T

    g = -np.log(-np.log(np.clip(gumbel_u, np.finfo(float).tiny, np.nextafter(1.0, 0.0))))
    lpi_th = np.zeros((K, K1))
    lpi_ph = np.zeros((K, K1))
    u_th = np.zeros((K, nh))
    u_ph = np.zeros((K, nh))
    rest_th = np.zeros(K)
    rest_ph = np.zeros(K)
    lp = np.zeros((K, K1))
    pp = np.zeros((K, K1))
    pos = np.zeros(K, dtype=np.int64)
    obs_u = np.zeros(N)
    obs_dim = np.full(N, -1, dtype=np.int64)

    log_p = 0.0
    log_q = 0.0
    for i in range(N):
        t = times[i]
        if not is_prop[i]:
            d = int(np.argmax(marks[i]))
            ud = th_ubar[d]
            for l, j, kap in _windows(times[:i], t, centers):
                ud += kap * Zth[j, l, d]
            obs_u[i] = ud
            obs_dim[i] = d
            log_p += log_a + _log_sigmoid(ud)
            continue
        k = src[i]
        pos[k] = i
        uth = th_ubar.copy()
        uph = ph_ubar.copy()
        for l, j, kap in _windows(times[:i], t, centers):
            uth += kap * Zth[j, l]
            uph += kap * Zph[j, l]
        u_th[k] = uth[hidden]
        u_ph[k] = uph[hidden]
        lpi_th[k], _, _, rest_th[k] = _log_pi(u_th[k], log_a, log_bar, slack, amplitude)
        lpi_ph[k], _, _, rest_ph[k] = _log_pi(u_ph[k], log_a, log_bar, slack, amplitude)
        y = (lpi_ph[k] + g[k]) / tau
        lp[k] = y - _lse(y)
        pp[k] = np.exp(lp[k])
        marks[i, hidden] = pp[k, :nh]
        Zth[i] = (marks[i] @ th_W.reshape(D, D * L)).reshape(D, L).T
        Zph[i] = (marks[i] @ ph_W.reshape(D, D * L)).reshape(D, L).T
        log_p += log_bar + _concrete_logpdf(lp[k], lpi_th[k], tau)
        log_q += log_bar + _concrete_logpdf(lp[k], lpi_ph[k], tau)

    M = len(mc_t)
    u_mc = potentials(mc_t, times, marks, th_ubar, th_W, centers) if M else np.zeros((0, D))
    comp = 0.0
    for m in range(M):
        for d in observable:
            comp += amplitude * math.exp(_log_sigmoid(u_mc[m, d]))
    comp *= horizon / M if M else 0.0
    log_p -= lambda_bar * horizon + comp
    log_q -= lambda_bar * horizon
    elbo = log_p - log_q

    # reverse sweep
    g_marks = np.zeros((N, D))
    g_th_ubar = np.zeros(D)
    g_th_W = np.zeros((D, D, L))
    g_ph_ubar = np.zeros(D)
    g_ph_W = np.zeros((D, D, L))

    def push(t, gu, W, g_ubar, g_W):
        g_ubar += gu
        back = np.einsum("ftl,t->lf", W, gu)
        for l, j, kap in _windows(times, t, centers):
            g_W[:, :, l] += kap * np.outer(marks[j], gu)
            g_marks[j] += kap * back[l]

    for i in np.nonzero(~is_prop)[0]:
        gu = np.zeros(D)
        gu[obs_dim[i]] = math.exp(_log_sigmoid(-obs_u[i]))
        push(times[i], gu, th_W, g_th_ubar, g_th_W)
    for m in range(M):
        gu = np.zeros(D)
        for d in observable:
            x = u_mc[m, d]
            gu[d] = -horizon / M * amplitude * math.exp(_log_sigmoid(x) + _log_sigmoid(-x))
        push(mc_t[m], gu, th_W, g_th_ubar, g_th_W)

    for k in range(K - 1, -1, -1):
        i = pos[k]
        t = times[i]
        s_th = _softmax(lpi_th[k] - tau * lp[k])
        s_ph = _softmax(lpi_ph[k] - tau * lp[k])
        d_lp = K1 * tau * (s_th - s_ph)
        d_lpi_th = 1.0 - K1 * s_th
        d_lpi_ph = -(1.0 - K1 * s_ph)
        d_lp[:nh] += g_marks[i, hidden] * pp[k, :nh]
        d_y = d_lp - pp[k] * d_lp.sum()
        d_lpi_ph += d_y / tau
        for u_h, rest, d_lpi, W, g_ubar, g_W in (
                (u_th[k], rest_th[k], d_lpi_th, th_W, g_th_ubar, g_th_W),
                (u_ph[k], rest_ph[k], d_lpi_ph, ph_W, g_ph_ubar, g_ph_W)):
            gu = np.zeros(D)
            for a, h in enumerate(hidden):
                ls, lsm = _log_sigmoid(u_h[a]), _log_sigmoid(-u_h[a])
                gu[h] = d_lpi[a] * math.exp(lsm) - d_lpi[nh] * math.exp(log_a + ls + lsm - rest)
            push(t, gu, W, g_ubar, g_W)

    out_marks = np.zeros((K, D))
    out_marks[:, hidden] = pp[:, :nh]
    return {
        "elbo": elbo, "log_p": log_p, "log_q": log_q,
        "g_theta_ubar": g_th_ubar, "g_theta_W": g_th_W,
        "g_phi_ubar": g_ph_ubar, "g_phi_W": g_ph_W,
        "marks": out_marks, "log_marks": lp,
    }

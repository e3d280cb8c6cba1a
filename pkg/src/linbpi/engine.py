"""Compiled round loop shared by the active and passive runners.

The loop runs rounds until one of: the stopping rule fires, an allocation
re-solve is due (control goes back to Python), the pre-drawn random block is
used up, or the round cap is reached. All linear algebra uses small Cholesky
factorizations:

* lambda_min(A) >= c  <=>  A - (c - tol) I has a Cholesky factor (checked until it first holds;
  A only grows in PSD order, so it holds from then on),
* log det(I + A / (uc)) from the factor of I + A / (uc),
* the per-context forced-exploration gate works in an orthonormal basis of the
  context's feature span, where A_t(x) - f_x(t) is d_x x d_x.

``harness.run_active_reference`` runs the same rules with the public numpy
operations and is used to cross-check this loop.
"""
from __future__ import annotations

import numpy as np
from numba import njit

GATE_TOL = 1e-10
TIE_TOL = 1e-12

# slots of the integer state vector
T, PROBE, GATE, LAST_RESOLVE, N_FORCED, N_EMPTY_TRACK, N_DECISION_FALLBACK, CONSUMED = range(8)
N_SLOTS = 8

BLOCK_DONE, STOPPED, RESOLVE_DUE, ROUND_CAP = 0, 1, 2, 3


@njit(cache=True)
def _cholesky(M, L):
    """Lower Cholesky factor of M into L. Returns False if M is not positive definite."""
    n = M.shape[0]
    for j in range(n):
        s = M[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        ljj = np.sqrt(s)
        L[j, j] = ljj
        for i in range(j + 1, n):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / ljj
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def _forward(L, v, out):
    n = L.shape[0]
    for i in range(n):
        s = v[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True)
def _backward(L, v, out):
    n = L.shape[0]
    for i in range(n - 1, -1, -1):
        s = v[i]
        for k in range(i + 1, n):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True)
def _pair_z(num, den):
    if den <= 0.0:
        if num > 0.0:
            return np.inf
        if num < 0.0:
            return -np.inf
        return 0.0
    if num == 0.0:
        return 0.0
    z = num * num / (2.0 * den)
    return z if num > 0.0 else -z


@njit(cache=True)
def _context_stat(phi_x, theta, L, eps, Y, v):
    """(Z^x, decision, used_fallback) for one context given the Cholesky factor of A."""
    K = phi_x.shape[0]
    d = phi_x.shape[1]
    for a in range(K):
        _forward(L, phi_x[a], Y[a])
        s = 0.0
        for k in range(d):
            s += phi_x[a, k] * theta[k]
        v[a] = s
    top = v[0]
    for a in range(1, K):
        if v[a] > top:
            top = v[a]
    n_good = 0
    for a in range(K):
        if (eps == 0.0 and v[a] >= top - TIE_TOL) or (eps > 0.0 and top - v[a] < eps):
            n_good += 1
    fallback = n_good == 0
    best_z = -np.inf
    best_a = -1
    for a in range(K):
        good = (eps == 0.0 and v[a] >= top - TIE_TOL) or (eps > 0.0 and top - v[a] < eps)
        if not (good or fallback):
            continue
        worst = np.inf
        for bb in range(K):
            if bb == a:
                continue
            den = 0.0
            for k in range(d):
                diff = Y[a, k] - Y[bb, k]
                den += diff * diff
            z = _pair_z(v[a] - v[bb] + eps, den)
            if z < worst:
                worst = z
        if best_a < 0 or worst > best_z:
            best_z = worst
            best_a = a
    return best_z, best_a, fallback


@njit(cache=True)
def _stop_check(phi, A, b, eps, log_inv_delta, u, c, ints, rec, work):
    C, K, d = phi.shape
    L = work[0]
    M = work[1]
    if ints[GATE] == 0:
        for i in range(d):
            for j in range(d):
                M[i, j] = A[i, j]
            M[i, i] -= c - GATE_TOL
        if not _cholesky(M, L):
            return False, 0.0
        ints[GATE] = 1
    for i in range(d):
        for j in range(d):
            M[i, j] = A[i, j] / (u * c)
        M[i, i] += 1.0
    if not _cholesky(M, L):
        return False, 0.0
    logdet = 0.0
    for i in range(d):
        logdet += 2.0 * np.log(L[i, i])
    beta = (1.0 + u) * (0.5 * logdet + log_inv_delta)
    if not _cholesky(A, L):
        return False, beta
    tmp = np.empty(d)
    theta = np.empty(d)
    _forward(L, b, tmp)
    _backward(L, tmp, theta)
    Y = np.empty((K, d))
    v = np.empty(K)
    p = ints[PROBE]
    z, a, fb = _context_stat(phi[p], theta, L, eps, Y, v)
    if not z > beta:
        return False, beta
    rec[p] = a
    n_fb = 1 if fb else 0
    for x in range(C):
        if x == p:
            continue
        z, a, fb = _context_stat(phi[x], theta, L, eps, Y, v)
        if not z > beta:
            ints[PROBE] = x
            return False, beta
        rec[x] = a
        if fb:
            n_fb += 1
    ints[N_DECISION_FALLBACK] += n_fb
    return True, beta


@njit(cache=True)
def run_block(phi, means, noise_std, ctx, noise, unif, A, b, counts,
              adaptive, Gx, Sx, Bx, dx, basis, cursor, target, alpha, cdf,
              eps, log_inv_delta, u, c, check_every, max_rounds, resolve_first, resolve_factor,
              ints, rec, acts_out, rews_out):
    """Advance one run through a block of pre-drawn randomness. Returns a status code."""
    C, K, d = phi.shape
    dmax = Gx.shape[1]
    work = np.empty((2, d, d))
    Lg = np.empty((dmax, dmax))
    Mg = np.empty((dmax, dmax))
    psi = np.empty(dmax)
    n = ctx.shape[0]
    i = ints[CONSUMED]
    status = BLOCK_DONE
    while i < n:
        t = ints[T]
        if t >= max_rounds:
            status = ROUND_CAP
            break
        x = ctx[i]
        if adaptive:
            for a in range(K):
                target[x, a] += alpha[x, a]
            nx = 0
            for a in range(K):
                nx += counts[x, a]
            d_x = dx[x]
            force = nx < d_x
            if not force:
                scale = np.sqrt(nx / d_x)
                for p in range(d_x):
                    for q in range(d_x):
                        Mg[p, q] = Gx[x, p, q] - scale * Sx[x, p, q]
                    Mg[p, p] += GATE_TOL
                force = not _cholesky(Mg[:d_x, :d_x], Lg[:d_x, :d_x])
            act = -1
            if not force:
                best = np.inf
                for a in range(K):
                    if target[x, a] > 0.0:
                        dv = counts[x, a] - target[x, a]
                        if dv < best:
                            best = dv
                            act = a
                if act < 0:
                    ints[N_EMPTY_TRACK] += 1
            if act < 0:
                act = basis[x, cursor[x]]
                cursor[x] = (cursor[x] + 1) % d_x
                ints[N_FORCED] += 1
        else:
            act = K - 1
            for a in range(K):
                if unif[i] < cdf[x, a]:
                    act = a
                    break
        r = means[x, act] + noise_std * noise[i]
        f = phi[x, act]
        for p in range(d):
            fp = f[p]
            b[p] += r * fp
            for q in range(d):
                A[p, q] += fp * f[q]
        counts[x, act] += 1
        if adaptive:
            d_x = dx[x]
            for p in range(d_x):
                s = 0.0
                for k in range(d):
                    s += Bx[x, p, k] * f[k]
                psi[p] = s
            for p in range(d_x):
                for q in range(d_x):
                    Gx[x, p, q] += psi[p] * psi[q]
        acts_out[i] = act
        rews_out[i] = r
        i += 1
        ints[CONSUMED] = i
        t += 1
        ints[T] = t
        if check_every > 0 and t % check_every == 0:
            stopped, _ = _stop_check(phi, A, b, eps, log_inv_delta, u, c, ints, rec, work)
            if stopped:
                status = STOPPED
                break
        if adaptive and t >= resolve_first and t >= resolve_factor * ints[LAST_RESOLVE]:
            status = RESOLVE_DUE
            break
    return status

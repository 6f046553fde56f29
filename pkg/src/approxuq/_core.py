"""Compiled particle kernels for the reversible-jump move mixture.

A population is stored as padded arrays:

    k       (N,)        number of active kernels per particle
    a0      (N,)        intercepts
    amps    (N, K)      amplitudes, columns [0, k) active
    taus    (N, K)      kernel precisions
    centers (N, K, M)   kernel centers in the unit cube
    fvals   (N, C)      cached f(x_i) on the assimilated rows [0, n) and the pending row n
    sse     (N,)        sum of squared residuals on rows [0, n)
    r2      (N,)        squared residual on the pending row
    npairs  (N,)        number of merge-eligible kernel pairs

Each move consumes one row of pre-drawn uniforms (length M + 6) and normals
(length M + 1), so results do not depend on how particles are scheduled.
"""
import math

import numpy as np
from numba import njit, prange

# hyperparameter vector layout (see Hyperparameters.as_array)
HP_S, HP_A_TAU, HP_A_MU, HP_A0, HP_B0, HP_A, HP_B, HP_KMAX, HP_M = range(9)
# move configuration vector layout (see MoveConfig.as_array)
MC_C, MC_DX, MC_DA, MC_S1, MC_S2, MC_S3, MC_S4 = range(7)

BIRTH, DEATH, SPLIT, MERGE, UPDATE_AMP, UPDATE_SCALE, UPDATE_LOC = range(7)
N_MOVES = 7

LOG_2PI = math.log(2.0 * math.pi)
LOG_PI = math.log(math.pi)
LOG_2 = math.log(2.0)


def n_uniforms(M):
    return M + 6


def n_normals(M):
    return M + 1


# ---------------------------------------------------------------- densities

@njit(cache=True)
def log_tau_prior(tau, a_tau, a_mu):
    if not tau > 0.0:
        return -np.inf
    return ((a_tau + 1.0) * math.log(a_tau) + (a_tau - 1.0) * math.log(tau)
            - math.log(a_mu) - (a_tau + 1.0) * math.log(a_tau * tau + 1.0 / a_mu))


@njit(cache=True)
def tau_ppf(u, a_tau, a_mu):
    v = u ** (1.0 / a_tau)
    return v / (1.0 - v) / (a_tau * a_mu)


@njit(cache=True)
def amp_term(kk, s2, a0_amp, b0_amp):
    m = kk + 1.0
    shape = a0_amp + 0.5 * m
    return -0.5 * m * LOG_2PI + math.lgamma(shape) - shape * math.log(b0_amp + 0.5 * s2)


@njit(cache=True)
def loglik(sse, r2, n, gamma, a, b):
    shape = a + 0.5 * (n + gamma)
    return math.lgamma(shape) - shape * math.log(b + 0.5 * (sse + gamma * r2))


@njit(cache=True)
def log_ball_volume(R, M):
    return 0.5 * M * LOG_PI - math.lgamma(0.5 * M + 1.0) + M * math.log(R)


@njit(cache=True)
def log_split_jacobian(tau, u_tau, M):
    sq1 = math.sqrt(u_tau)
    sq2 = math.sqrt(1.0 - u_tau)
    return ((M + 1) * LOG_2 + math.log(tau) - 2.0 * math.log(u_tau)
            - 2.0 * math.log(1.0 - u_tau) - math.log(sq1 + sq2))


# ---------------------------------------------------------------- helpers

@njit(cache=True)
def kval(tau, c, x):
    d2 = 0.0
    for m in range(c.shape[0]):
        d = x[m] - c[m]
        d2 += d * d
    return math.exp(-tau * d2)


@njit(cache=True)
def in_cube(c):
    for m in range(c.shape[0]):
        if not (0.0 <= c[m] <= 1.0):
            return False
    return True


@njit(cache=True)
def eligible(a1, t1, c1, a2, t2, c2, dx, da):
    d2 = 0.0
    for m in range(c1.shape[0]):
        d = c1[m] - c2[m]
        d2 += d * d
    return math.sqrt(d2) <= dx * math.sqrt(1.0 / t1 + 1.0 / t2) and abs(a1 - a2) <= da


@njit(cache=True)
def count_with(p, kk, a, t, c, skip1, skip2, amps, taus, centers, dx, da):
    cnt = 0
    for j in range(kk):
        if j == skip1 or j == skip2:
            continue
        if eligible(a, t, c, amps[p, j], taus[p, j], centers[p, j], dx, da):
            cnt += 1
    return cnt


@njit(cache=True)
def count_pairs(p, kk, amps, taus, centers, dx, da):
    cnt = 0
    for i in range(kk):
        for j in range(i + 1, kk):
            if eligible(amps[p, i], taus[p, i], centers[p, i],
                        amps[p, j], taus[p, j], centers[p, j], dx, da):
                cnt += 1
    return cnt


@njit(cache=True)
def raw_weight(m, kk, has_pair, c, s, k_max):
    pb = c / (s + 1.0)
    fixed = (2.0 * pb + 2.0 * c) / 3.0
    if m == BIRTH:
        return pb if kk < k_max else 0.0
    if m == DEATH:
        return c if kk > 0 else 0.0
    if m == SPLIT:
        return pb if (0 < kk < k_max) else 0.0
    if m == MERGE:
        return c if (has_pair and kk > 1) else 0.0
    if m == UPDATE_AMP:
        return fixed
    return fixed if kk > 0 else 0.0


@njit(cache=True)
def move_prob(m, kk, has_pair, c, s, k_max):
    tot = 0.0
    for i in range(N_MOVES):
        tot += raw_weight(i, kk, has_pair, c, s, k_max)
    return raw_weight(m, kk, has_pair, c, s, k_max) / tot


@njit(cache=True)
def select_move(u, kk, has_pair, c, s, k_max):
    tot = 0.0
    for i in range(N_MOVES):
        tot += raw_weight(i, kk, has_pair, c, s, k_max)
    acc = 0.0
    target = u * tot
    last = UPDATE_AMP
    for i in range(N_MOVES):
        w = raw_weight(i, kk, has_pair, c, s, k_max)
        if w > 0.0:
            last = i
            acc += w
            if target < acc:
                return i
    return last


@njit(cache=True)
def sum_a2(p, kk, a0, amps, skip1, skip2):
    s2 = a0[p] * a0[p]
    for j in range(kk):
        if j != skip1 and j != skip2:
            s2 += amps[p, j] * amps[p, j]
    return s2


@njit(cache=True)
def sse_r2(fnew, Y, n, has_next):
    sse = 0.0
    for i in range(n):
        d = Y[i] - fnew[i]
        sse += d * d
    r2 = 0.0
    if has_next:
        d = Y[n] - fnew[n]
        r2 = d * d
    return sse, r2


@njit(cache=True)
def _remove(p, j, kk, amps, taus, centers):
    for i in range(j, kk - 1):
        amps[p, i] = amps[p, i + 1]
        taus[p, i] = taus[p, i + 1]
        centers[p, i, :] = centers[p, i + 1, :]


@njit(cache=True)
def _accept_common(p, fnew, nrows, fvals, sse, r2, npairs, sse_new, r2_new, newpairs):
    for i in range(nrows):
        fvals[p, i] = fnew[i]
    sse[p] = sse_new
    r2[p] = r2_new
    npairs[p] = newpairs


# ---------------------------------------------------------------- moves

@njit(cache=True)
def apply_move(m, p, k, a0, amps, taus, centers, fvals, sse, r2, npairs,
               X, Y, n, has_next, gamma, hp, mc, u, z, fnew, cbuf):
    """Propose move ``m`` for particle ``p`` and apply it if accepted."""
    kk = k[p]
    M = centers.shape[2]
    k_max = int(hp[HP_KMAX])
    s = hp[HP_S]
    a_tau = hp[HP_A_TAU]
    a_mu = hp[HP_A_MU]
    a0_amp = hp[HP_A0]
    b0_amp = hp[HP_B0]
    a_n = hp[HP_A]
    b_n = hp[HP_B]
    c = mc[MC_C]
    dx = mc[MC_DX]
    da = mc[MC_DA]
    P = npairs[p]
    nrows = n + 1 if has_next else n
    ll_old = loglik(sse[p], r2[p], n, gamma, a_n, b_n)
    log_s1 = math.log(s + 1.0)

    if raw_weight(m, kk, P > 0, c, s, k_max) == 0.0:
        return False

    if m == BIRTH:
        s4 = mc[MC_S4]
        a_new = s4 * z[0]
        t_new = tau_ppf(u[4], a_tau, a_mu)
        if not (t_new > 0.0 and t_new < np.inf):
            return False
        c_new = cbuf[0]
        for d in range(M):
            c_new[d] = u[6 + d]
        pos = min(int(u[3] * (kk + 1)), kk)
        lt = log_tau_prior(t_new, a_tau, a_mu)
        s2 = sum_a2(p, kk, a0, amps, -1, -1)
        dprior = -log_s1 + lt + amp_term(kk + 1, s2 + a_new * a_new, a0_amp, b0_amp) \
            - amp_term(kk, s2, a0_amp, b0_amp)
        for i in range(nrows):
            fnew[i] = fvals[p, i] + a_new * kval(t_new, c_new, X[i])
        sse_new, r2_new = sse_r2(fnew, Y, n, has_next)
        dlik = loglik(sse_new, r2_new, n, gamma, a_n, b_n) - ll_old
        newpairs = P + count_with(p, kk, a_new, t_new, c_new, -1, -1, amps, taus, centers, dx, da)
        log_q = -0.5 * LOG_2PI - math.log(s4) - 0.5 * (a_new / s4) ** 2 + lt
        log_a = (dprior + dlik + math.log(move_prob(DEATH, kk + 1, newpairs > 0, c, s, k_max))
                 - math.log(move_prob(BIRTH, kk, P > 0, c, s, k_max)) - log_q)
        if math.log(u[1]) < log_a:
            for i in range(kk, pos, -1):
                amps[p, i] = amps[p, i - 1]
                taus[p, i] = taus[p, i - 1]
                centers[p, i, :] = centers[p, i - 1, :]
            amps[p, pos] = a_new
            taus[p, pos] = t_new
            centers[p, pos, :] = c_new
            k[p] = kk + 1
            _accept_common(p, fnew, nrows, fvals, sse, r2, npairs, sse_new, r2_new, newpairs)
            return True
        return False

    if m == DEATH:
        s4 = mc[MC_S4]
        j = min(int(u[2] * kk), kk - 1)
        a_j = amps[p, j]
        t_j = taus[p, j]
        c_j = centers[p, j]
        lt = log_tau_prior(t_j, a_tau, a_mu)
        s2 = sum_a2(p, kk, a0, amps, -1, -1)
        s2_new = sum_a2(p, kk, a0, amps, j, -1)
        dprior = log_s1 - lt + amp_term(kk - 1, s2_new, a0_amp, b0_amp) - amp_term(kk, s2, a0_amp, b0_amp)
        for i in range(nrows):
            fnew[i] = fvals[p, i] - a_j * kval(t_j, c_j, X[i])
        sse_new, r2_new = sse_r2(fnew, Y, n, has_next)
        dlik = loglik(sse_new, r2_new, n, gamma, a_n, b_n) - ll_old
        newpairs = P - count_with(p, kk, a_j, t_j, c_j, j, -1, amps, taus, centers, dx, da)
        log_q = -0.5 * LOG_2PI - math.log(s4) - 0.5 * (a_j / s4) ** 2 + lt
        log_a = (dprior + dlik + math.log(move_prob(BIRTH, kk - 1, newpairs > 0, c, s, k_max))
                 - math.log(move_prob(DEATH, kk, P > 0, c, s, k_max)) + log_q)
        if math.log(u[1]) < log_a:
            _remove(p, j, kk, amps, taus, centers)
            k[p] = kk - 1
            _accept_common(p, fnew, nrows, fvals, sse, r2, npairs, sse_new, r2_new, newpairs)
            return True
        return False

    if m == SPLIT:
        j = min(int(u[2] * kk), kk - 1)
        ut = u[3]
        if not (0.0 < ut < 1.0):
            return False
        a = amps[p, j]
        t = taus[p, j]
        cj = centers[p, j]
        R = dx / (2.0 * math.sqrt(t))
        norm = 0.0
        for d in range(M):
            norm += z[1 + d] * z[1 + d]
        norm = math.sqrt(norm)
        if norm == 0.0:
            return False
        rad = R * u[4] ** (1.0 / M)
        ua = (u[5] - 0.5) * da
        t1 = t / ut
        t2 = t / (1.0 - ut)
        sq1 = math.sqrt(ut)
        sq2 = math.sqrt(1.0 - ut)
        ahat = (a + ua * (sq1 - sq2)) / (sq1 + sq2)
        a1 = ahat - ua
        a2 = ahat + ua
        c1 = cbuf[0]
        c2 = cbuf[1]
        for d in range(M):
            ux = z[1 + d] / norm * rad
            c1[d] = cj[d] - ux
            c2[d] = cj[d] + ux
        if not (in_cube(c1) and in_cube(c2)):
            return False
        if not eligible(a1, t1, c1, a2, t2, c2, dx, da):
            return False
        s2 = sum_a2(p, kk, a0, amps, -1, -1)
        s2_new = sum_a2(p, kk, a0, amps, j, -1) + a1 * a1 + a2 * a2
        dprior = (-log_s1 + log_tau_prior(t1, a_tau, a_mu) + log_tau_prior(t2, a_tau, a_mu)
                  - log_tau_prior(t, a_tau, a_mu)
                  + amp_term(kk + 1, s2_new, a0_amp, b0_amp) - amp_term(kk, s2, a0_amp, b0_amp))
        for i in range(nrows):
            fnew[i] = (fvals[p, i] - a * kval(t, cj, X[i])
                       + a1 * kval(t1, c1, X[i]) + a2 * kval(t2, c2, X[i]))
        sse_new, r2_new = sse_r2(fnew, Y, n, has_next)
        dlik = loglik(sse_new, r2_new, n, gamma, a_n, b_n) - ll_old
        newpairs = (P - count_with(p, kk, a, t, cj, j, -1, amps, taus, centers, dx, da)
                    + count_with(p, kk, a1, t1, c1, j, -1, amps, taus, centers, dx, da)
                    + count_with(p, kk, a2, t2, c2, j, -1, amps, taus, centers, dx, da) + 1)
        log_q = -log_ball_volume(R, M) - math.log(da)
        log_a = (dprior + dlik
                 + math.log(move_prob(MERGE, kk + 1, True, c, s, k_max)) - math.log(newpairs)
                 + math.log(kk + 1.0) + math.log(kk) - LOG_2
                 - math.log(move_prob(SPLIT, kk, P > 0, c, s, k_max))
                 - log_q + log_split_jacobian(t, ut, M))
        if math.log(u[1]) < log_a:
            amps[p, j] = a1
            taus[p, j] = t1
            centers[p, j, :] = c1
            amps[p, kk] = a2
            taus[p, kk] = t2
            centers[p, kk, :] = c2
            k[p] = kk + 1
            _accept_common(p, fnew, nrows, fvals, sse, r2, npairs, sse_new, r2_new, newpairs)
            return True
        return False

    if m == MERGE:
        r = min(int(u[2] * P), P - 1)
        i1 = -1
        i2 = -1
        seen = 0
        for i in range(kk):
            for j in range(i + 1, kk):
                if eligible(amps[p, i], taus[p, i], centers[p, i],
                            amps[p, j], taus[p, j], centers[p, j], dx, da):
                    if seen == r:
                        i1 = i
                        i2 = j
                    seen += 1
        if i1 < 0 or seen != P:
            return False
        a1 = amps[p, i1]
        t1 = taus[p, i1]
        c1 = centers[p, i1]
        a2 = amps[p, i2]
        t2 = taus[p, i2]
        c2 = centers[p, i2]
        inv = 1.0 / t1 + 1.0 / t2
        t = 1.0 / inv
        ut = (1.0 / t1) / inv
        if not (0.0 < ut < 1.0):
            return False
        a = math.sqrt(t) * (a1 / math.sqrt(t1) + a2 / math.sqrt(t2))
        cm = cbuf[2]
        for d in range(M):
            cm[d] = 0.5 * (c1[d] + c2[d])
        s2 = sum_a2(p, kk, a0, amps, -1, -1)
        s2_new = sum_a2(p, kk, a0, amps, i1, i2) + a * a
        dprior = (log_s1 + log_tau_prior(t, a_tau, a_mu) - log_tau_prior(t1, a_tau, a_mu)
                  - log_tau_prior(t2, a_tau, a_mu)
                  + amp_term(kk - 1, s2_new, a0_amp, b0_amp) - amp_term(kk, s2, a0_amp, b0_amp))
        for i in range(nrows):
            fnew[i] = (fvals[p, i] - a1 * kval(t1, c1, X[i]) - a2 * kval(t2, c2, X[i])
                       + a * kval(t, cm, X[i]))
        sse_new, r2_new = sse_r2(fnew, Y, n, has_next)
        dlik = loglik(sse_new, r2_new, n, gamma, a_n, b_n) - ll_old
        cnt1 = count_with(p, kk, a1, t1, c1, i1, -1, amps, taus, centers, dx, da)
        cnt2 = count_with(p, kk, a2, t2, c2, i2, -1, amps, taus, centers, dx, da)
        newpairs = (P - (cnt1 + cnt2 - 1)
                    + count_with(p, kk, a, t, cm, i1, i2, amps, taus, centers, dx, da))
        R = dx / (2.0 * math.sqrt(t))
        log_q = -log_ball_volume(R, M) - math.log(da)
        log_a = (dprior + dlik - math.log(kk)
                 + math.log(move_prob(SPLIT, kk - 1, newpairs > 0, c, s, k_max))
                 - math.log(kk - 1.0) + LOG_2 + log_q - log_split_jacobian(t, ut, M)
                 - math.log(move_prob(MERGE, kk, True, c, s, k_max)) + math.log(P))
        if math.log(u[1]) < log_a:
            amps[p, i1] = a
            taus[p, i1] = t
            centers[p, i1, :] = cm
            _remove(p, i2, kk, amps, taus, centers)
            k[p] = kk - 1
            _accept_common(p, fnew, nrows, fvals, sse, r2, npairs, sse_new, r2_new, newpairs)
            return True
        return False

    if m == UPDATE_AMP:
        idx = min(int(u[2] * (kk + 1)), kk)
        delta = mc[MC_S1] * z[0]
        s2 = sum_a2(p, kk, a0, amps, -1, -1)
        newpairs = P
        if idx == 0:
            old = a0[p]
            for i in range(nrows):
                fnew[i] = fvals[p, i] + delta
        else:
            j = idx - 1
            old = amps[p, j]
            for i in range(nrows):
                fnew[i] = fvals[p, i] + delta * kval(taus[p, j], centers[p, j], X[i])
            newpairs = (P - count_with(p, kk, old, taus[p, j], centers[p, j], j, -1, amps, taus, centers, dx, da)
                        + count_with(p, kk, old + delta, taus[p, j], centers[p, j], j, -1,
                                     amps, taus, centers, dx, da))
        new = old + delta
        s2_new = s2 - old * old + new * new
        dprior = amp_term(kk, s2_new, a0_amp, b0_amp) - amp_term(kk, s2, a0_amp, b0_amp)
        sse_new, r2_new = sse_r2(fnew, Y, n, has_next)
        dlik = loglik(sse_new, r2_new, n, gamma, a_n, b_n) - ll_old
        log_a = (dprior + dlik + math.log(move_prob(UPDATE_AMP, kk, newpairs > 0, c, s, k_max))
                 - math.log(move_prob(UPDATE_AMP, kk, P > 0, c, s, k_max)))
        if math.log(u[1]) < log_a:
            if idx == 0:
                a0[p] = new
            else:
                amps[p, idx - 1] = new
            _accept_common(p, fnew, nrows, fvals, sse, r2, npairs, sse_new, r2_new, newpairs)
            return True
        return False

    if m == UPDATE_SCALE:
        j = min(int(u[2] * kk), kk - 1)
        t = taus[p, j]
        t_new = t * math.exp(mc[MC_S2] * z[0])
        if not (t_new > 0.0 and t_new < np.inf):
            return False
        a = amps[p, j]
        cj = centers[p, j]
        for i in range(nrows):
            fnew[i] = fvals[p, i] + a * (kval(t_new, cj, X[i]) - kval(t, cj, X[i]))
        sse_new, r2_new = sse_r2(fnew, Y, n, has_next)
        dlik = loglik(sse_new, r2_new, n, gamma, a_n, b_n) - ll_old
        dprior = log_tau_prior(t_new, a_tau, a_mu) - log_tau_prior(t, a_tau, a_mu)
        newpairs = (P - count_with(p, kk, a, t, cj, j, -1, amps, taus, centers, dx, da)
                    + count_with(p, kk, a, t_new, cj, j, -1, amps, taus, centers, dx, da))
        log_a = (dprior + dlik + math.log(t_new / t)
                 + math.log(move_prob(UPDATE_SCALE, kk, newpairs > 0, c, s, k_max))
                 - math.log(move_prob(UPDATE_SCALE, kk, P > 0, c, s, k_max)))
        if math.log(u[1]) < log_a:
            taus[p, j] = t_new
            _accept_common(p, fnew, nrows, fvals, sse, r2, npairs, sse_new, r2_new, newpairs)
            return True
        return False

    # UPDATE_LOC
    j = min(int(u[2] * kk), kk - 1)
    cj = centers[p, j]
    c_new = cbuf[0]
    for d in range(M):
        c_new[d] = cj[d] + mc[MC_S3] * z[1 + d]
    if not in_cube(c_new):
        return False
    a = amps[p, j]
    t = taus[p, j]
    for i in range(nrows):
        fnew[i] = fvals[p, i] + a * (kval(t, c_new, X[i]) - kval(t, cj, X[i]))
    sse_new, r2_new = sse_r2(fnew, Y, n, has_next)
    dlik = loglik(sse_new, r2_new, n, gamma, a_n, b_n) - ll_old
    newpairs = (P - count_with(p, kk, a, t, cj, j, -1, amps, taus, centers, dx, da)
                + count_with(p, kk, a, t, c_new, j, -1, amps, taus, centers, dx, da))
    log_a = (dlik + math.log(move_prob(UPDATE_LOC, kk, newpairs > 0, c, s, k_max))
             - math.log(move_prob(UPDATE_LOC, kk, P > 0, c, s, k_max)))
    if math.log(u[1]) < log_a:
        centers[p, j, :] = c_new
        _accept_common(p, fnew, nrows, fvals, sse, r2, npairs, sse_new, r2_new, newpairs)
        return True
    return False


# ---------------------------------------------------------------- population-level drivers

@njit(cache=True, parallel=True)
def sweep_population(k, a0, amps, taus, centers, fvals, sse, r2, npairs,
                     X, Y, n, has_next, gamma, hp, mc, U, Z, stats):
    """Run ``U.shape[1]`` mixture moves on every particle; stats[p, m] = (proposed, accepted)."""
    N = k.shape[0]
    T = U.shape[1]
    M = centers.shape[2]
    k_max = int(hp[HP_KMAX])
    for p in prange(N):
        fnew = np.empty(fvals.shape[1])
        cbuf = np.empty((3, M))
        for t in range(T):
            u = U[p, t]
            m = select_move(u[0], k[p], npairs[p] > 0, mc[MC_C], hp[HP_S], k_max)
            acc = apply_move(m, p, k, a0, amps, taus, centers, fvals, sse, r2, npairs,
                             X, Y, n, has_next, gamma, hp, mc, u, Z[p, t], fnew, cbuf)
            stats[p, m, 0] += 1
            if acc:
                stats[p, m, 1] += 1


@njit(cache=True)
def single_move(m, k, a0, amps, taus, centers, fvals, sse, r2, npairs,
                X, Y, n, has_next, gamma, hp, mc, u, z):
    """Apply one forced move to particle 0; returns the acceptance flag."""
    fnew = np.empty(fvals.shape[1])
    cbuf = np.empty((3, centers.shape[2]))
    return apply_move(m, 0, k, a0, amps, taus, centers, fvals, sse, r2, npairs,
                      X, Y, n, has_next, gamma, hp, mc, u, z, fnew, cbuf)


@njit(cache=True, parallel=True)
def evaluate_population(k, a0, amps, taus, centers, Xq):
    """f(x; theta_i) for every particle i and query row; shape (N, S)."""
    N = k.shape[0]
    S = Xq.shape[0]
    out = np.empty((N, S))
    for p in prange(N):
        for q in range(S):
            v = a0[p]
            for j in range(k[p]):
                v += amps[p, j] * kval(taus[p, j], centers[p, j], Xq[q])
            out[p, q] = v
    return out


@njit(cache=True, parallel=True)
def refresh_caches(k, a0, amps, taus, centers, fvals, sse, r2, npairs, X, Y, n, has_next, dx, da):
    """Recompute every cached quantity from the particle parameters."""
    N = k.shape[0]
    nrows = n + 1 if has_next else n
    for p in prange(N):
        for i in range(nrows):
            v = a0[p]
            for j in range(k[p]):
                v += amps[p, j] * kval(taus[p, j], centers[p, j], X[i])
            fvals[p, i] = v
        s_, r_ = sse_r2(fvals[p], Y, n, has_next)
        sse[p] = s_
        r2[p] = r_
        npairs[p] = count_pairs(p, k[p], amps, taus, centers, dx, da)

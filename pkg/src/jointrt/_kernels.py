"""Compiled inner loop of the primal-dual solver.

The loop mirrors the array-level operators of :mod:`jointrt.proximal`
(``apply_K``, ``adjoint_K``, the proximity operators); the test-suite checks
one against the other.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _prox_kl_scalar(x, a_shift, c):
    # nonnegative root of r^2 + (a_shift - x) r - c = 0, stable on both signs
    a = x - a_shift
    if c <= 0.0:
        return a if a > 0.0 else 0.0
    disc = math.sqrt(a * a + 4.0 * c)
    if a >= 0.0:
        return 0.5 * (a + disc)
    return 2.0 * c / (disc - a)


@njit(cache=True)
def _matmul(B, X, out):
    C, T = X.shape
    for i in range(C):
        for t in range(T):
            out[i, t] = 0.0
        for j in range(C):
            b = B[i, j]
            if b != 0.0:
                for t in range(T):
                    out[i, t] += b * X[j, t]


@njit(cache=True)
def objective(Z, phi_z, w, B, use_spatial, lam_t, lam_s, R):
    C, T = R.shape
    fid = 0.0
    for c in range(C):
        for t in range(T):
            if w[c, t] == 0.0:
                continue
            p = R[c, t] * phi_z[c, t]
            z = Z[c, t]
            if z > 0.0:
                if p <= 0.0:
                    return np.inf
                fid += w[c, t] * (z * math.log(z / p) + p - z)
            else:
                fid += w[c, t] * p
    tv = 0.0
    for c in range(C):
        for t in range(T - 2):
            tv += abs(R[c, t] - 2.0 * R[c, t + 1] + R[c, t + 2])
    sp = 0.0
    if use_spatial:
        BR = np.empty_like(R)
        _matmul(B, R, BR)
        for i in range(C):
            for t in range(T):
                sp += BR[i, t] * BR[i, t]
    return fid + lam_t * tv + lam_s * sp


@njit(cache=True)
def cp_loop(Z, phi_z, w, B, use_spatial, lam_t, lam_s, tau, sigma, eps, k_max,
            R0, Qt0, Qs0, check_every):
    C, T = R0.shape
    R = R0.copy()
    Qt = Qt0.copy()
    Qs = Qs0.copy()
    Rbar = R0.copy()
    Rnew = np.empty_like(R)
    V = np.empty_like(R)
    BR = np.empty_like(R)
    shrink = 1.0 / (1.0 + sigma / (2.0 * lam_s)) if use_spatial else 0.0

    best_R = R.copy()
    best_Qt = Qt.copy()
    best_Qs = Qs.copy()
    best_obj = objective(Z, phi_z, w, B, use_spatial, lam_t, lam_s, R)

    k = 0
    converged = False
    while k < k_max:
        k += 1
        # dual ascent: prox of sigma G^* at Q + sigma K Rbar
        dq2 = 0.0
        q2 = 0.0
        for c in range(C):
            for t in range(T - 2):
                old = Qt[c, t]
                q2 += old * old
                v = old + sigma * (Rbar[c, t] - 2.0 * Rbar[c, t + 1] + Rbar[c, t + 2])
                if v > lam_t:
                    v = lam_t
                elif v < -lam_t:
                    v = -lam_t
                Qt[c, t] = v
                dq2 += (v - old) * (v - old)
        if use_spatial:
            _matmul(B, Rbar, BR)
            for i in range(C):
                for t in range(T):
                    old = Qs[i, t]
                    q2 += old * old
                    v = (old + sigma * BR[i, t]) * shrink
                    Qs[i, t] = v
                    dq2 += (v - old) * (v - old)

        # primal descent: V = R - tau K^T Q
        for c in range(C):
            for t in range(T):
                V[c, t] = 0.0
        for c in range(C):
            for t in range(T - 2):
                q = Qt[c, t]
                V[c, t] += q
                V[c, t + 1] -= 2.0 * q
                V[c, t + 2] += q
        if use_spatial:
            # V += B^T Qs
            for i in range(C):
                for j in range(C):
                    b = B[i, j]
                    if b != 0.0:
                        for t in range(T):
                            V[j, t] += b * Qs[i, t]
        dr2 = 0.0
        r2 = 0.0
        for c in range(C):
            for t in range(T):
                x = R[c, t] - tau * V[c, t]
                wc = w[c, t]
                rn = _prox_kl_scalar(x, tau * wc * phi_z[c, t], tau * wc * Z[c, t])
                Rnew[c, t] = rn
                d = rn - R[c, t]
                dr2 += d * d
                r2 += R[c, t] * R[c, t]
        for c in range(C):
            for t in range(T):
                Rbar[c, t] = 2.0 * Rnew[c, t] - R[c, t]
                R[c, t] = Rnew[c, t]

        rel_r = math.sqrt(dr2) / max(math.sqrt(r2), 1e-300)
        rel_q = math.sqrt(dq2) / max(math.sqrt(q2), 1e-300)
        if max(rel_r, rel_q) <= eps:
            converged = True
        if converged or k % check_every == 0 or k == k_max:
            obj = objective(Z, phi_z, w, B, use_spatial, lam_t, lam_s, R)
            if obj <= best_obj:
                best_obj = obj
                best_R[:, :] = R
                best_Qt[:, :] = Qt
                best_Qs[:, :] = Qs
        if converged:
            break
    return best_R, best_Qt, best_Qs, k, converged, best_obj

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled graph-viscosity kernels (same arithmetic as _pykernels)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, isfinite, INFINITY

cnp.import_array()


cdef inline double dmax(double a, double b) noexcept nogil:
    return a if a > b else b


cdef inline double sw_scale(double h, double hcut) noexcept nogil:
    cdef double hm = dmax(h, hcut)
    cdef double denom = h * h + hm * hm
    if denom > 0.0:
        return 2.0 * h / denom
    return 0.0


cdef inline double sw_factor(double hs, double h) noexcept nogil:
    cdef double r
    if h > 0.0:
        r = hs / h
    else:
        r = 0.0
    if r > 1.0:
        return sqrt(0.5 * r * (1.0 + r))
    return 1.0


cdef inline double sw_lambda(const double* UL, const double* UR, double nx, double ny,
                             double g, double hcut) noexcept nogil:
    cdef double hL = dmax(UL[0], 0.0)
    cdef double hR = dmax(UR[0], 0.0)
    cdef double sL = sw_scale(UL[0], hcut)
    cdef double sR = sw_scale(UR[0], hcut)
    cdef double vL = (UL[1] * sL) * nx + (UL[2] * sL) * ny
    cdef double vR = (UR[1] * sR) * nx + (UR[2] * sR) * ny
    cdef double cL = sqrt(g * hL)
    cdef double cR = sqrt(g * hR)
    cdef double cs = dmax(0.5 * (cL + cR) + 0.25 * (vL - vR), 0.0)
    cdef double hs = cs * cs / g
    cdef double lam1, lam3
    # states at or below the cutoff depth count as dry
    if hL > hcut:
        lam1 = vL - cL * sw_factor(hs, hL)
    else:
        lam1 = vR - 2.0 * cR
        if vL - cL < lam1:
            lam1 = vL - cL
    if hR > hcut:
        lam3 = vR + cR * sw_factor(hs, hR)
    else:
        lam3 = vL + 2.0 * cL
        if vR + cR > lam3:
            lam3 = vR + cR
    return dmax(dmax(-lam1, lam3), 0.0)


cdef inline void sw_flux(const double* U, double* F, double g, double hcut) noexcept nogil:
    # F laid out as F[k*2 + d]
    cdef double h = U[0]
    cdef double s = sw_scale(h, hcut)
    cdef double vx = U[1] * s
    cdef double vy = U[2] * s
    cdef double p = 0.5 * g * h * h
    F[0] = h * vx
    F[1] = h * vy
    F[2] = U[1] * vx + p
    F[3] = U[1] * vy
    F[4] = U[2] * vx
    F[5] = U[2] * vy + p


cdef inline double eu_inv_rho(double rho, double rho_vac) noexcept nogil:
    if rho > rho_vac:
        return 1.0 / rho
    return 0.0


cdef inline double eu_pressure(const double* U, double gamma, double rho_vac) noexcept nogil:
    cdef double inv = eu_inv_rho(U[0], rho_vac)
    cdef double vx = U[1] * inv
    cdef double vy = U[2] * inv
    return (gamma - 1.0) * (U[3] - 0.5 * (U[1] * vx + U[2] * vy))


cdef inline double eu_lambda(const double* UL, const double* UR, double nx, double ny,
                             double gm, double rho_vac) noexcept nogil:
    cdef double tiny = 1e-300
    cdef double rhoL = dmax(UL[0], tiny)
    cdef double rhoR = dmax(UR[0], tiny)
    cdef double iL = eu_inv_rho(UL[0], rho_vac)
    cdef double iR = eu_inv_rho(UR[0], rho_vac)
    cdef double uL = (UL[1] * iL) * nx + (UL[2] * iL) * ny
    cdef double uR = (UR[1] * iR) * nx + (UR[2] * iR) * ny
    cdef double pL = dmax(eu_pressure(UL, gm, rho_vac), tiny)
    cdef double pR = dmax(eu_pressure(UR, gm, rho_vac), tiny)
    cdef double cL = sqrt(gm * pL / rhoL)
    cdef double cR = sqrt(gm * pR / rhoR)
    cdef double expo = (gm - 1.0) / (2.0 * gm)
    cdef double num = dmax(cL + cR - 0.5 * (gm - 1.0) * (uR - uL), 0.0)
    cdef double den = cL * pow(pL, -expo) + cR * pow(pR, -expo)
    cdef double ps = pow(num / den, 1.0 / expo)
    cdef double k = (gm + 1.0) / (2.0 * gm)
    cdef double lam1 = uL - cL * sqrt(1.0 + k * dmax((ps - pL) / pL, 0.0))
    cdef double lam3 = uR + cR * sqrt(1.0 + k * dmax((ps - pR) / pR, 0.0))
    return dmax(dmax(-lam1, lam3), 0.0)


cdef inline void eu_flux(const double* U, double* F, double gamma, double rho_vac) noexcept nogil:
    cdef double inv = eu_inv_rho(U[0], rho_vac)
    cdef double vx = U[1] * inv
    cdef double vy = U[2] * inv
    cdef double p = (gamma - 1.0) * (U[3] - 0.5 * (U[1] * vx + U[2] * vy))
    F[0] = U[1]
    F[1] = U[2]
    F[2] = U[1] * vx + p
    F[3] = U[1] * vy
    F[4] = U[2] * vx
    F[5] = U[2] * vy + p
    F[6] = vx * (U[3] + p)
    F[7] = vy * (U[3] + p)


cdef inline double lam(int sid, const double* UL, const double* UR, double nx, double ny,
                       double p0, double p1) noexcept nogil:
    if sid == 0:
        return sw_lambda(UL, UR, nx, ny, p0, p1)
    return eu_lambda(UL, UR, nx, ny, p0, p1)


def low_order_rhs(int system_id, const double[::1] params, const double[:, ::1] U,
                  const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                  const double[::1] cx, const double[::1] cy,
                  const double[::1] cxT, const double[::1] cyT):
    """Return ``(rhs, dsum)`` of the low-order graph-viscosity operator.

    ``rhs_i = sum_{j != i} [-(f(U_j) - f(U_i)) . c_ij + d_ij (U_j - U_i)]``.
    """
    cdef Py_ssize_t n = U.shape[0]
    cdef Py_ssize_t m = U.shape[1]
    if system_id == 0 and m != 3:
        raise ValueError("shallow water expects 3 components")
    if system_id == 1 and m != 4:
        raise ValueError("euler expects 4 components")
    if system_id not in (0, 1):
        raise ValueError("unknown system id")
    cdef double p0 = params[0]
    cdef double p1 = params[1]
    F_arr = np.empty((n, m * 2), dtype=np.float64)
    rhs_arr = np.zeros((n, m), dtype=np.float64)
    dsum_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] F = F_arr
    cdef double[:, ::1] rhs = rhs_arr
    cdef double[::1] dsum = dsum_arr
    cdef Py_ssize_t i, j, e, k
    cdef double nrm, nrmT, lij, lji, d, ax, ay
    with nogil:
        for i in range(n):
            if system_id == 0:
                sw_flux(&U[i, 0], &F[i, 0], p0, p1)
            else:
                eu_flux(&U[i, 0], &F[i, 0], p0, p1)
        for i in range(n):
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                if j == i:
                    continue
                ax = cx[e]
                ay = cy[e]
                for k in range(m):
                    rhs[i, k] -= (F[j, 2 * k] - F[i, 2 * k]) * ax + (F[j, 2 * k + 1] - F[i, 2 * k + 1]) * ay
                nrm = sqrt(ax * ax + ay * ay)
                nrmT = sqrt(cxT[e] * cxT[e] + cyT[e] * cyT[e])
                lij = 0.0
                lji = 0.0
                if nrm > 0.0:
                    lij = lam(system_id, &U[i, 0], &U[j, 0], ax / nrm, ay / nrm, p0, p1) * nrm
                if nrmT > 0.0:
                    lji = lam(system_id, &U[j, 0], &U[i, 0], cxT[e] / nrmT, cyT[e] / nrmT, p0, p1) * nrmT
                d = dmax(lij, lji)
                dsum[i] += d
                for k in range(m):
                    rhs[i, k] += d * (U[j, k] - U[i, k])
    return rhs_arr, dsum_arr


# ---------------------------------------------------------------------------
# element projection limiter


cdef inline double first_root(double a, double b, double c) noexcept nogil:
    """Largest l in [0, 1] with a s^2 + b s + c >= 0 on [0, l]."""
    cdef double tol = 1e-14 * (fabs(a) + fabs(b) + fabs(c))
    cdef double out = 1.0
    cdef double disc, sq, qq, r, first = INFINITY
    if c > tol and a + b + c > tol:
        return 1.0
    if c < -tol:
        out = 0.0
    disc = dmax(b * b - 4.0 * a * c, 0.0)
    sq = sqrt(disc)
    qq = -0.5 * (b + (sq if b >= 0 else -sq))
    if a != 0.0:
        r = qq / a
        if isfinite(r) and r > 0.0 and r < first:
            first = r
    if qq != 0.0:
        r = c / qq
        if isfinite(r) and r > 0.0 and r < first:
            first = r
    if c >= -tol and first <= 1.0 and (a + b + c < -tol or first < 1.0):
        out = first if first > 0.0 else 0.0
    if fabs(c) <= tol and b < -tol:
        out = 0.0
    return out


def element_limits(int system_id, const double[:, :, ::1] low, const double[:, :, :, ::1] P,
                   const double[:, ::1] lo, const double[:, ::1] hi, const double[:, ::1] cmin,
                   const cnp.int64_t[::1] lin, double safety):
    """Symmetric pair limiters ``L[c, i, j]`` of the element projection.

    Each pair gets the largest ``l`` in [0, 1] with ``low_i + l P_ij``
    inside the bounds of its cell (linear bounds two-sided, specific
    internal energy bounded below for Euler); then ``L = min(l_ij, l_ji)``.
    """
    cdef Py_ssize_t nc = P.shape[0], n = P.shape[1], m = P.shape[3], nl = lin.shape[0]
    cdef Py_ssize_t c, i, j, k, q
    cdef double l, d, u, t, emin, a, b, cc, r, E, pr, pE, m1, m2, p1, p2
    cdef bint nonzero
    out = np.empty((nc, n, n))
    cdef double[:, :, ::1] L = out
    with nogil:
        for c in range(nc):
            for i in range(n):
                for j in range(n):
                    l = INFINITY
                    for q in range(nl):
                        k = lin[q]
                        d = P[c, i, j, k]
                        u = low[c, i, k]
                        if d > 0.0:
                            t = (hi[c, q] - u) / d
                            if t < l:
                                l = t
                        elif d < 0.0:
                            t = (lo[c, q] - u) / d
                            if t < l:
                                l = t
                    if l < 1.0:
                        l = l * (1.0 - safety)
                    if l > 1.0:
                        l = 1.0
                    if l < 0.0:
                        l = 0.0
                    if system_id == 1 and l > 0.0:
                        nonzero = False
                        for k in range(m):
                            if P[c, i, j, k] != 0.0:
                                nonzero = True
                        if nonzero:
                            emin = cmin[c, 0]
                            r, m1, m2, E = low[c, i, 0], low[c, i, 1], low[c, i, 2], low[c, i, 3]
                            pr = P[c, i, j, 0] * l
                            p1 = P[c, i, j, 1] * l
                            p2 = P[c, i, j, 2] * l
                            pE = P[c, i, j, 3] * l
                            a = pr * pE - 0.5 * (p1 * p1 + p2 * p2) - emin * pr * pr
                            b = r * pE + pr * E - (m1 * p1 + m2 * p2) - 2.0 * emin * r * pr
                            cc = r * E - 0.5 * (m1 * m1 + m2 * m2) - emin * r * r
                            l = l * first_root(a, b, cc)
                    L[c, i, j] = l
            for i in range(n):
                for j in range(i + 1, n):
                    if L[c, j, i] < L[c, i, j]:
                        L[c, i, j] = L[c, j, i]
                    else:
                        L[c, j, i] = L[c, i, j]
    return out


def element_directions(const double[:, ::1] b, const double[:, :, ::1] R, const double[:, :, ::1] r,
                       const double[::1] coef):
    """``P[c, i, j] = coef_i (b_ij R_j - b_ji R_i + (r_i - r_j) / n)``."""
    cdef Py_ssize_t nc = R.shape[0], n = R.shape[1], m = R.shape[2]
    cdef Py_ssize_t c, i, j, k
    cdef double inv_n = 1.0 / n
    out = np.empty((nc, n, n, m))
    cdef double[:, :, :, ::1] P = out
    with nogil:
        for c in range(nc):
            for i in range(n):
                for j in range(n):
                    for k in range(m):
                        P[c, i, j, k] = coef[i] * (
                            (b[i, j] * R[c, j, k] - r[c, j, k] * inv_n) - (b[j, i] * R[c, i, k] - r[c, i, k] * inv_n)
                        )
    return out

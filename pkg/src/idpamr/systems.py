"""Hyperbolic systems: fluxes, admissible sets and wave-speed bounds.

All functions are vectorised over leading axes; states have shape
``(..., m)`` and directions ``(..., 2)``.
"""
from __future__ import annotations

import numpy as np


class HyperbolicSystem:
    name: str = ""
    n_comp: int = 0
    components: tuple[str, ...] = ()
    #: components with two-sided (min, max) bounds in the limiter
    linear_components: tuple[int, ...] = ()
    #: names of quasi-concave quantities with one-sided lower bounds
    concave_names: tuple[str, ...] = ()
    constraint_names: tuple[str, ...] = ()
    indicator_names: tuple[str, ...] = ()
    system_id: int = -1

    def flux(self, U):
        raise NotImplementedError

    def max_wave_speed(self, UL, UR, n):
        raise NotImplementedError

    def constraint_values(self, U):
        raise NotImplementedError

    def concave_values(self, U):
        return np.zeros(np.shape(U)[:-1] + (0,))

    def concave_line_limit(self, U, P, lower):
        return np.ones(np.shape(U)[:-1])

    def is_admissible(self, U):
        raise NotImplementedError

    def indicator_quantity(self, U, name: str):
        raise NotImplementedError

    def kernel_params(self) -> np.ndarray:
        raise NotImplementedError

    def slip_momentum(self) -> tuple[int, int]:
        """Indices of the momentum components."""
        return (1, 2)


class ShallowWater(HyperbolicSystem):
    """Shallow water without topography: U = (h, q_x, q_y).

    Velocities are desingularised as ``v = 2 h q / (h^2 + max(h, h_cut)^2)``,
    which equals ``q / h`` whenever ``h >= h_cut``.  The mass flux is
    ``h v`` so that dry states (h = 0) carry no mass.
    """

    name = "shallow_water"
    n_comp = 3
    components = ("h", "q_x", "q_y")
    linear_components = (0,)
    constraint_names = ("h",)
    indicator_names = ("h",)
    system_id = 0

    def __init__(self, g: float = 9.81, h_cut: float = 1e-8):
        self.g = float(g)
        self.h_cut = float(h_cut)

    def velocity(self, U):
        U = np.asarray(U, dtype=float)
        h = U[..., 0]
        denom = h * h + np.maximum(h, self.h_cut) ** 2
        scale = np.divide(2.0 * h, denom, out=np.zeros_like(h), where=denom > 0)
        return U[..., 1:3] * scale[..., None]

    def flux(self, U):
        U = np.asarray(U, dtype=float)
        h = U[..., 0]
        v = self.velocity(U)
        q = U[..., 1:3]
        F = np.empty(U.shape + (2,))
        F[..., 0, :] = h[..., None] * v
        F[..., 1:3, :] = v[..., None, :] * q[..., :, None]
        pressure = 0.5 * self.g * h * h
        F[..., 1, 0] += pressure
        F[..., 2, 1] += pressure
        return F

    def max_wave_speed(self, UL, UR, n):
        """Upper bound from the two-rarefaction depth estimate.

        States with ``h <= h_cut`` are treated as dry: the shock factor of
        the estimate grows like ``h^(-1/2)`` as a state dries out, so the
        dry-bed speeds (extended by the state's own ``v -+ c``) are used.
        """
        UL, UR, n = np.asarray(UL, float), np.asarray(UR, float), np.asarray(n, float)
        g = self.g
        hL = np.maximum(UL[..., 0], 0.0)
        hR = np.maximum(UR[..., 0], 0.0)
        vL = np.sum(self.velocity(UL) * n, axis=-1)
        vR = np.sum(self.velocity(UR) * n, axis=-1)
        cL, cR = np.sqrt(g * hL), np.sqrt(g * hR)
        cstar = np.maximum(0.5 * (cL + cR) + 0.25 * (vL - vR), 0.0)
        hstar = cstar * cstar / g

        def shock_factor(hs, h):
            r = np.divide(hs, h, out=np.zeros_like(h), where=h > 0)
            return np.where(r > 1.0, np.sqrt(0.5 * r * (1.0 + r)), 1.0)

        dryL, dryR = hL <= self.h_cut, hR <= self.h_cut
        lam1 = np.where(dryL, np.minimum(vR - 2.0 * cR, vL - cL), vL - cL * shock_factor(hstar, hL))
        lam3 = np.where(dryR, np.maximum(vL + 2.0 * cL, vR + cR), vR + cR * shock_factor(hstar, hR))
        return np.maximum(np.maximum(-lam1, lam3), 0.0)

    def constraint_values(self, U):
        return np.asarray(U, float)[..., :1].copy()

    def is_admissible(self, U):
        U = np.asarray(U, float)
        return np.isfinite(U).all(axis=-1) & (U[..., 0] >= 0.0)

    def indicator_quantity(self, U, name):
        if name == "h":
            return np.asarray(U, float)[..., 0]
        raise KeyError(f"unknown shallow water indicator quantity {name!r}")

    def kernel_params(self):
        return np.array([self.g, self.h_cut, 0.0, 0.0])


class IdealGasEuler(HyperbolicSystem):
    """Compressible Euler with ideal gas law: U = (rho, m_x, m_y, E)."""

    name = "euler"
    n_comp = 4
    components = ("rho", "m_x", "m_y", "E")
    linear_components = (0,)
    concave_names = ("e",)
    constraint_names = ("rho", "e")
    indicator_names = ("rho", "pressure")
    system_id = 1

    def __init__(self, gamma: float = 1.4, rho_ref: float = 1.0):
        if not gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        self.gamma = float(gamma)
        self.rho_vacuum = 1e-14 * float(rho_ref)

    def velocity(self, U):
        U = np.asarray(U, float)
        rho = U[..., 0]
        inv = np.divide(1.0, rho, out=np.zeros_like(rho), where=rho > self.rho_vacuum)
        return U[..., 1:3] * inv[..., None]

    def internal_energy_density(self, U):
        U = np.asarray(U, float)
        v = self.velocity(U)
        return U[..., 3] - 0.5 * np.sum(U[..., 1:3] * v, axis=-1)

    def pressure(self, U):
        return (self.gamma - 1.0) * self.internal_energy_density(U)

    def specific_internal_energy(self, U):
        U = np.asarray(U, float)
        rho = U[..., 0]
        rhoe = self.internal_energy_density(U)
        return np.divide(rhoe, rho, out=np.zeros_like(rho), where=rho > self.rho_vacuum)

    def from_primitive(self, rho, vx, vy, p):
        rho, vx, vy, p = np.broadcast_arrays(*map(np.asarray, (rho, vx, vy, p)))
        E = p / (self.gamma - 1.0) + 0.5 * rho * (vx * vx + vy * vy)
        return np.stack([rho, rho * vx, rho * vy, E], axis=-1).astype(float)

    def flux(self, U):
        U = np.asarray(U, float)
        v = self.velocity(U)
        p = self.pressure(U)
        F = np.empty(U.shape + (2,))
        F[..., 0, :] = U[..., 1:3]
        F[..., 1:3, :] = v[..., None, :] * U[..., 1:3, None]
        F[..., 1, 0] += p
        F[..., 2, 1] += p
        F[..., 3, :] = v * (U[..., 3] + p)[..., None]
        return F

    def max_wave_speed(self, UL, UR, n):
        """Two-rarefaction pressure estimate; an upper bound for gamma <= 5/3."""
        UL, UR, n = np.asarray(UL, float), np.asarray(UR, float), np.asarray(n, float)
        gm = self.gamma
        tiny = 1e-300
        rhoL = np.maximum(UL[..., 0], tiny)
        rhoR = np.maximum(UR[..., 0], tiny)
        uL = np.sum(self.velocity(UL) * n, axis=-1)
        uR = np.sum(self.velocity(UR) * n, axis=-1)
        pL = np.maximum(self.pressure(UL), tiny)
        pR = np.maximum(self.pressure(UR), tiny)
        cL = np.sqrt(gm * pL / rhoL)
        cR = np.sqrt(gm * pR / rhoR)
        expo = (gm - 1.0) / (2.0 * gm)
        num = np.maximum(cL + cR - 0.5 * (gm - 1.0) * (uR - uL), 0.0)
        den = cL * pL ** (-expo) + cR * pR ** (-expo)
        pstar = (num / den) ** (1.0 / expo)
        k = (gm + 1.0) / (2.0 * gm)
        lam1 = uL - cL * np.sqrt(1.0 + k * np.maximum((pstar - pL) / pL, 0.0))
        lam3 = uR + cR * np.sqrt(1.0 + k * np.maximum((pstar - pR) / pR, 0.0))
        return np.maximum(np.maximum(-lam1, lam3), 0.0)

    def constraint_values(self, U):
        U = np.asarray(U, float)
        return np.stack([U[..., 0], self.specific_internal_energy(U)], axis=-1)

    def concave_values(self, U):
        return self.specific_internal_energy(U)[..., None]

    def concave_line_limit(self, U, P, lower):
        """Largest ``l`` in [0, 1] with ``e(U + l P) >= lower[..., 0]``.

        With ``rho > 0`` the condition is ``rho E - |m|^2 / 2 - e_min rho^2 >= 0``,
        a quadratic ``a l^2 + b l + c`` in ``l``; the feasible set is an
        interval containing 0, so the answer is its first positive root.
        """
        U, P = np.asarray(U, float), np.asarray(P, float)
        emin = np.asarray(lower, float)[..., 0]
        r, m, E = U[..., 0], U[..., 1:3], U[..., 3]
        pr, pm, pE = P[..., 0], P[..., 1:3], P[..., 3]
        a = pr * pE - 0.5 * np.sum(pm * pm, axis=-1) - emin * pr * pr
        b = r * pE + pr * E - np.sum(m * pm, axis=-1) - 2.0 * emin * r * pr
        c = r * E - 0.5 * np.sum(m * m, axis=-1) - emin * r * r
        return _first_root(a, b, c)

    def is_admissible(self, U):
        U = np.asarray(U, float)
        return np.isfinite(U).all(axis=-1) & (U[..., 0] > 0.0) & (self.internal_energy_density(U) > 0.0)

    def indicator_quantity(self, U, name):
        if name == "rho":
            return np.asarray(U, float)[..., 0]
        if name == "pressure":
            return self.pressure(U)
        raise KeyError(f"unknown Euler indicator quantity {name!r}")

    def kernel_params(self):
        return np.array([self.gamma, self.rho_vacuum, 0.0, 0.0])


def _first_root(a, b, c):
    """Largest l in [0, 1] such that a s^2 + b s + c >= 0 for all s in [0, l]."""
    a, b, c = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(c, float))
    scale = np.abs(a) + np.abs(b) + np.abs(c)
    tol = 1e-14 * scale
    out = np.ones(a.shape)
    out = np.where(c < -tol, 0.0, out)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.maximum(b * b - 4.0 * a * c, 0.0)
        sq = np.sqrt(disc)
        qq = -0.5 * (b + np.where(b >= 0, sq, -sq))
        r1 = np.where(a != 0, qq / a, np.inf)
        r2 = np.where(qq != 0, c / qq, np.inf)
    roots = np.stack([r1, r2], axis=-1)
    roots = np.where(np.isfinite(roots) & (roots > 0), roots, np.inf)
    first = roots.min(axis=-1)
    # a root exists in (0, 1] only if q actually turns negative there
    q1 = a + b + c
    cross = (first <= 1.0) & ((q1 < -tol) | (first < 1.0))
    out = np.where((c >= -tol) & cross, np.clip(first, 0.0, 1.0), out)
    # tangent at a feasible boundary point pointing outwards
    out = np.where((np.abs(c) <= tol) & (b < -tol), 0.0, out)
    # both ends strictly feasible: the feasible set is an interval, so the
    # whole segment is (roots inside come from rounding near tangency)
    return np.where((c > tol) & (q1 > tol), 1.0, out)


SYSTEMS = {"shallow_water": ShallowWater, "euler": IdealGasEuler}


def make_system(name: str, **params) -> HyperbolicSystem:
    try:
        cls = SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None
    return cls(**params)

"""Pure numpy implementation of the graph-viscosity kernels."""
import numpy as np

from ..systems import IdealGasEuler, ShallowWater


def system_from_params(system_id, params):
    if system_id == 0:
        return ShallowWater(g=params[0], h_cut=params[1])
    if system_id == 1:
        sys = IdealGasEuler(gamma=params[0])
        sys.rho_vacuum = float(params[1])
        return sys
    raise ValueError(f"unknown system id {system_id}")


def low_order_rhs(system_id, params, U, indptr, indices, cx, cy, cxT, cyT):
    """Return ``(rhs, dsum)`` of the low-order graph-viscosity operator.

    ``rhs_i = sum_{j != i} [-(f(U_j) - f(U_i)) . c_ij + d_ij (U_j - U_i)]``
    and ``dsum_i = sum_{j != i} d_ij``.  Rows must be sorted and contain
    their diagonal entry.
    """
    system = system_from_params(system_id, params)
    n, m = U.shape
    rows = np.repeat(np.arange(n), np.diff(indptr))
    cols = np.asarray(indices)
    norm = np.hypot(cx, cy)
    normT = np.hypot(cxT, cyT)
    nij = np.stack([cx, cy], axis=1) / np.where(norm > 0, norm, 1.0)[:, None]
    nji = np.stack([cxT, cyT], axis=1) / np.where(normT > 0, normT, 1.0)[:, None]
    Ui, Uj = U[rows], U[cols]
    lam_ij = np.where(norm > 0, system.max_wave_speed(Ui, Uj, nij), 0.0) * norm
    lam_ji = np.where(normT > 0, system.max_wave_speed(Uj, Ui, nji), 0.0) * normT
    d = np.maximum(lam_ij, lam_ji)
    d[rows == cols] = 0.0
    F = system.flux(U)
    dF = F[cols] - F[rows]
    contrib = -(dF[:, :, 0] * np.asarray(cx)[:, None] + dF[:, :, 1] * np.asarray(cy)[:, None])
    contrib += d[:, None] * (Uj - Ui)
    starts = np.asarray(indptr[:-1])
    rhs = np.add.reduceat(contrib, starts, axis=0)
    dsum = np.add.reduceat(d, starts)
    return np.ascontiguousarray(rhs), dsum

"""Conservative, invariant-domain preserving state transfer.

The transfer between two locally refined meshes is the composition of an
element-wise limited mass projection, nodal averaging into the
intermediate (discontinuous across hanging faces) space and a limited
mass redistribution that enforces the hanging-node constraints.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ._kernels import element_directions_kernel, element_limits_kernel
from .fe import ConstraintSet, DofMap, reference_element
from .mesh import Status, cell_id, cell_key, children, parent
from .systems import HyperbolicSystem

# relative slack used when deciding that an unlimited state already
# satisfies its bounds
FAST_PATH_TOL = 1e-14
LINE_SAFETY = 1e-13


class ProjectionError(RuntimeError):
    """Precondition violation inside the projection."""


# ---------------------------------------------------------------------------
# bounds and line limiter


@dataclass
class Bounds:
    """Two-sided bounds on linear quantities and lower bounds on concave ones.

    Arrays carry an arbitrary batch shape followed by the quantity axis.
    """

    lo: np.ndarray
    hi: np.ndarray
    cmin: np.ndarray

    @classmethod
    def initialize(cls, system: HyperbolicSystem, shape=()):
        nl, nc = len(system.linear_components), len(system.concave_names)
        return cls(
            np.full(shape + (nl,), np.inf), np.full(shape + (nl,), -np.inf), np.full(shape + (nc,), np.inf)
        )

    @classmethod
    def from_states(cls, system: HyperbolicSystem, U, axis=-2):
        """Bounds of the states along ``axis`` (default: the node axis)."""
        U = np.asarray(U, float)
        lin = U[..., list(system.linear_components)]
        conc = system.concave_values(U)
        return cls(lin.min(axis=axis), lin.max(axis=axis), conc.min(axis=axis))

    def accumulate(self, system: HyperbolicSystem, U) -> "Bounds":
        U = np.asarray(U, float)
        lin = U[..., list(system.linear_components)]
        conc = system.concave_values(U)
        return Bounds(np.minimum(self.lo, lin), np.maximum(self.hi, lin), np.minimum(self.cmin, conc))

    def merge(self, other: "Bounds") -> "Bounds":
        return Bounds(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi), np.minimum(self.cmin, other.cmin))

    def expand(self, axis) -> "Bounds":
        return Bounds(np.expand_dims(self.lo, axis), np.expand_dims(self.hi, axis), np.expand_dims(self.cmin, axis))

    def contains(self, system: HyperbolicSystem, U, rtol: float = 0.0) -> np.ndarray:
        U = np.asarray(U, float)
        lin = U[..., list(system.linear_components)]
        scale = np.maximum(np.abs(self.lo), np.abs(self.hi))
        ok = np.all((lin >= self.lo - rtol * scale) & (lin <= self.hi + rtol * scale), axis=-1)
        if self.cmin.shape[-1]:
            conc = system.concave_values(U)
            ok &= np.all(conc >= self.cmin - rtol * np.abs(self.cmin), axis=-1)
        return ok


def limit_line(system: HyperbolicSystem, bounds: Bounds, U, P) -> np.ndarray:
    """Largest ``l`` in [0, 1] with ``U + l P`` inside ``bounds``.

    Linear quantities use the closed form, concave ones the system's line
    limiter.  Zero directions give ``l = 1``.
    """
    U, P = np.asarray(U, float), np.asarray(P, float)
    if U.ndim == 1:
        b = Bounds(np.atleast_2d(bounds.lo), np.atleast_2d(bounds.hi), np.atleast_2d(bounds.cmin))
        return float(limit_line(system, b, U[None], P[None])[0])
    kern = element_limits_kernel() if system.system_id in (0, 1) else None
    if kern is not None and U.ndim == 2 and np.ndim(bounds.lo) == 2 and len(U):
        # every row is a one-node "cell" of the compiled pair limiter
        N, nm = U.shape
        cmin = np.broadcast_to(bounds.cmin, (N, bounds.cmin.shape[-1]))
        return kern(
            system.system_id, np.ascontiguousarray(U.reshape(N, 1, nm)), np.ascontiguousarray(P.reshape(N, 1, 1, nm)),
            np.ascontiguousarray(np.broadcast_to(bounds.lo, (N, bounds.lo.shape[-1]))),
            np.ascontiguousarray(np.broadcast_to(bounds.hi, (N, bounds.hi.shape[-1]))),
            np.ascontiguousarray(cmin), np.asarray(system.linear_components, np.int64), LINE_SAFETY,
        ).reshape(N)
    lin = list(system.linear_components)
    u, d = U[..., lin], P[..., lin]
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(d > 0, (bounds.hi - u) / d, np.inf)
        dn = np.where(d < 0, (bounds.lo - u) / d, np.inf)
    l = np.minimum(up, dn).min(axis=-1, initial=np.inf)
    # pull binding limits inwards by a few ulps so that U + l P does not
    # cross the bound through rounding
    l = np.clip(np.where(l < 1.0, l * (1.0 - LINE_SAFETY), l), 0.0, 1.0)
    if bounds.cmin.shape[-1]:
        active = np.any(P != 0.0, axis=-1) & (l > 0)
        if np.any(active):
            cmin = np.broadcast_to(bounds.cmin, l.shape + bounds.cmin.shape[-1:])[active]
            # the concave limit is taken along the already shortened direction
            l[active] *= system.concave_line_limit(U[active], P[active] * l[active][:, None], cmin)
    return l


def check_admissible(system: HyperbolicSystem, U, what="state"):
    ok = system.is_admissible(U)
    if not np.all(ok):
        bad = np.argwhere(~ok)[:3].tolist()
        raise ProjectionError(f"non-admissible {what} at {bad}")


# ---------------------------------------------------------------------------
# element-wise projection


@dataclass(frozen=True)
class ProjectionOperator:
    """Reference data of one projection kind, scaled to a unit parent cell.

    ``S[i, j] = int phi_i^target phi_j^source``; the low-order moments use
    ``W = theta S + (1 - theta) m mu^T / |K|`` with the largest ``theta``
    keeping ``W`` nonnegative (``theta = 1`` whenever ``S >= 0``).
    """

    kind: str
    S: np.ndarray
    M: np.ndarray
    m: np.ndarray
    mu: np.ndarray
    W: np.ndarray
    b: np.ndarray
    theta: float

    @property
    def n_target(self) -> int:
        return len(self.m)

    @property
    def n_source(self) -> int:
        return len(self.mu)


@lru_cache(maxsize=None)
def projection_operator(p: int, kind: str) -> ProjectionOperator:
    el = reference_element(p)
    n = el.nloc
    T = el.transfer  # T[c, parent i, child j]
    if kind == "coarsen":
        S = np.concatenate([T[c] for c in range(4)], axis=1)
        M, m = el.mass, el.lumped
        mu = np.tile(0.25 * el.lumped, 4)
    elif kind == "refine":
        S = np.concatenate([T[c].T for c in range(4)], axis=0)
        M = np.kron(np.eye(4), 0.25 * el.mass)
        m = np.tile(0.25 * el.lumped, 4)
        mu = el.lumped
    elif kind == "persist":
        S, M, m, mu = el.mass, el.mass, el.lumped, el.lumped
    else:
        raise ValueError(f"unknown projection kind {kind!r}")
    a = np.outer(m, mu)  # |K| = 1
    neg = S < 0
    theta = 1.0
    if np.any(neg):
        theta = float(np.min(a[neg] / (a[neg] - S[neg])))
    W = theta * S + (1.0 - theta) * a
    W[W < 0] = 0.0
    b = m[:, None] * np.linalg.inv(M) - np.eye(len(m))
    return ProjectionOperator(kind, S, M, m, mu, W, b, theta)


@dataclass
class ProjectionResult:
    states: np.ndarray  # (ncell, nt, m)
    low: np.ndarray
    high: np.ndarray
    limiter: np.ndarray  # (ncell, nt, nt), symmetric
    directions: np.ndarray  # (ncell, nt, nt, m)
    kappa: float


def element_project(
    system: HyperbolicSystem,
    op: ProjectionOperator,
    U_src,
    bounds: Bounds | None = None,
    limit: bool = True,
    fast_path: bool = True,
    check: bool = True,
) -> ProjectionResult:
    """Limited mass projection of a batch of cells.

    ``U_src`` has shape (ncell, n_source, m).  Returns target states with
    ``sum_i m_i U_i = int u`` per cell and, when ``limit`` is set, every
    state inside the bounds of the source states.
    """
    U_src = np.asarray(U_src, float)
    if U_src.ndim == 2:
        if bounds is not None:
            bounds = Bounds(bounds.lo[None], bounds.hi[None], bounds.cmin[None])
        return _squeeze(element_project(system, op, U_src[None], bounds, limit, fast_path, check))
    if check:
        check_admissible(system, U_src, "projection input")
    if bounds is None:
        bounds = Bounds.from_states(system, U_src)
    R = np.matmul(op.S, U_src)
    RL = np.matmul(op.W, U_src)
    m = op.m[None, :, None]
    low = RL / m
    high = _solve(op.M, R)
    n = op.n_target
    kappa = 1.0 / n
    # antisymmetric mass fluxes  F_ij = b_ij R_j - b_ji R_i + (r_i - r_j) / n,
    # written as G - G^T with G_ij = b_ij R_j - r_j / n
    r = R - RL
    kern = element_directions_kernel()
    if kern is not None:
        P = kern(op.b, np.ascontiguousarray(R), np.ascontiguousarray(r), 1.0 / (kappa * op.m))
    else:
        G = op.b[None, :, :, None] * R[:, None, :, :]
        G -= (r / n)[:, None, :, :]
        P = G - G.transpose(0, 2, 1, 3)
        P *= 1.0 / (kappa * m[:, :, :, None])
    ncell = U_src.shape[0]
    L = np.ones((ncell, n, n))
    if limit:
        todo = np.ones(ncell, dtype=bool)
        if fast_path:
            inside = bounds.expand(-2).contains(system, high, FAST_PATH_TOL) & system.is_admissible(high)
            todo = ~np.all(inside, axis=1)
        kern = element_limits_kernel() if system.system_id in (0, 1) else None
        if np.any(todo) and kern is not None:
            sel = slice(None) if np.all(todo) else todo
            L[sel] = kern(
                system.system_id, np.ascontiguousarray(low[sel]), np.ascontiguousarray(P[sel]),
                np.ascontiguousarray(bounds.lo[sel]), np.ascontiguousarray(bounds.hi[sel]),
                np.ascontiguousarray(bounds.cmin[sel]), np.asarray(system.linear_components, np.int64), LINE_SAFETY,
            )
        elif np.any(todo):
            bsub = Bounds(bounds.lo[todo][:, None, None], bounds.hi[todo][:, None, None], bounds.cmin[todo][:, None, None])
            base = np.broadcast_to(low[todo][:, :, None, :], P[todo].shape)
            lij = limit_line(system, bsub, base, P[todo])
            L[todo] = np.minimum(lij, lij.transpose(0, 2, 1))
    states = low + kappa * np.matmul(L[:, :, None, :], P)[:, :, 0, :]
    if limit and fast_path:
        # the unlimited result is exact; use it verbatim where it was accepted
        full = np.all(L == 1.0, axis=(1, 2))
        states[full] = high[full]
    return ProjectionResult(states, low, high, L, P, kappa)


def _solve(M, R):
    nc, n, mm = R.shape
    X = np.linalg.solve(M, R.transpose(1, 0, 2).reshape(n, nc * mm))
    return X.reshape(n, nc, mm).transpose(1, 0, 2)


def _squeeze(res: ProjectionResult) -> ProjectionResult:
    return ProjectionResult(res.states[0], res.low[0], res.high[0], res.limiter[0], res.directions[0], res.kappa)


# ---------------------------------------------------------------------------
# nodal averaging


def nodal_average(dofmap: DofMap, cell_states, cell_lumped, m_tilde=None) -> np.ndarray:
    """``U~_i = sum_K m_i^K U#_{i,K} / m~_i``.

    Evaluated as an increment over the first contribution of each DoF, so
    that identical contributions are returned bit for bit.
    """
    cell_states = np.asarray(cell_states, float)
    nm = cell_states.shape[-1]
    idx = dofmap.cell_dofs.ravel()
    flat = cell_states.reshape(-1, nm)
    if m_tilde is None:
        m_tilde = np.bincount(idx, weights=cell_lumped.ravel(), minlength=dofmap.n_dofs)
    ref = np.empty((dofmap.n_dofs, nm))
    ref[idx[::-1]] = flat[::-1]  # first occurrence wins
    w = cell_lumped.ravel()[:, None] * (flat - ref[idx])
    inc = np.zeros((dofmap.n_dofs, nm))
    np.add.at(inc, idx, w)
    return ref + inc / m_tilde[:, None]


# ---------------------------------------------------------------------------
# redistribution


def transport_plan(constraints: ConstraintSet, m_tilde: np.ndarray) -> sp.csr_matrix:
    """Nonnegative flows ``F[k, j]`` from constrained ``j`` to free ``k``.

    Starts from ``c_k^j m~_j`` and removes negative entries by shifting
    mass around 2x2 cycles, which keeps every row sum
    ``sum_j c_k^j m~_j`` and column sum ``m~_j`` unchanged.
    """
    n = constraints.n_dofs
    vals = constraints.vals * m_tilde[constraints.rows]
    F = sp.csr_matrix((vals, (constraints.cols, constraints.rows)), shape=(n, n))
    if not np.any(vals < 0):
        return F
    G = sp.csr_matrix((np.ones(len(vals)), (constraints.cols, constraints.rows)), shape=(n, n))
    _, label = connected_components(G + G.T, directed=False)
    F = F.tocsr()
    bad = np.zeros(n, dtype=bool)
    bad[np.unique(label[constraints.cols[vals < 0]])] = True
    keep = ~bad[label[constraints.cols]]
    r, c, v = [constraints.cols[keep]], [constraints.rows[keep]], [vals[keep]]
    for comp in np.flatnonzero(bad):
        ks = np.unique(constraints.cols[label[constraints.cols] == comp])
        js = np.unique(constraints.rows[label[constraints.rows] == comp])
        D = _remove_negative(F[ks][:, js].toarray())
        a, b = np.nonzero(D)
        r.append(ks[a])
        c.append(js[b])
        v.append(D[a, b])
    return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(n, n))


def _remove_negative(D: np.ndarray, max_sweeps: int = 100) -> np.ndarray:
    """Shift mass around 2x2 cycles until ``D >= 0``; marginals are kept."""
    D = D.copy()
    tiny = 1e-15 * np.abs(D).max()
    for _ in range(max_sweeps):
        neg = np.argwhere(D < 0)
        if not len(neg):
            return D
        progress = False
        for k, j in neg[np.argsort(D[tuple(neg.T)], kind="stable")]:
            for _ in range(D.shape[0] + D.shape[1]):
                if not D[k, j] < 0:
                    break
                row, col = D[k].copy(), D[:, j].copy()
                row[j] = col[k] = -np.inf
                jj, kk = int(np.argmax(row)), int(np.argmax(col))
                delta = min(-D[k, j], D[k, jj], D[kk, j])
                if not delta > 0:
                    break
                D[k, j] += delta
                D[k, jj] -= delta
                D[kk, j] -= delta
                D[kk, jj] += delta
                for a, b in ((k, j), (k, jj), (kk, j), (kk, jj)):
                    if abs(D[a, b]) < tiny:
                        D[a, b] = 0.0
                progress = True
        if not progress:
            break
    if np.any(D < 0):
        raise ProjectionError("no nonnegative redistribution plan for the hanging-node constraints")
    return D


@dataclass
class RedistributionResult:
    states: np.ndarray  # full vector with constraints enforced
    m: np.ndarray  # modified masses on all DoFs (zero on constrained)
    low: np.ndarray
    high: np.ndarray
    limiter: np.ndarray  # per constraint


@dataclass
class RedistributionPlan:
    """State-independent data of a redistribution: modified masses and the
    (free k, constrained j) pairs carrying a coefficient or a flow."""

    F: sp.csr_matrix
    m: np.ndarray
    pk: np.ndarray
    pj: np.ndarray
    w: np.ndarray  # c_k^j m~_j per pair
    f: np.ndarray  # transport flow per pair
    kappa: np.ndarray  # pairs per free DoF
    jpos: np.ndarray  # position of pj among the constrained DoFs

    @classmethod
    def build(cls, constraints: ConstraintSet, m_tilde) -> "RedistributionPlan":
        m_tilde = np.asarray(m_tilde, float)
        n = constraints.n_dofs
        rows, cols, vals = constraints.rows, constraints.cols, constraints.vals
        m = m_tilde.copy()
        np.add.at(m, cols, vals * m_tilde[rows])
        m[constraints.constrained] = 0.0
        if np.any(m[~constraints.constrained] <= 0.0):
            raise ProjectionError("nonpositive redistributed mass")
        F = transport_plan(constraints, m_tilde)
        Wc = sp.csr_matrix((vals * m_tilde[rows], (cols, rows)), shape=(n, n))
        pat = (abs(Wc) + abs(F)).tocoo()
        pk, pj = pat.row.astype(np.int64), pat.col.astype(np.int64)
        w = np.asarray(Wc[pk, pj]).ravel()
        f = np.asarray(F[pk, pj]).ravel()
        kappa = np.bincount(pk, minlength=n).astype(float)
        jpos = np.searchsorted(constraints.constrained_dofs, pj)
        return cls(F, m, pk, pj, w, f, kappa, jpos)


def redistribute(
    system: HyperbolicSystem,
    m_tilde,
    U_tilde,
    constraints: ConstraintSet,
    limit: bool = True,
    fast_path: bool = True,
    plan: RedistributionPlan | None = None,
) -> RedistributionResult:
    """Move the mass of constrained DoFs onto their stencils and enforce
    the constraints; conservative and within per-DoF convex hulls.

    ``plan`` is a precomputed :class:`RedistributionPlan` for the same
    constraints and masses.
    """
    m_tilde = np.asarray(m_tilde, float)
    U = np.asarray(U_tilde, float)
    if not len(constraints):
        return RedistributionResult(U.copy(), m_tilde.copy(), U.copy(), U.copy(), np.ones(0))
    if plan is None:
        plan = RedistributionPlan.build(constraints, m_tilde)
    free = ~constraints.constrained
    Cm = constraints.matrix
    D = U - Cm @ U  # mismatch on constrained rows, garbage elsewhere
    m, pk, pj, w, f, kappa, jpos = plan.m, plan.pk, plan.pj, plan.w, plan.f, plan.kappa, plan.jpos
    safe_m = np.where(free, m, 1.0)[:, None]
    # increments over U~_k keep conforming input exact
    dL = np.zeros_like(U)
    np.add.at(dL, pk, f[:, None] * (U[pj] - U[pk]))
    dH = np.zeros_like(U)
    np.add.at(dH, pk, w[:, None] * D[pj])
    low = np.where(free[:, None], U + dL / safe_m, 0.0)
    high = np.where(free[:, None], U + dH / safe_m, 0.0)
    # pair directions  mP_k^j = c m~_j (U~_k + D_j) - F_kj U~_j, summing to
    # zero over k for every j
    mP = w[:, None] * (U[pk] + D[pj]) - f[:, None] * U[pj]
    nc = len(constraints)
    lj = np.ones(nc)
    if limit:
        # per-DoF hull bounds: {U~_k} and U~_j for all constraints j touching k
        B = Bounds.from_states(system, U[:, None, :], axis=-2)
        bj = Bounds.from_states(system, U[pj][:, None, :], axis=-2)
        for arr, src in ((B.lo, bj.lo), (B.cmin, bj.cmin)):
            np.minimum.at(arr, pk, src)
        np.maximum.at(B.hi, pk, bj.hi)
        do_limit = True
        if fast_path:
            inside = B.contains(system, high, FAST_PATH_TOL) & system.is_admissible(high)
            do_limit = not np.all(inside[free])
        if do_limit:
            bk = Bounds(B.lo[pk], B.hi[pk], B.cmin[pk])
            dirs = kappa[pk][:, None] * mP / m[pk][:, None]
            lk = limit_line(system, bk, low[pk], dirs)
            np.minimum.at(lj, jpos, lk)
    out = np.zeros_like(U)
    if limit and not (fast_path and np.all(lj == 1.0)):
        inc = np.zeros_like(U)
        np.add.at(inc, pk, lj[jpos][:, None] * mP)
        out[free] = low[free] + inc[free] / m[free][:, None]
    else:
        out[free] = high[free]
    out[constraints.constrained_dofs] = (Cm @ out)[constraints.constrained_dofs]
    return RedistributionResult(out, m, low, high, lj)


# ---------------------------------------------------------------------------
# cell transfer records (attach / unpack)


_STATUS_CODE = {Status.PERSIST: 0, Status.REFINE: 1, Status.COARSEN: 2}
_CODE_STATUS = {v: k for k, v in _STATUS_CODE.items()}
_HEADER = struct.Struct("<QBH")


@dataclass
class CellTransferRecord:
    key: tuple
    status: Status
    payload: np.ndarray  # (nloc, m)

    def pack(self) -> bytes:
        data = np.ascontiguousarray(self.payload, dtype="<f8")
        return _HEADER.pack(cell_id(self.key), _STATUS_CODE[self.status], data.shape[0]) + data.tobytes()

    @classmethod
    def unpack_from(cls, buf: bytes, offset: int, n_comp: int):
        cid, code, count = _HEADER.unpack_from(buf, offset)
        offset += _HEADER.size
        nbytes = 8 * count * n_comp
        payload = np.frombuffer(buf, dtype="<f8", count=count * n_comp, offset=offset).reshape(count, n_comp)
        return cls(cell_key(cid), _CODE_STATUS[code], payload.astype(float)), offset + nbytes


def dump_records(records, path):
    with open(path, "wb") as fh:
        for rec in records:
            fh.write(rec.pack())


def load_records(path, n_comp: int) -> list[CellTransferRecord]:
    with open(path, "rb") as fh:
        buf = fh.read()
    out, off = [], 0
    while off < len(buf):
        rec, off = CellTransferRecord.unpack_from(buf, off, n_comp)
        out.append(rec)
    return out


def attach(system, dofmap: DofMap, U_full, status, limit: bool = True, fast_path: bool = True):
    """Collect per-cell transfer data on the old mesh.

    ``status`` maps every old active cell to its Status.  Persisting and
    refined cells carry their nodal states; each coarsened sibling group is
    projected onto its parent, which carries the result.
    """
    U_full = np.asarray(U_full, float)
    cell_states = U_full[dofmap.cell_dofs]  # a fresh array; records hold views into it
    records = []
    groups = {}
    for c, key in enumerate(dofmap.cells):
        st = status[key]
        if st == Status.COARSEN:
            groups.setdefault(parent(key), {})[key] = c
        else:
            records.append(CellTransferRecord(key, st, cell_states[c]))
    if groups:
        parents = sorted(groups)
        src = np.empty((len(parents), 4 * dofmap.element.nloc, U_full.shape[1]))
        for g, pk in enumerate(parents):
            kids = groups[pk]
            if len(kids) != 4:
                raise ProjectionError(f"incomplete sibling group under {pk}")
            src[g] = np.concatenate([cell_states[kids[ck]] for ck in children(pk)])
        op = projection_operator(dofmap.p, "coarsen")
        res = element_project(system, op, src, limit=limit, fast_path=fast_path)
        for g, pk in enumerate(parents):
            records.append(CellTransferRecord(pk, Status.COARSEN, res.states[g]))
    return records


def unpack(system, dofmap: DofMap, records, limit: bool = True, fast_path: bool = True):
    """Rebuild per-cell states on the new mesh; returns (ncells, nloc, m)."""
    nloc = dofmap.element.nloc
    nm = records[0].payload.shape[1] if records else system.n_comp
    out = np.full((dofmap.n_cells, nloc, nm), np.nan)
    refine = []
    for rec in records:
        if rec.status == Status.REFINE:
            refine.append(rec)
        else:
            out[dofmap.cell_index[rec.key]] = rec.payload
    if refine:
        op = projection_operator(dofmap.p, "refine")
        src = np.stack([r.payload for r in refine])
        res = element_project(system, op, src, limit=limit, fast_path=fast_path)
        for r, rec in enumerate(refine):
            for c, ck in enumerate(children(rec.key)):
                out[dofmap.cell_index[ck]] = res.states[r, c * nloc:(c + 1) * nloc]
    if np.isnan(out).any():
        raise ProjectionError("transfer records do not cover the new mesh")
    return out

"""Hermitian discretizations of the layer operator, the effective surface
Hamiltonian and the decoupled two-sided comparison operators.

All operators act on the eps-independent measure (surface measure times du)
and are stored in symmetric scaling: the assembled matrix is W^{1/2} A W^{-1/2}
for the divergence-form operator A and the diagonal weight matrix W of the
discrete inner product, so plain Euclidean orthonormality of eigenvectors is
weighted orthonormality of the physical ones.

Discretization scheme:
  * divergence form with edge-midpoint coefficients; gauge covariance enters
    through unit link phases exp(-i integral of the potential along the edge),
    midpoint quadrature;
  * per chart direction, a Richardson-corrected fourth-order combination
    (4 A_h - A_2h) / 3 of narrow and double hops (wide-hop phases are products
    of the narrow ones, so covariance is exact); directions with a coordinate
    pole stay second order with zero-flux pole edges;
  * mixed-metric terms are the symmetrized centered-difference form (second
    order, Hermitian by construction);
  * the transverse operator is the spectral sine-basis matrix on the uniform
    interior grid, whose eigenvalues are exactly (m pi / 2)^2 and whose
    eigenvectors are the sampled sine modes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import AssemblyError
from .geometry import (
    DIRICHLET,
    PERIODIC,
    POLE_DIRICHLET,
    POLE_POLE,
    HypersurfacePatch,
    LayerGeometry,
    surface_gradient_sq,
    surface_laplacian,
    transverse_nodes,
    v_eff,
)
from .magnetics import EffectiveField, GaugeFixedPotential, ScalarPotential

#: lowest transverse Dirichlet energy on (-1, 1); eps^-2 times this is the
#: diverging offset removed by renormalization
TRANSVERSE_GROUND_ENERGY = (np.pi / 2.0) ** 2

OPERATOR_KINDS = (
    "full-H",
    "full-H-renormalized",
    "h-eff",
    "H0+",
    "H0-",
    "H0+-renormalized",
    "H0--renormalized",
)

HERMITICITY_TOL = 1e-12


@lru_cache(maxsize=32)
def _transverse_cache(m_u: int):
    j = np.arange(1, m_u + 1)
    modes = np.arange(1, m_u + 1)
    basis = np.sqrt(2.0 / (m_u + 1)) * np.sin(np.outer(j, modes) * np.pi / (m_u + 1))
    energies = (modes * np.pi / 2.0) ** 2
    T = (basis * energies) @ basis.T
    T = 0.5 * (T + T.T)
    T.flags.writeable = False
    basis.flags.writeable = False
    energies.flags.writeable = False
    return T, basis, energies


def transverse_matrix(m_u: int) -> np.ndarray:
    """Spectral stiffness matrix of -d^2/du^2 on the interior grid.

    Exact Dirichlet eigenvalues (m pi/2)^2 with the sampled sine modes as
    eigenvectors; dense (m_u x m_u), symmetric.
    """
    return _transverse_cache(m_u)[0]


def transverse_energies(m_u: int) -> np.ndarray:
    return _transverse_cache(m_u)[2]


@dataclass(frozen=True)
class DofMap:
    """Flat indexing of (chart nodes) x (transverse nodes), surface-major."""

    grid_shape: tuple[int, ...]
    m_u: int
    closures: tuple[str, ...]
    axis_names: tuple[str, ...]

    @property
    def n_surface(self) -> int:
        return int(np.prod(self.grid_shape))

    @property
    def n_dof(self) -> int:
        return self.n_surface * self.m_u

    def index(self, *node) -> int:
        *surf, j = node if self.m_u > 1 else (*node, 0)
        s = int(np.ravel_multi_index(tuple(int(i) for i in surf), self.grid_shape))
        return s * self.m_u + int(j)

    def boundary_record(self) -> list[str]:
        rec = []
        labels = {
            PERIODIC: "periodic identification",
            DIRICHLET: "Dirichlet rows eliminated at both ends",
            POLE_POLE: "zero-flux pole closure at both ends",
            POLE_DIRICHLET: "zero-flux pole at left end, Dirichlet at right end",
        }
        for name, closure in zip(self.axis_names, self.closures):
            rec.append(f"chart axis {name}: {labels[closure]}")
        if self.m_u > 1:
            rec.append("transverse axis u: Dirichlet rows eliminated at u = -1, 1")
        return rec


@dataclass
class AssembledOperator:
    """Hermitian sparse operator with its inner-product weights and metadata."""

    matrix: sp.csr_array
    weights: np.ndarray
    dofmap: DofMap
    kind: str
    eps: float | None
    geometry: str
    field_label: str
    meta: dict = field(default_factory=dict)
    _factors: dict = field(default_factory=dict, repr=False)

    @property
    def n_dof(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.matrix)

    def hermiticity_residual(self) -> float:
        d = (self.matrix - self.matrix.conj().T).tocoo()
        if d.nnz == 0:
            return 0.0
        scale = max(float(np.abs(self.matrix.data).max()), 1e-300)
        return float(np.abs(d.data).max()) / scale

    def to_physical(self, coeff: np.ndarray) -> np.ndarray:
        """Convert a coefficient vector of the scaled problem to node values."""
        return coeff / np.sqrt(self.weights)

    @staticmethod
    def from_matrix(matrix, weights=None, kind="custom", eps=None) -> "AssembledOperator":
        """Wrap an explicit Hermitian matrix (mainly for tests and harnesses)."""
        M = sp.csr_array(matrix)
        n = M.shape[0]
        w = np.ones(n) if weights is None else np.asarray(weights, float)
        dof = DofMap((n,), 1, (DIRICHLET,), ("i",))
        return AssembledOperator(
            matrix=M,
            weights=w,
            dofmap=dof,
            kind=kind,
            eps=eps,
            geometry="explicit",
            field_label="none",
        )

    def export_matrix_market(self, basepath) -> tuple[str, str]:
        """Write <base>.mtx (coordinate format) plus a JSON dof-map sidecar."""
        from scipy.io import mmwrite

        base = str(basepath)
        mtx = base + ".mtx"
        sidecar = base + ".json"
        mmwrite(mtx, self.matrix.tocoo())
        payload = {
            "kind": self.kind,
            "eps": self.eps,
            "geometry": self.geometry,
            "field": self.field_label,
            "n_dof": self.n_dof,
            "nnz": int(self.matrix.nnz),
            "grid_shape": list(self.dofmap.grid_shape),
            "m_u": self.dofmap.m_u,
            "closures": list(self.dofmap.closures),
            "ordering": "surface nodes row-major, transverse index fastest",
            "boundary": self.dofmap.boundary_record(),
            "scaling": "matrix is W^(1/2) A W^(-1/2); weights in this file",
            "weights_cell": self.meta.get("weights_cell"),
        }
        with open(sidecar, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
        return mtx, sidecar


# ---------------------------------------------------------------------------
# surface stencil assembly
# ---------------------------------------------------------------------------


def _axis_orders(patch, order):
    out = []
    for ax in patch.axes:
        if ax.closure in (POLE_POLE, POLE_DIRICHLET):
            out.append(2)
        else:
            out.append(4 if order in (None, 4) else 2)
    return out


def _interp_edges_periodic(F, axis, order):
    if order == 4:
        return (
            -np.roll(F, 1, axis) + 9.0 * F + 9.0 * np.roll(F, -1, axis) - np.roll(F, -2, axis)
        ) / 16.0
    return 0.5 * (F + np.roll(F, -1, axis))


def _interp_edges_bounded(F, axis, order):
    Fm = np.moveaxis(F, axis, 0)
    n = Fm.shape[0]
    out = 0.5 * (Fm[:-1] + Fm[1:])
    if order == 4 and n >= 4:
        out[1:-1] = (-Fm[:-3] + 9.0 * Fm[1:-2] + 9.0 * Fm[2:-1] - Fm[3:]) / 16.0
    return np.moveaxis(out, 0, axis)


def _take(arr, axis, sl):
    idx = [slice(None)] * arr.ndim
    idx[axis] = sl
    return arr[tuple(idx)]


def _ghost_coef(F, axis, side):
    """Edge coefficient at an eliminated Dirichlet boundary (2-pt extrapolation,
    clamped to stay positive)."""
    if side == 0:
        f0, f1 = _take(F, axis, 0), _take(F, axis, 1)
    else:
        f0, f1 = _take(F, axis, -1), _take(F, axis, -2)
    val = 1.5 * f0 - 0.5 * f1
    return np.where(val > 0, val, f0)


class _TripletBag:
    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []
        self.diag_idx = []
        self.diag_val = []

    def add(self, rows, cols, vals):
        self.rows.append(rows)
        self.cols.append(cols)
        self.vals.append(vals)

    def add_diag(self, idx, val):
        self.diag_idx.append(np.asarray(idx, np.int64).reshape(-1))
        self.diag_val.append(np.asarray(val, float).reshape(-1))

    def build(self, n, cplx):
        dtype = np.complex128 if cplx else np.float64
        rows = np.concatenate(self.rows) if self.rows else np.zeros(0, np.int64)
        cols = np.concatenate(self.cols) if self.cols else np.zeros(0, np.int64)
        vals = (
            np.concatenate([v.astype(dtype) for v in self.vals])
            if self.vals
            else np.zeros(0, dtype)
        )
        if self.diag_idx:
            di = np.concatenate(self.diag_idx)
            dv = np.concatenate(self.diag_val).astype(dtype)
            rows = np.concatenate([rows, di])
            cols = np.concatenate([cols, di])
            vals = np.concatenate([vals, dv])
        return sp.csr_array(
            sp.coo_array((vals, (rows, cols)), shape=(n, n), dtype=dtype)
        )


def _surface_operator(patch, inv, alpha, m, order=None):
    """Scaled surface stencil on (chart grid) x (m transverse slabs).

    inv: (*grid, dim, dim) or (*grid, m, dim, dim) inverse-metric coefficients;
    alpha: chart components of the potential, (*grid, dim) / (*grid, m, dim) /
    None. Returns a csr_array of size (n_surface * m).
    """
    gshape = patch.grid_shape
    naxes = len(gshape)
    ns = patch.n_nodes
    sg = patch.sqrt_g

    inv = np.asarray(inv)
    if inv.ndim == naxes + 2:  # broadcast single-slab coefficients
        inv = np.broadcast_to(inv[..., None, :, :], gshape + (m, patch.dim, patch.dim))
    if alpha is not None:
        alpha = np.asarray(alpha, dtype=float)
        if alpha.ndim == naxes + 1:
            alpha = np.broadcast_to(alpha[..., None, :], gshape + (m, patch.dim))
        if not np.any(alpha):
            alpha = None
    cplx = alpha is not None

    orders = _axis_orders(patch, order)
    I = np.arange(ns, dtype=np.int64).reshape(gshape)
    sg_m = np.broadcast_to(sg[..., None], gshape + (m,))
    isqrt_sg = 1.0 / np.sqrt(sg)
    bag = _TripletBag()
    slab = np.arange(m, dtype=np.int64)

    def emit_edges(ei, ej, coef, theta, scale, hop_h):
        # ei, ej: (*eshape) surface indices; coef/theta: (*eshape, m)
        if np.any(coef <= 0.0):
            raise AssemblyError("non-positive edge coefficient in assembly")
        gi = (ei[..., None] * m + slab).reshape(-1)
        gj = (ej[..., None] * m + slab).reshape(-1)
        c = scale * coef / hop_h**2
        si = isqrt_sg.reshape(-1)[ei]
        sj = isqrt_sg.reshape(-1)[ej]
        coff = (c * (si * sj)[..., None]).reshape(-1)
        di = (c * (si * si)[..., None]).reshape(-1)
        dj = (c * (sj * sj)[..., None]).reshape(-1)
        th = None if theta is None else theta.reshape(-1)
        bag.add(*kernels.diag_triplets(gi, gj, coff, di, dj, th))

    for k in range(naxes):
        ax = patch.axes[k]
        h = ax.h
        okk = orders[k]
        Fnode = sg_m * inv[..., k, k]
        anode = None if alpha is None else alpha[..., k]
        periodic = ax.periodic

        if periodic:
            Fe = _interp_edges_periodic(Fnode, k, okk)
            ei, ej = I, np.roll(I, -1, axis=k)
            th = None
            if anode is not None:
                th = h * _interp_edges_periodic(anode, k, okk)
            scale1 = 4.0 / 3.0 if okk == 4 else 1.0
            emit_edges(ei, ej, Fe, th, scale1, h)
            if okk == 4:
                Fw = np.moveaxis(Fnode, k, 0)
                Fw = np.moveaxis(np.roll(Fw, -1, 0), 0, k)
                ejw = np.roll(I, -2, axis=k)
                thw = None
                if th is not None:
                    thw = th + np.moveaxis(np.roll(np.moveaxis(th, k, 0), -1, 0), 0, k)
                emit_edges(I, ejw, Fw, thw, -1.0 / 3.0, 2.0 * h)
        else:
            pole_left = ax.closure in (POLE_POLE, POLE_DIRICHLET)
            pole_right = ax.closure == POLE_POLE
            n = ax.n
            Fe = _interp_edges_bounded(Fnode, k, okk)
            ei = _take(I, k, slice(0, n - 1))
            ej = _take(I, k, slice(1, n))
            th = None
            if anode is not None:
                th = h * _interp_edges_bounded(anode, k, okk)
            scale1 = 4.0 / 3.0 if okk == 4 else 1.0
            emit_edges(ei, ej, Fe, th, scale1, h)
            # boundary ghost edges (value 0 beyond Dirichlet ends; poles carry
            # zero flux and contribute nothing)
            for side, is_pole in ((0, pole_left), (1, pole_right)):
                if is_pole:
                    continue
                Fb = _ghost_coef(Fnode, k, side)
                gidx = (_take(I, k, -side)[..., None] * m + slab).reshape(-1)
                bag.add_diag(
                    gidx,
                    (
                        scale1
                        * Fb
                        / h**2
                        * (_take(isqrt_sg.reshape(gshape) ** 2, k, -side))[..., None]
                    ).reshape(-1),
                )
            if okk == 4:
                if n >= 3:
                    Fw = _take(Fnode, k, slice(1, n - 1))
                    eiw = _take(I, k, slice(0, n - 2))
                    ejw = _take(I, k, slice(2, n))
                    thw = None
                    if th is not None:
                        thw = _take(th, k, slice(0, n - 2)) + _take(th, k, slice(1, n - 1))
                    emit_edges(eiw, ejw, Fw, thw, -1.0 / 3.0, 2.0 * h)
                for side, is_pole in ((0, pole_left), (1, pole_right)):
                    if is_pole:
                        continue
                    # double-hop sublattices meet the eliminated boundary in two
                    # ways: the sublattice through the first node reflects
                    # oddly across it (doubled diagonal), the one through the
                    # second node has a lattice point exactly on it (plain
                    # ghost edge, coefficient at the first node)
                    Fb = _ghost_coef(Fnode, k, side)
                    first = 0 if side == 0 else -1
                    second = 1 if side == 0 else -2
                    isg2 = isqrt_sg.reshape(gshape) ** 2
                    gidx = (_take(I, k, first)[..., None] * m + slab).reshape(-1)
                    bag.add_diag(
                        gidx,
                        (
                            (-1.0 / 3.0)
                            * 2.0
                            * Fb
                            / (4.0 * h**2)
                            * (_take(isg2, k, first))[..., None]
                        ).reshape(-1),
                    )
                    gidx2 = (_take(I, k, second)[..., None] * m + slab).reshape(-1)
                    bag.add_diag(
                        gidx2,
                        (
                            (-1.0 / 3.0)
                            * _take(Fnode, k, first)
                            / (4.0 * h**2)
                            * (_take(isg2, k, second))[..., None]
                        ).reshape(-1),
                    )

    if naxes == 2:
        off_scale = float(np.max(np.abs(inv[..., 0, 1])))
        diag_scale = float(np.max(np.abs(inv)))
        if off_scale > 1e-12 * diag_scale:
            _emit_mixed(patch, inv, alpha, m, I, sg_m, isqrt_sg, bag)

    return bag.build(ns * m, cplx)


def _neighbor_maps(patch, I, k):
    ax = patch.axes[k]
    if ax.periodic:
        plus = np.roll(I, -1, axis=k)
        minus = np.roll(I, 1, axis=k)
    else:
        plus = np.roll(I, -1, axis=k).copy()
        minus = np.roll(I, 1, axis=k).copy()
        idx = [slice(None)] * I.ndim
        idx[k] = -1
        plus[tuple(idx)] = -1
        idx[k] = 0
        minus[tuple(idx)] = -1
    return plus, minus


def _edge_theta_maps(patch, alpha_k, k):
    """Phase angles for hops node -> node +/- e_k (0 where the hop is absent)."""
    ax = patch.axes[k]
    h = ax.h
    if ax.periodic:
        the = h * _interp_edges_periodic(alpha_k, k, 2)
        tp = the
        tm = -np.roll(the, 1, axis=k)
        return tp, tm
    the = h * _interp_edges_bounded(alpha_k, k, 2)
    shape = alpha_k.shape
    tp = np.zeros(shape)
    tm = np.zeros(shape)
    sl = [slice(None)] * alpha_k.ndim
    sl[k] = slice(0, shape[k] - 1)
    tp[tuple(sl)] = the
    sl[k] = slice(1, shape[k])
    tm[tuple(sl)] = -the
    return tp, tm


def _emit_mixed(patch, inv, alpha, m, I, sg_m, isqrt_sg, bag):
    for ax in patch.axes:
        if ax.closure in (POLE_POLE, POLE_DIRICHLET):
            raise AssemblyError(
                "mixed metric terms on a chart with a coordinate pole are not supported"
            )
    h0, h1 = patch.axes[0].h, patch.axes[1].h
    base = (sg_m * 2.0 * inv[..., 0, 1]) / (2.0 * 4.0 * h0 * h1)
    p0, m0 = _neighbor_maps(patch, I, 0)
    p1, m1 = _neighbor_maps(patch, I, 1)
    slab = np.arange(m, dtype=np.int64)

    def glob(surf):
        g = surf[..., None] * m + slab
        return np.where(surf[..., None] < 0, -1, g).reshape(-1)

    gp0, gm0, gp1, gm1 = glob(p0), glob(m0), glob(p1), glob(m1)
    isw = np.repeat(isqrt_sg.reshape(-1), m)
    if alpha is None:
        th = (None,) * 4
    else:
        t0p, t0m = _edge_theta_maps(patch, alpha[..., 0], 0)
        t1p, t1m = _edge_theta_maps(patch, alpha[..., 1], 1)
        th = (t0p.reshape(-1), t0m.reshape(-1), t1p.reshape(-1), t1m.reshape(-1))
    bag.add(
        *kernels.mixed_triplets(gp0, gm0, gp1, gm1, base.reshape(-1), isw, *th)
    )


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


def transverse_curvature_potential(kappa, eps, u):
    """Closed-form transverse potential from the layer Jacobian factor.

    -1/2 sum (k/(1-eps u k))^2 + 1/4 (sum k/(1-eps u k))^2, converging
    uniformly to the effective potential as eps -> 0.
    """
    kappa = np.asarray(kappa, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.ndim:
        kap = kappa[..., None, :]
        uu = u[:, None]
    else:
        kap, uu = kappa, u
    f = kap / (1.0 - eps * uu * kap)
    s = np.sum(f, axis=-1)
    return -0.5 * np.sum(f * f, axis=-1) + 0.25 * s * s


@dataclass(frozen=True)
class PotentialGrids:
    """Potential of the transformed layer operator and its comparison pieces."""

    v: np.ndarray  # (*grid, m): full potential entering the layer operator
    v1: np.ndarray  # (*grid, m): surface correction (intrinsic-metric version)
    v2: np.ndarray  # (*grid, m): closed-form transverse curvature potential
    veff: np.ndarray  # (*grid): effective surface potential
    sup_v1: float
    sup_v2_gap: float  # sup |v2 - veff|

    @property
    def sup_veff(self) -> float:
        return float(np.max(np.abs(self.veff)))


def potential_grids(layer: LayerGeometry) -> PotentialGrids:
    patch = layer.patch
    J = layer.log_jac
    v2 = transverse_curvature_potential(patch.kappa, layer.eps, layer.u)
    veff = v_eff(patch.kappa)
    v1 = surface_laplacian(patch, J) + surface_gradient_sq(patch, J)
    v1_layer = surface_laplacian(patch, J, metric_inv=layer.metric_inv) + surface_gradient_sq(
        patch, J, metric_inv=layer.metric_inv
    )
    v = v1_layer + v2
    return PotentialGrids(
        v=v,
        v1=v1,
        v2=v2,
        veff=veff,
        sup_v1=float(np.max(np.abs(v1))),
        sup_v2_gap=float(np.max(np.abs(v2 - veff[..., None]))),
    )


@dataclass(frozen=True)
class ComparisonConstants:
    """Explicit constants of the two-sided decoupled comparison operators."""

    eps: float
    rho_m: float
    c_lower: float  # (1 - eps/rho)^2
    c_upper: float  # (1 + eps/rho)^2
    scale_minus: float  # (1 - eps) / c_upper
    scale_plus: float  # (1 + eps) / c_lower
    offset: float  # admissible O(eps) zero-order bound
    sup_v1: float
    sup_v2_gap: float
    sup_taylor_quad: float
    sup_veff: float


def comparison_constants(
    layer: LayerGeometry, pots: PotentialGrids, pot: GaugeFixedPotential
) -> ComparisonConstants:
    eps = layer.eps
    ratio = 0.0 if not np.isfinite(layer.patch.rho_m) else eps / layer.patch.rho_m
    c_lower = (1.0 - ratio) ** 2
    c_upper = (1.0 + ratio) ** 2
    scale_minus = (1.0 - eps) / c_upper
    scale_plus = (1.0 + eps) / c_lower
    sup_scale_dev = max(abs(scale_minus - 1.0), abs(scale_plus - 1.0))
    offset = (
        pots.sup_v1 / c_lower
        + pots.sup_v2_gap
        + (eps + eps * eps) * pot.sup_quad
        + sup_scale_dev * pots.sup_veff
    )
    if offset < 0.0:
        raise AssemblyError(f"comparison offset must be nonnegative, got {offset}")
    return ComparisonConstants(
        eps=eps,
        rho_m=layer.patch.rho_m,
        c_lower=c_lower,
        c_upper=c_upper,
        scale_minus=scale_minus,
        scale_plus=scale_plus,
        offset=offset,
        sup_v1=pots.sup_v1,
        sup_v2_gap=pots.sup_v2_gap,
        sup_taylor_quad=pot.sup_quad,
        sup_veff=pots.sup_veff,
    )


# ---------------------------------------------------------------------------
# operator factories
# ---------------------------------------------------------------------------


def _check_hermitian(op: AssembledOperator):
    res = op.hermiticity_residual()
    if res > HERMITICITY_TOL:
        raise AssemblyError(
            f"assembled {op.kind} operator has Hermiticity residual {res:.3e}"
        )
    op.meta["hermiticity_residual"] = res


def _u_independent(arr, naxes, m):
    if m == 1:
        return True
    view = np.moveaxis(arr, naxes, 0)
    return bool(np.all(view == view[:1]))


def assemble_full(
    layer: LayerGeometry,
    pot: GaugeFixedPotential,
    electric: ScalarPotential | None = None,
    potentials: PotentialGrids | None = None,
    order: int | None = None,
) -> AssembledOperator:
    """Transformed layer operator on the product grid.

    Surface part in divergence form with the layer inverse metric and link
    phases from the gauge-fixed potential, spectral transverse stiffness
    scaled by eps^-2, and the diagonal potential (plus an optional ambient
    electric potential sampled on the layer).
    """
    if not isinstance(pot, GaugeFixedPotential):
        raise AssemblyError("assemble_full needs a gauge-fixed potential")
    if pot.layer is not layer:
        raise AssemblyError("potential was fixed on a different layer")
    patch = layer.patch
    m = layer.m_u
    naxes = len(patch.grid_shape)
    pots = potentials if potentials is not None else potential_grids(layer)
    alpha = None if pot.is_zero() else pot.a_surf
    if _u_independent(layer.metric_inv, naxes, m) and (
        alpha is None or _u_independent(alpha, naxes, m)
    ):
        # decoupled coefficients: assemble one slab and expand, which keeps
        # the flat case an exact Kronecker sum
        S = _surface_operator(
            patch,
            layer.metric_inv[..., 0, :, :],
            None if alpha is None else alpha[..., 0, :],
            1,
            order=order,
        )
        Hsurf = sp.csr_array(sp.kron(S, sp.eye_array(m, format="csr"), format="csr"))
    else:
        Hsurf = _surface_operator(patch, layer.metric_inv, alpha, m, order=order)
    T = transverse_matrix(m) / layer.eps**2
    Ht = sp.csr_array(
        sp.kron(sp.eye_array(patch.n_nodes, format="csr"), sp.csr_array(T), format="csr")
    )
    V = pots.v
    if electric is not None:
        V = V + electric.on_layer(layer)
    H = Hsurf + Ht + sp.csr_array(sp.diags_array(V.reshape(-1)))
    dof = DofMap(
        patch.grid_shape, m, patch.closures, tuple(ax.name for ax in patch.axes)
    )
    op = AssembledOperator(
        matrix=H,
        weights=layer.full_weights(),
        dofmap=dof,
        kind="full-H",
        eps=layer.eps,
        geometry=patch.label(),
        field_label=pot.field_label,
        meta={
            "order": order,
            "m_u": m,
            "electric": None if electric is None else electric.label,
            "weights_cell": patch.cell_area * layer.h_u,
            # kinetic part is nonnegative, transverse block bounded below by
            # the ground energy: a cheap certified spectral floor
            "spectral_lower_bound": float(np.min(V))
            + TRANSVERSE_GROUND_ENERGY / layer.eps**2,
        },
    )
    _check_hermitian(op)
    return op


def assemble_effective(
    patch: HypersurfacePatch,
    eff: EffectiveField | None = None,
    electric: ScalarPotential | None = None,
    order: int | None = None,
) -> AssembledOperator:
    """Effective surface Hamiltonian: magnetic Laplace-Beltrami plus the
    curvature potential (plus the surface trace of the electric potential)."""
    alpha = None
    label = "zero"
    if eff is not None and not eff.is_zero():
        alpha = eff.alpha
        label = "alpha-eff"
    S = _surface_operator(patch, patch.metric_inv, alpha, 1, order=order)
    V = v_eff(patch.kappa)
    if electric is not None:
        V = V + electric.on_surface(patch)
    H = S + sp.csr_array(sp.diags_array(V.reshape(-1)))
    dof = DofMap(patch.grid_shape, 1, patch.closures, tuple(ax.name for ax in patch.axes))
    op = AssembledOperator(
        matrix=H,
        weights=patch.surface_weights(),
        dofmap=dof,
        kind="h-eff",
        eps=None,
        geometry=patch.label(),
        field_label=label,
        meta={
            "order": order,
            "m_u": 1,
            "electric": None if electric is None else electric.label,
            "weights_cell": patch.cell_area,
            "spectral_lower_bound": float(np.min(V)),
        },
    )
    _check_hermitian(op)
    return op


def assemble_comparison(
    layer: LayerGeometry,
    pot: GaugeFixedPotential,
    sign: int,
    electric: ScalarPotential | None = None,
    potentials: PotentialGrids | None = None,
    order: int | None = None,
) -> tuple[AssembledOperator, ComparisonConstants]:
    """Decoupled comparison operator bounding the layer operator from one side.

    sign=+1 gives the upper operator, sign=-1 the lower one: the effective
    surface operator with trace link phases, scaled by the metric-sandwich
    constant, plus the exact transverse term, offset by +/- the explicit
    zero-order constant.
    """
    if sign not in (1, -1):
        raise AssemblyError("comparison sign must be +1 or -1")
    patch = layer.patch
    m = layer.m_u
    pots = potentials if potentials is not None else potential_grids(layer)
    consts = comparison_constants(layer, pots, pot)
    scale = consts.scale_plus if sign > 0 else consts.scale_minus
    alpha0 = None if not np.any(pot.a_surf0) else pot.a_surf0
    S = _surface_operator(patch, patch.metric_inv, alpha0, 1, order=order)
    V = v_eff(patch.kappa)
    if electric is not None:
        V = V + electric.on_surface(patch)
    Ssurf = S + sp.csr_array(sp.diags_array(V.reshape(-1)))
    H = sp.csr_array(sp.kron(scale * Ssurf, sp.eye_array(m, format="csr"), format="csr"))
    T = transverse_matrix(m) / layer.eps**2
    H = H + sp.csr_array(
        sp.kron(sp.eye_array(patch.n_nodes, format="csr"), sp.csr_array(T), format="csr")
    )
    H = H + sp.csr_array(
        sp.diags_array(np.full(H.shape[0], float(sign) * consts.offset))
    )
    dof = DofMap(
        patch.grid_shape, m, patch.closures, tuple(ax.name for ax in patch.axes)
    )
    op = AssembledOperator(
        matrix=H,
        weights=layer.full_weights(),
        dofmap=dof,
        kind="H0+" if sign > 0 else "H0-",
        eps=layer.eps,
        geometry=patch.label(),
        field_label=pot.field_label,
        meta={
            "order": order,
            "m_u": m,
            "scale": scale,
            "offset": consts.offset,
            "weights_cell": patch.cell_area * layer.h_u,
            "spectral_lower_bound": scale * min(0.0, float(np.min(V)))
            + TRANSVERSE_GROUND_ENERGY / layer.eps**2
            + sign * consts.offset,
        },
    )
    _check_hermitian(op)
    return op, consts


def renormalize(op: AssembledOperator) -> AssembledOperator:
    """Subtract the diverging lowest transverse energy eps^-2 (pi/2)^2.

    The spectrum shifts exactly; eigenvectors are untouched.
    """
    if op.kind not in ("full-H", "H0+", "H0-"):
        raise AssemblyError(f"cannot renormalize operator of kind {op.kind!r}")
    if op.eps is None:
        raise AssemblyError("operator has no layer half-width")
    shift = TRANSVERSE_GROUND_ENERGY / op.eps**2
    H = op.matrix - sp.csr_array(
        sp.diags_array(np.full(op.matrix.shape[0], shift))
    ).astype(op.matrix.dtype)
    meta = dict(op.meta)
    meta["renormalization_shift"] = shift
    if meta.get("spectral_lower_bound") is not None:
        meta["spectral_lower_bound"] = meta["spectral_lower_bound"] - shift
    if meta.get("lambda_min") is not None:
        meta["lambda_min"] = meta["lambda_min"] - shift
    return AssembledOperator(
        matrix=sp.csr_array(H),
        weights=op.weights,
        dofmap=op.dofmap,
        kind=op.kind + "-renormalized",
        eps=op.eps,
        geometry=op.geometry,
        field_label=op.field_label,
        meta=meta,
    )


def coercivity_shift(pots: PotentialGrids) -> float:
    """Diagonal shift that certifies nonnegativity of the quadratic form."""
    return max(0.0, -float(np.min(pots.veff)) - float(np.min(pots.v))) + 1.0

"""Separable 2D kernel on tensor-product grids and the grid solver.

With source points (x1_k, y1_i) and target points (x2_l, y2_j), the L1
ground cost splits per axis, so the kernel factors into the 1D kernels
Kx = exp(-|x1 - x2|/eps) and Ky = exp(-|y1 - y2|/eps).  Under
column-major vectorization (x fastest) the full matrix is the
Kronecker product of Ky with Kx, and a matvec is one sweep of 1D
applies down the columns followed by one sweep along the rows; nothing
of the full vectorized size is ever formed.

Log-domain shifts are stored as per-point grids A (source side) and
B (target side), never assumed separable.  A shifted matvec folds B
into the column sweep (it travels with the input points) and A into
the row sweep (it belongs to the output points); each stored exponent
is then evaluated in one piece, as in the 1D rebuild.  The shifted
sweeps require every per-stage exponent to stay representable, which
the absorption schedule guarantees by firing long before the scalings
approach the overflow range.
"""

from dataclasses import dataclass, field
from time import perf_counter
from typing import Optional

import numpy as np

from . import _kernels as _k
from . import kernel1d
from . import solver as _solver
from .errors import DimensionMismatch, NonFiniteInput
from .mesh import Grid2D


@dataclass(frozen=True)
class KernelOperator2D:
    """Kernel of a grid pair as two 1D factors plus shift grids.

    ``kx`` and ``ky`` are plain (shift-free) 1D operators; the 2D
    shifts live entirely in ``absorption_left`` (source grid shape)
    and ``absorption_right`` (target grid shape).  Logically immutable:
    absorb() returns a new operator.
    """

    kx: kernel1d.KernelOperator1D
    ky: kernel1d.KernelOperator1D
    epsilon: float
    absorption_left: np.ndarray
    absorption_right: np.ndarray
    op_counter: Optional[kernel1d.OpCounter] = field(default=None)

    @property
    def source_shape(self):
        return (len(self.kx.x_mesh), len(self.ky.x_mesh))

    @property
    def target_shape(self):
        return (len(self.kx.y_mesh), len(self.ky.y_mesh))

    @property
    def shape(self):
        n1, m1 = self.source_shape
        n2, m2 = self.target_shape
        return (n1 * m1, n2 * m2)

    @property
    def absorbed(self):
        return bool(np.any(self.absorption_left != 0)
                    or np.any(self.absorption_right != 0))

    def apply(self, psi):
        """K psi on the flat column-major vector, shifts included."""
        n2, m2 = self.target_shape
        Psi = _check_flat(psi, self.shape[1], "psi").reshape((n2, m2),
                                                            order="F")
        if self.absorbed:
            out = apply_2d_stabilized(self, Psi)
        else:
            out = apply_2d(self, Psi)
        return out.ravel(order="F")

    def apply_transpose(self, phi):
        """K^T phi on the flat column-major vector, shifts included."""
        n1, m1 = self.source_shape
        Phi = _check_flat(phi, self.shape[0], "phi").reshape((n1, m1),
                                                            order="F")
        if self.absorbed:
            out = _transpose_2d_shifted(self, Phi)
        else:
            out = apply_transpose_2d(self, Phi)
        return out.ravel(order="F")

    def absorb(self, delta_a, delta_b):
        return absorb_2d(self, delta_a, delta_b)

    def dense_realization(self):
        return dense_realization_2d(self)


def build_operator_2d(source, target, epsilon, count_ops=False):
    """Operator for source/target grids; one 1D factor per axis."""
    epsilon = kernel1d._check_eps(epsilon)
    kx = kernel1d.build_operator(source.x_nodes, target.x_nodes, epsilon)
    ky = kernel1d.build_operator(source.y_nodes, target.y_nodes, epsilon)
    return KernelOperator2D(
        kx=kx, ky=ky, epsilon=epsilon,
        absorption_left=np.zeros(source.shape),
        absorption_right=np.zeros(target.shape),
        op_counter=kernel1d.OpCounter() if count_ops else None,
    )


def _check_flat(vec, length, what):
    vec = np.ascontiguousarray(np.asarray(vec, dtype=np.float64))
    if vec.ndim != 1 or vec.size != length:
        raise DimensionMismatch(
            "%s must be a vector of length %d" % (what, length))
    if not np.all(np.isfinite(vec)):
        raise NonFiniteInput("%s must be finite" % what)
    return vec


def _check_grid(arr, shape, what):
    arr = np.asfortranarray(np.asarray(arr, dtype=np.float64))
    if arr.shape != shape:
        raise DimensionMismatch(
            "%s must have grid shape %s" % (what, (shape,)[0].__repr__()))
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("%s must be finite" % what)
    return arr


def _require_plain(op, name):
    if op.absorbed:
        raise ValueError(
            "%s expects an operator without absorbed shifts; "
            "use apply_2d_stabilized" % name)


def apply_2d(op, Psi):
    """K Psi as a column sweep with Kx then a row sweep with Ky.

    Operates on target-grid-shaped input and returns a source-shaped
    array whose column-major vectorization is K times vec(Psi).  Plain
    kernel only; shifted operators go through apply_2d_stabilized.
    """
    _require_plain(op, "apply_2d")
    n1, m1 = op.source_shape
    n2, m2 = op.target_shape
    Psi = _check_grid(Psi, (n2, m2), "Psi")
    kx, ky = op.kx, op.ky
    counter = op.op_counter
    S = np.empty((n1, m2), order="F")
    for j in range(m2):
        kernel1d._dp(kx.lower, kx.upper, Psi[:, j], S[:, j], counter)
    T = np.empty((n1, m1), order="F")
    rout = np.empty(m1)
    for k in range(n1):
        rin = np.ascontiguousarray(S[k, :])
        kernel1d._dp(ky.lower, ky.upper, rin, rout, counter)
        T[k, :] = rout
    return T


def apply_transpose_2d(op, Phi):
    """K^T Phi by the mirrored sweeps over the transpose blocks."""
    _require_plain(op, "apply_transpose_2d")
    n1, m1 = op.source_shape
    n2, m2 = op.target_shape
    Phi = _check_grid(Phi, (n1, m1), "Phi")
    kx, ky = op.kx, op.ky
    counter = op.op_counter
    S = np.empty((n2, m1), order="F")
    for j in range(m1):
        kernel1d._dp(kx.t_lower, kx.t_upper, Phi[:, j], S[:, j], counter)
    T = np.empty((n2, m2), order="F")
    rout = np.empty(m2)
    for k in range(n2):
        rin = np.ascontiguousarray(S[k, :])
        kernel1d._dp(ky.t_lower, ky.t_upper, rin, rout, counter)
        T[k, :] = rout
    return T


def _dyn_parts(k1op):
    lo = k1op.lower
    return (lo.boundaries.zeta, lo.gaps, lo.distances, k1op.upper.distances)


def _dyn_parts_t(k1op):
    lo = k1op.t_lower
    return (lo.boundaries.zeta, lo.gaps, lo.distances, k1op.t_upper.distances)


def apply_2d_stabilized(op, Psi):
    """K' Psi with the shift grids folded into the sweeps.

    The column sweep applies Kx with per-column right shifts B[:, j]
    (the input points' shifts); the row sweep applies Ky with per-row
    left shifts A[k, :] (the output points' shifts).  Each exponent is
    evaluated in one piece, so the result is finite whenever the
    per-stage exponents are representable, even if exp(A/eps) or
    exp(B/eps) alone would overflow.  Without shifts this coincides
    with apply_2d and takes that path.
    """
    n1, m1 = op.source_shape
    n2, m2 = op.target_shape
    Psi = _check_grid(Psi, (n2, m2), "Psi")
    if not op.absorbed:
        return apply_2d(op, Psi)
    inv_eps = 1.0 / op.epsilon
    A = np.asfortranarray(op.absorption_left)
    B = np.asfortranarray(op.absorption_right)
    zx, dxg, lodx, hidx = _dyn_parts(op.kx)
    zy, dyg, lody, hidy = _dyn_parts(op.ky)
    no_rows = np.zeros(n1)
    no_cols = np.zeros(m2)
    S = np.empty((n1, m2), order="F")
    for j in range(m2):
        _k.dp_apply_dyn(zx, dxg, lodx, hidx, no_rows, B[:, j], inv_eps,
                        Psi[:, j], n2, S[:, j])
    T = np.empty((n1, m1), order="F")
    rout = np.empty(m1)
    for k in range(n1):
        rin = np.ascontiguousarray(S[k, :])
        arow = np.ascontiguousarray(A[k, :])
        _k.dp_apply_dyn(zy, dyg, lody, hidy, arow, no_cols, inv_eps,
                        rin, m2, rout)
        T[k, :] = rout
    return T


def _transpose_2d_shifted(op, Phi):
    """K'^T Phi, the mirror schedule: A with the input, B with the output."""
    n1, m1 = op.source_shape
    n2, m2 = op.target_shape
    Phi = _check_grid(Phi, (n1, m1), "Phi")
    if not op.absorbed:
        return apply_transpose_2d(op, Phi)
    inv_eps = 1.0 / op.epsilon
    A = np.asfortranarray(op.absorption_left)
    B = np.asfortranarray(op.absorption_right)
    zx, dxg, lodx, hidx = _dyn_parts_t(op.kx)
    zy, dyg, lody, hidy = _dyn_parts_t(op.ky)
    no_rows = np.zeros(n2)
    no_cols = np.zeros(m1)
    S = np.empty((n2, m1), order="F")
    for j in range(m1):
        _k.dp_apply_dyn(zx, dxg, lodx, hidx, no_rows, A[:, j], inv_eps,
                        Phi[:, j], n1, S[:, j])
    T = np.empty((n2, m2), order="F")
    rout = np.empty(m2)
    for k in range(n2):
        rin = np.ascontiguousarray(S[k, :])
        brow = np.ascontiguousarray(B[k, :])
        _k.dp_apply_dyn(zy, dyg, lody, hidy, brow, no_cols, inv_eps,
                        rin, m1, rout)
        T[k, :] = rout
    return T


def absorb_2d(op, delta_a, delta_b):
    """New operator with the shift grids advanced by the deltas.

    The 1D factors are untouched (they stay shift-free); successive
    absorbs accumulate by plain addition, so two absorbs equal one
    absorb of the summed deltas exactly.
    """
    delta_a = _check_grid(delta_a, op.source_shape, "delta_a")
    delta_b = _check_grid(delta_b, op.target_shape, "delta_b")
    return KernelOperator2D(
        kx=op.kx, ky=op.ky, epsilon=op.epsilon,
        absorption_left=op.absorption_left + delta_a,
        absorption_right=op.absorption_right + delta_b,
        op_counter=op.op_counter,
    )


def dense_realization_2d(op):
    """The vectorized dense matrix, for tests and small instances.

    Without shifts this is exactly the Kronecker product of the dense
    Ky with the dense Kx; shifts multiply in as one exponential per
    entry of the summed shift grids.
    """
    full = np.kron(op.ky.dense_realization(), op.kx.dense_realization())
    if op.absorbed:
        av = op.absorption_left.ravel(order="F")
        bv = op.absorption_right.ravel(order="F")
        full = full * np.exp((av[:, None] + bv[None, :]) / op.epsilon)
    return full


class _GridAdapter:
    """Backend adapter running both sweeps of a scaling iteration.

    Uses the baked edge tables until the first absorption; afterwards
    the sweeps evaluate exponents on the fly, folding the current shift
    grids in per column and per row.
    """

    def __init__(self, source, target, epsilon):
        self.op = build_operator_2d(source, target, epsilon)
        n1, m1 = source.shape
        n2, m2 = target.shape
        self._shape_u = (n1, m1)
        self._shape_v = (n2, m2)
        self._S1 = np.empty((n2, m1), order="F")
        self._T2 = np.empty((n2, m2), order="F")
        self._S2 = np.empty((n1, m2), order="F")
        self._T1 = np.empty((n1, m1), order="F")
        self._inv_eps = 1.0 / epsilon
        self._A = None
        self._B = None
        kx, ky = self.op.kx, self.op.ky
        self._baked = (
            *self._rep5(kx.lower, kx.upper),
            *self._rep5(kx.t_lower, kx.t_upper),
            *self._rep5(ky.lower, ky.upper),
            *self._rep5(ky.t_lower, ky.t_upper),
        )
        self._dyn = (
            *_dyn_parts(kx), *_dyn_parts_t(kx),
            *_dyn_parts(ky), *_dyn_parts_t(ky),
        )

    @staticmethod
    def _rep5(lo, hi):
        return (lo.boundaries.zeta, lo.ratios, hi.ratios,
                lo.edge_values, hi.edge_values)

    @property
    def kernel(self):
        return self.op

    @property
    def a(self):
        return self.op.absorption_left.ravel(order="F")

    @property
    def b(self):
        return self.op.absorption_right.ravel(order="F")

    def iterate(self, u, v, phi, psi):
        U = u.reshape(self._shape_u, order="F")
        V = v.reshape(self._shape_v, order="F")
        PHI = phi.reshape(self._shape_u, order="F")
        PSI = psi.reshape(self._shape_v, order="F")
        if self._A is None:
            return _k.iter_2d_baked(*self._baked, U, V, PHI, PSI,
                                    self._S1, self._T2, self._S2, self._T1)
        return _k.iter_2d_dyn(*self._dyn, self._A, self._B, U, V, PHI, PSI,
                              self._S1, self._T2, self._S2, self._T1,
                              self._inv_eps)

    def absorb(self, delta_a, delta_b):
        dA = delta_a.reshape(self._shape_u, order="F")
        dB = delta_b.reshape(self._shape_v, order="F")
        self.op = absorb_2d(self.op, dA, dB)
        self._A = np.asfortranarray(self.op.absorption_left)
        self._B = np.asfortranarray(self.op.absorption_right)


def sinkhorn_2d(source, target, u, v, config):
    """Entropic scaling between grid measures via the factored kernel.

    Same driver, initialization, stopping rule, and absorption schedule
    as the 1D solver; the scaling vectors are the column-major
    vectorizations of the grid arrays.
    """
    if u.shape != source.shape:
        raise DimensionMismatch("u must have one weight per source point")
    if v.shape != target.shape:
        raise DimensionMismatch("v must have one weight per target point")
    t0 = perf_counter()
    adapter = _GridAdapter(source, target, config.epsilon)
    setup = perf_counter() - t0
    uw = np.ascontiguousarray(u.weights.ravel(order="F"))
    vw = np.ascontiguousarray(v.weights.ravel(order="F"))
    phi, psi, it, converged, history, loop = _solver.run_driver(
        adapter, uw, vw, config)
    sol = _solver.Solution(
        phi=phi, psi=psi,
        a=adapter.a, b=adapter.b,
        kernel=adapter.kernel,
        iterations_run=it, converged=converged,
        marginal_error_history=history,
        wall_time=setup + loop, setup_time=setup,
        cost=np.nan, config=config,
    )
    sol.cost = transport_cost_fast_2d(sol)
    return sol


def transport_cost_fast_2d(solution):
    """<C, plan> via the per-axis split of the separable ground cost.

    The x contribution of the objective collapses, for each source
    column i, to the 1D cost identity applied to the pair (Phi[:, i],
    R[:, i]) where R[:, i] aggregates the target mass seen through Ky;
    the y contribution mirrors it per source row against S = Kx Psi.
    All shift grids enter through the sweep exponents (B inside the
    aggregates, A as the left shift of the block applies), so no
    scaling products are ever recombined.
    """
    op = solution.kernel
    kx, ky = op.kx, op.ky
    inv_eps = 1.0 / op.epsilon
    n1, m1 = op.source_shape
    n2, m2 = op.target_shape
    A = np.asfortranarray(op.absorption_left)
    B = np.asfortranarray(op.absorption_right)
    x1, x2 = kx.x_mesh.nodes, kx.y_mesh.nodes
    y1, y2 = ky.x_mesh.nodes, ky.y_mesh.nodes
    PHI = np.asfortranarray(solution.phi.reshape((n1, m1), order="F"))
    PSI = np.asfortranarray(solution.psi.reshape((n2, m2), order="F"))
    zx, dxg, lodx, hidx = _dyn_parts(kx)
    zy, dyg, lody, hidy = _dyn_parts(ky)
    no_n1 = np.zeros(n1)
    no_n2 = np.zeros(n2)
    no_m1 = np.zeros(m1)
    no_m2 = np.zeros(m2)

    # S[k, :] = row k of Kx (e^{B/eps} . Psi); Rt[:, l] = Ky-aggregated
    # row l of the same shifted mass, stored transposed so the x pass
    # reads contiguous columns
    S = np.empty((n1, m2), order="F")
    for j in range(m2):
        _k.dp_apply_dyn(zx, dxg, lodx, hidx, no_n1, B[:, j], inv_eps,
                        PSI[:, j], n2, S[:, j])
    Rt = np.empty((m1, n2), order="F")
    for l in range(n2):
        row = np.ascontiguousarray(PSI[l, :])
        brow = np.ascontiguousarray(B[l, :])
        _k.dp_apply_dyn(zy, dyg, lody, hidy, no_m1, brow, inv_eps,
                        row, m2, Rt[:, l])

    p = np.empty(n1)
    q = np.empty(n1)
    pt = np.empty(n1)
    qt = np.empty(n1)
    xc = 0.0
    for i in range(m1):
        w = np.ascontiguousarray(Rt[i, :])
        ai = A[:, i]
        _k.dp_blocks_dyn(zx, dxg, lodx, hidx, ai, no_n2, inv_eps,
                         w, n2, p, q)
        _k.dp_blocks_dyn(zx, dxg, lodx, hidx, ai, no_n2, inv_eps,
                         x2 * w, n2, pt, qt)
        xc += float(np.sum(PHI[:, i] * (x1 * (p - q) - pt + qt)))

    p = np.empty(m1)
    q = np.empty(m1)
    pt = np.empty(m1)
    qt = np.empty(m1)
    yc = 0.0
    for k in range(n1):
        w = np.ascontiguousarray(S[k, :])
        ak = np.ascontiguousarray(A[k, :])
        _k.dp_blocks_dyn(zy, dyg, lody, hidy, ak, no_m2, inv_eps,
                         w, m2, p, q)
        _k.dp_blocks_dyn(zy, dyg, lody, hidy, ak, no_m2, inv_eps,
                         y2 * w, m2, pt, qt)
        yc += float(np.sum(np.ascontiguousarray(PHI[k, :])
                           * (y1 * (p - q) - pt + qt)))
    return xc + yc

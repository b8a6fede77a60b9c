"""Materialized-kernel reference: dense matvecs and dense scaling runs.

Everything the compressed path computes is checked against this module,
and the benchmark speed-ups are measured against it.  It exists to be
correct and to be beaten, so the matvecs are plain BLAS products and
the kernel is stored in full.
"""

from dataclasses import dataclass
from time import perf_counter

import numpy as np

from . import _kernels as _k
from . import solver as _solver
from .errors import (
    DimensionMismatch,
    InvalidEpsilon,
    SizeCapExceeded,
)

SIZE_CAP = 10**8


@dataclass(frozen=True)
class DenseKernel:
    """Full kernel matrix with its ground-cost table.

    ``entries[i, j] = exp((-cost[i, j] + a[i] + b[j]) / epsilon)``; the
    shift vectors a, b are zero on a freshly built kernel, in which
    case entries are exp(-cost/eps) exactly.
    """

    entries: np.ndarray
    cost: np.ndarray
    epsilon: float
    a: np.ndarray
    b: np.ndarray

    @property
    def shape(self):
        return self.entries.shape

    def apply(self, psi):
        return self.entries @ psi

    def apply_transpose(self, phi):
        # phi @ K sums down columns without forming K^T.
        return phi @ self.entries

    def absorb(self, delta_a, delta_b):
        """New kernel with the shifts added and entries rebuilt.

        Rebuilding from the summed exponent (rather than scaling the
        old entries) keeps repeated absorption free of compounding
        rounding error, matching the compressed path.
        """
        a = self.a + delta_a
        b = self.b + delta_b
        entries = np.exp((-self.cost + a[:, None] + b[None, :])
                         / self.epsilon)
        return DenseKernel(entries=entries, cost=self.cost,
                           epsilon=self.epsilon, a=a, b=b)

    def dense_realization(self):
        return self.entries


def _check_eps(epsilon):
    epsilon = float(epsilon)
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise InvalidEpsilon("epsilon must be a positive finite real")
    return epsilon


def _check_cap(n, m, size_cap):
    if n * m > size_cap:
        raise SizeCapExceeded(
            "dense kernel would hold %d entries, cap is %d"
            % (n * m, size_cap))


def dense_kernel(x, y, epsilon, size_cap=SIZE_CAP):
    """Materialize cost and kernel for meshes x (rows) and y (columns)."""
    epsilon = _check_eps(epsilon)
    _check_cap(len(x), len(y), size_cap)
    cost = np.abs(np.subtract.outer(x.nodes, y.nodes))
    return DenseKernel(entries=np.exp(-cost / epsilon), cost=cost,
                       epsilon=epsilon,
                       a=np.zeros(len(x)), b=np.zeros(len(y)))


def dense_kernel_2d(source, target, epsilon, size_cap=SIZE_CAP):
    """Dense kernel of a grid pair on the flattened point sets.

    Points are enumerated x-fastest, so the kernel is the Kronecker
    product (K_y kron K_x) of the per-axis kernels and the cost table
    is the matching sum of per-axis costs.
    """
    epsilon = _check_eps(epsilon)
    n = len(source)
    m = len(target)
    _check_cap(n, m, size_cap)
    cx = np.abs(np.subtract.outer(source.x_nodes.nodes,
                                  target.x_nodes.nodes))
    cy = np.abs(np.subtract.outer(source.y_nodes.nodes,
                                  target.y_nodes.nodes))
    cost = (np.kron(cy, np.ones_like(cx))
            + np.kron(np.ones_like(cy), cx))
    return DenseKernel(entries=np.exp(-cost / epsilon), cost=cost,
                       epsilon=epsilon, a=np.zeros(n), b=np.zeros(m))


class _DenseAdapter:
    """Driver adapter running the textbook full-matrix sweeps."""

    def __init__(self, kern):
        self.kern = kern

    @property
    def kernel(self):
        return self.kern

    @property
    def a(self):
        return self.kern.a

    @property
    def b(self):
        return self.kern.b

    def _half(self, prod, target, scaling_out):
        # Shared update: scaling_out <- target / prod with the same
        # zero and finiteness rules as the compressed kernels.
        if np.any((prod == 0.0) & (target > 0.0)):
            return None, _k.ZERO_DENOM
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(prod == 0.0, 0.0, target / prod)
        if not np.all(np.isfinite(w)):
            return None, _k.NONFINITE
        scaling_out[:] = w
        pos = w[target > 0.0]
        return (float(pos.max()), float(pos.min())), _k.OK

    def iterate(self, u, v, phi, psi):
        t = phi @ self.kern.entries
        err = float(np.sum(np.abs(psi * t - v)))
        ps, status = self._half(t, v, psi)
        if status != _k.OK:
            return err, status, 0.0, 0.0, 0.0, 0.0
        s = self.kern.entries @ psi
        ph, status = self._half(s, u, phi)
        if status != _k.OK:
            return err, status, 0.0, 0.0, 0.0, 0.0
        return err, _k.OK, ps[0], ps[1], ph[0], ph[1]

    def absorb(self, delta_a, delta_b):
        self.kern = self.kern.absorb(delta_a, delta_b)


def dense_sinkhorn(problem, config):
    """The scaling loop with dense matvecs; same driver as the fast path.

    Accepts 1D and grid problems alike; grid weights run flattened
    x-fastest against the Kronecker kernel.
    """
    t0 = perf_counter()
    if problem.dim == 1:
        kern = dense_kernel(problem.source, problem.target, config.epsilon,
                            size_cap=config.plan_cap)
        u = problem.u.weights
        v = problem.v.weights
    else:
        kern = dense_kernel_2d(problem.source, problem.target,
                               config.epsilon, size_cap=config.plan_cap)
        u = np.ascontiguousarray(problem.u.weights.ravel(order="F"))
        v = np.ascontiguousarray(problem.v.weights.ravel(order="F"))
    adapter = _DenseAdapter(kern)
    setup = perf_counter() - t0
    phi, psi, it, converged, history, loop = _solver.run_driver(
        adapter, u, v, config)
    plan = phi[:, None] * adapter.kern.entries * psi[None, :]
    sol = _solver.Solution(
        phi=phi, psi=psi,
        a=adapter.a, b=adapter.b,
        kernel=adapter.kern,
        iterations_run=it, converged=converged,
        marginal_error_history=history,
        wall_time=setup + loop, setup_time=setup,
        cost=transport_cost_dense(plan, adapter.kern.cost),
        config=config,
    )
    return sol


def frobenius_diff(plan_a, plan_b):
    """Frobenius norm of the difference of two plans."""
    a = np.asarray(plan_a, dtype=float)
    b = np.asarray(plan_b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(
            "plans differ in shape: %s vs %s" % (a.shape, b.shape))
    return float(np.linalg.norm(a - b))


def transport_cost_dense(plan, cost):
    """Objective <C, plan> summed entrywise."""
    p = np.asarray(plan, dtype=float)
    c = np.asarray(cost, dtype=float)
    if p.shape != c.shape:
        raise DimensionMismatch(
            "plan shape %s does not match cost shape %s"
            % (p.shape, c.shape))
    return float(np.sum(c * p))

"""Scaling-iteration driver and the fast 1D solver built on it.

The driver is shared: the fast solver, the dense reference, and the
grid solver all plug a backend adapter into the same loop, so the only
thing that differs between comparable runs is the matvec.  An adapter
owns the kernel state and provides

    iterate(u, v, phi, psi) -> (err, status, psmax, psmin, phmax, phmin)
    absorb(delta_a, delta_b)
    kernel, a, b

where iterate performs one full sweep (psi update from K^T phi, then
phi update from K psi) in place and reports the marginal error of the
iterates as they entered, plus the extreme scaling values seen over
positive-mass entries.
"""

from dataclasses import dataclass
from time import perf_counter
from typing import Optional

import numpy as np

from . import _kernels as _k
from . import kernel1d
from .errors import (
    ConfigError,
    DimensionMismatch,
    InvalidEpsilon,
    NonFiniteIterate,
    SizeCapExceeded,
    ZeroDenominator,
)


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float
    itr_max: int = 1000
    tol: float = 1e-9
    stabilize: bool = False
    absorb_threshold: float = 200.0
    check_every: int = 1
    plan_cap: int = 10**8

    def __post_init__(self):
        eps = float(self.epsilon)
        if not np.isfinite(eps) or eps <= 0:
            raise InvalidEpsilon("epsilon must be a positive finite real")
        object.__setattr__(self, "epsilon", eps)
        if self.itr_max < 1:
            raise ConfigError("itr_max must be at least 1")
        # tol = 0 runs a fixed iteration count (benchmark mode).
        if not np.isfinite(self.tol) or self.tol < 0:
            raise ConfigError("tol must be a nonnegative finite real")
        if not np.isfinite(self.absorb_threshold) or self.absorb_threshold <= 1:
            raise ConfigError("absorb_threshold must exceed 1")
        if self.check_every < 1:
            raise ConfigError("check_every must be at least 1")
        if self.plan_cap < 1:
            raise ConfigError("plan_cap must be positive")


@dataclass
class SolverState:
    """Mutable view of the loop state, mostly for inspection helpers."""

    phi: np.ndarray
    psi: np.ndarray
    a: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    iteration: int = 0
    last_marginal_error: float = np.inf


@dataclass
class Solution:
    phi: np.ndarray
    psi: np.ndarray
    a: np.ndarray
    b: np.ndarray
    kernel: object
    iterations_run: int
    converged: bool
    marginal_error_history: list
    wall_time: float
    setup_time: float
    cost: float
    config: SolverConfig


class _FastAdapter1D:
    """Backend adapter over the compressed 1D kernel."""

    def __init__(self, x, y, epsilon):
        self.op = kernel1d.build_operator(x, y, epsilon)
        n, m = self.op.shape
        self._t = np.empty(m)
        self._qm = np.empty(m)
        self._s = np.empty(n)
        self._qn = np.empty(n)
        self._refresh()

    def _refresh(self):
        op = self.op
        lo, up, tlo, tup = op.lower, op.upper, op.t_lower, op.t_upper
        self._bundle = (
            lo.boundaries.zeta, lo.ratios, up.ratios,
            lo.edge_values, up.edge_values, lo.row_owner, up.row_owner,
            tlo.boundaries.zeta, tlo.ratios, tup.ratios,
            tlo.edge_values, tup.edge_values, tlo.row_owner, tup.row_owner,
        )

    @property
    def kernel(self):
        return self.op

    @property
    def a(self):
        return self.op.absorption_left

    @property
    def b(self):
        return self.op.absorption_right

    def iterate(self, u, v, phi, psi):
        return _k.iter_1d(*self._bundle, u, v, phi, psi,
                          self._t, self._qm, self._s, self._qn)

    def absorb(self, delta_a, delta_b):
        self.op = kernel1d.absorb(self.op, delta_a, delta_b)
        self._refresh()


def _shift(weights, scaling, epsilon):
    """Log-domain shift to absorb, with zero-mass entries filled in.

    Entries with no mass have scaling 0 and no meaningful shift; they
    are interpolated from the supported entries (by index, which on a
    sorted mesh tracks position) so the rebuilt kernel representation
    stays free of artificial cliffs.  Those rows and columns of the
    kernel are multiplied by zero scalings everywhere, so any finite
    fill is exact.
    """
    pos = weights > 0
    vals = epsilon * np.log(scaling[pos])
    if pos.all():
        return vals
    out = np.empty(weights.shape[0])
    idx = np.arange(weights.shape[0], dtype=float)
    out[pos] = vals
    out[~pos] = np.interp(idx[~pos], idx[pos], vals)
    return out


def run_driver(adapter, u, v, config):
    """The scaling loop: update sweeps, stopping rule, absorption.

    Returns (phi, psi, iterations, converged, history, loop_seconds).
    The error reported for iteration l is the L1 marginal defect of the
    iterate pair that entered the sweep, read off the sweep's own
    K^T phi product.
    """
    n = u.shape[0]
    phi = np.full(n, 1.0 / n)
    psi = np.full(v.shape[0], 1.0 / n)
    hi_cut = np.exp(config.absorb_threshold)
    lo_cut = np.exp(-config.absorb_threshold)
    history = []
    converged = False
    it = 0
    t0 = perf_counter()
    while it < config.itr_max:
        err, status, psmax, psmin, phmax, phmin = adapter.iterate(
            u, v, phi, psi)
        it += 1
        if status == _k.ZERO_DENOM:
            raise ZeroDenominator(
                "a matvec underflowed to zero on an entry with positive "
                "target mass; enable stabilization or increase epsilon")
        if status == _k.NONFINITE:
            raise NonFiniteIterate(
                "scaling update produced a non-finite value; enable "
                "stabilization or increase epsilon")
        recorded = it % config.check_every == 0 or it == config.itr_max
        if recorded:
            history.append((it, float(err)))
        if config.tol > 0 and err <= config.tol:
            if not recorded:
                history.append((it, float(err)))
            converged = True
            break
        if config.stabilize and (phmax > hi_cut or psmax > hi_cut
                                 or phmin < lo_cut or psmin < lo_cut):
            adapter.absorb(_shift(u, phi, config.epsilon),
                           _shift(v, psi, config.epsilon))
            phi[:] = 1.0
            psi[:] = 1.0
    return phi, psi, it, converged, history, perf_counter() - t0


def sinkhorn_1d(x, y, u, v, config):
    """Entropic scaling on 1D meshes with the compressed kernel matvec.

    Initializes phi = psi = (1/N) ones, alternates
    psi <- v / (K^T phi), phi <- u / (K psi), and stops at itr_max or
    when the L1 marginal error drops to tol.  With stabilize on, the
    scalings are absorbed into the kernel whenever one of them leaves
    [exp(-absorb_threshold), exp(absorb_threshold)].
    """
    if len(u.weights) != len(x):
        raise DimensionMismatch("u must have one weight per source node")
    if len(v.weights) != len(y):
        raise DimensionMismatch("v must have one weight per target node")
    t0 = perf_counter()
    adapter = _FastAdapter1D(x, y, config.epsilon)
    setup = perf_counter() - t0
    phi, psi, it, converged, history, loop = run_driver(
        adapter, u.weights, v.weights, config)
    sol = Solution(
        phi=phi, psi=psi,
        a=adapter.a, b=adapter.b,
        kernel=adapter.kernel,
        iterations_run=it, converged=converged,
        marginal_error_history=history,
        wall_time=setup + loop, setup_time=setup,
        cost=np.nan, config=config,
    )
    sol.cost = transport_cost_fast(sol)
    return sol


def marginal_error(state, kernel, v):
    """L1 distance of diag(psi) K^T phi from the target weights."""
    w = v.weights if hasattr(v, "weights") else np.asarray(v, dtype=float)
    t = kernel.apply_transpose(state.phi)
    return float(np.sum(np.abs(state.psi * t - w)))


def plan_dense(solution):
    """Materialize the transport plan diag(phi) K diag(psi)."""
    kern = solution.kernel
    n, m = kern.shape
    if n * m > solution.config.plan_cap:
        raise SizeCapExceeded(
            "plan has %d entries, cap is %d" % (n * m,
                                                solution.config.plan_cap))
    dense = kern.dense_realization()
    return solution.phi[:, None] * dense * solution.psi[None, :]


def transport_cost_fast(solution):
    """<C, plan> in linear time via the block split of the kernel.

    On the lower block the ground cost is x_i - y_j and on the upper
    block y_j - x_i, so with p, q the block halves of K psi and
    pt, qt those of K (y * psi), the objective collapses to
    sum_i phi_i * (x_i (p_i - q_i) - pt_i + qt_i).  All four matvecs
    run through the operator with its current absorption, which is
    exactly the kernel the factored plan refers to.
    """
    op = solution.kernel
    if not isinstance(op, kernel1d.KernelOperator1D):
        from .kernel2d import transport_cost_fast_2d
        return transport_cost_fast_2d(solution)
    x = op.x_mesh.nodes
    y = op.y_mesh.nodes
    psi = solution.psi
    p, q = kernel1d.apply_blocks(op, psi)
    pt, qt = kernel1d.apply_blocks(op, y * psi)
    return float(np.sum(solution.phi * (x * (p - q) - pt + qt)))

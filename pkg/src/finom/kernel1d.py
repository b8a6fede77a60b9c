"""Compressed representation of the 1D kernel and its linear-time matvec.

For sorted meshes ``x`` (rows) and ``y`` (columns), the kernel
``K[i, j] = exp(-|x_i - y_j| / eps)`` is never materialized.  The
dividing index ``zeta[i]`` (how many columns satisfy ``y_j <= x_i``)
splits it into a lower block (columns at or left of the staircase,
where the exponent is ``-(x_i - y_j)/eps``) and an upper block.  Within
each block, consecutive rows are proportional over their shared
columns, with ratio ``exp(-(x_{i+1} - x_i)/eps)``, so a block is fully
described by one ratio vector plus the per-row "block edge" segments
of entries not covered by the scaled previous row.  Matvecs then run
as a forward recursion over the lower block and a backward recursion
over the upper block, touching each stored entry once.

Log-domain shift vectors ``a`` (rows) and ``b`` (columns) rescale the
kernel to ``exp((-|x_i - y_j| + a_i + b_j)/eps)``.  Absorbing shifts
rebuilds every stored entry from the accumulated exponent, never by
multiplying the previous values, so repeated absorption does not
compound rounding error.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as _k
from .errors import (
    DimensionMismatch,
    InvalidEpsilon,
    NonFiniteInput,
)
from .mesh import Mesh1D

LOWER = "lower"
UPPER = "upper"


@dataclass(frozen=True)
class DividingIndex:
    """Per-row count of columns at or left of the staircase."""

    zeta: np.ndarray
    n_cols: int

    def __post_init__(self):
        z = np.ascontiguousarray(np.asarray(self.zeta, dtype=np.int64))
        z.flags.writeable = False
        object.__setattr__(self, "zeta", z)

    def __len__(self):
        return self.zeta.size


def dividing_index(x, y):
    """Dividing index of row mesh x against column mesh y.

    zeta[i] counts columns j with y_j <= x_i, so ties land in the lower
    block.  Non-decreasing by sortedness of both meshes.
    """
    z = np.searchsorted(y.nodes, x.nodes, side="right").astype(np.int64)
    return DividingIndex(z, len(y))


@dataclass(frozen=True)
class QuasiCollinearRep:
    """One block (lower or upper) as ratios plus edge segments.

    ``edge_values`` stores the segments flattened in column order;
    ``row_owner[k]`` is the row that edge k belongs to (non-decreasing).
    ``distances`` keeps the base coordinate distances of the stored
    entries and ``gaps`` the row-mesh increments, so the values can be
    rebuilt from exponents when shift vectors are absorbed.
    """

    orientation: str
    boundaries: DividingIndex
    epsilon: float
    ratios: np.ndarray
    edge_values: np.ndarray
    row_owner: np.ndarray
    distances: np.ndarray
    gaps: np.ndarray

    @property
    def edges(self):
        """Edge segments as a list of per-row arrays (copies)."""
        z = self.boundaries.zeta
        n = z.size
        m = self.boundaries.n_cols
        if self.orientation == LOWER:
            starts = np.concatenate(([0], z[:-1]))
            stops = z
        else:
            starts = z - z[0]
            stops = np.concatenate((z[1:], [m])) - z[0]
        return [self.edge_values[a:b].copy() for a, b in zip(starts, stops)]

    def dump(self):
        """Structured text form (index, ratios, segments) for golden tests."""
        lines = [
            "orientation: %s" % self.orientation,
            "epsilon: %s" % repr(self.epsilon),
            "zeta: %s" % " ".join(str(int(v)) for v in self.boundaries.zeta),
            "ratios: %s" % " ".join(repr(float(v)) for v in self.ratios),
        ]
        for i, seg in enumerate(self.edges):
            body = (" ".join(repr(float(v)) for v in seg)
                    if seg.size else "(empty)")
            lines.append("segment %d: %s" % (i, body))
        return "\n".join(lines)


def _check_eps(epsilon):
    epsilon = float(epsilon)
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise InvalidEpsilon("epsilon must be a positive finite real")
    return epsilon


def _build_rep_arrays(row_nodes, col_nodes, zeta, epsilon, orientation,
                      row_abs, col_abs):
    """Assemble one rep's arrays; shifts row_abs/col_abs enter exponents."""
    z = zeta.zeta
    n = row_nodes.size
    m = zeta.n_cols
    gaps = np.diff(row_nodes)
    if orientation == LOWER:
        counts = np.diff(z, prepend=0)
        cols = np.arange(z[-1])
        row_owner = np.repeat(np.arange(n, dtype=np.int64), counts)
        distances = row_nodes[row_owner] - col_nodes[cols]
        ratio_exp = -gaps + np.diff(row_abs)
        conventional = z[:-1] == 0
    else:
        counts = np.diff(z, append=m)
        cols = np.arange(z[0], m)
        row_owner = np.repeat(np.arange(n, dtype=np.int64), counts)
        distances = col_nodes[cols] - row_nodes[row_owner]
        ratio_exp = -gaps - np.diff(row_abs)
        conventional = z[1:] == m
    ratios = np.exp(ratio_exp / epsilon)
    # The entry-quotient definition of the ratios leaves positions whose
    # source row is structurally empty as 0/0; the conventional value
    # there is 1.  The recursions never multiply through those positions
    # (the running sum is an exact zero), so this is presentational.
    ratios[conventional] = 1.0
    edge_values = np.exp((-distances + row_abs[row_owner] + col_abs[cols])
                         / epsilon)
    return QuasiCollinearRep(
        orientation=orientation,
        boundaries=zeta,
        epsilon=epsilon,
        ratios=ratios,
        edge_values=edge_values,
        row_owner=row_owner,
        distances=distances,
        gaps=gaps,
    )


def build_rep(x, y, epsilon, orientation):
    """Build the lower or upper block representation of exp(-|x-y|/eps).

    Ratios come straight from the row-mesh gaps as
    ``exp(-(x_{i+1} - x_i)/eps)``; no kernel entries are divided, so
    underflow in far-off entries cannot poison the representation.
    Positions whose source row has no entries in the block hold the
    conventional value 1.
    """
    epsilon = _check_eps(epsilon)
    if orientation not in (LOWER, UPPER):
        raise ValueError("orientation must be %r or %r" % (LOWER, UPPER))
    zeta = dividing_index(x, y)
    zero_rows = np.zeros(len(x))
    zero_cols = np.zeros(len(y))
    return _build_rep_arrays(x.nodes, y.nodes, zeta, epsilon, orientation,
                             zero_rows, zero_cols)


class OpCounter:
    """Accumulates multiplication/addition tallies of counted applies."""

    __slots__ = ("mults", "adds")

    def __init__(self):
        self.reset()

    def reset(self):
        self.mults = 0
        self.adds = 0


@dataclass(frozen=True)
class KernelOperator1D:
    """The kernel of a mesh pair as four block representations.

    ``lower``/``upper`` drive K matvecs; ``t_lower``/``t_upper`` are the
    blocks of the transposed kernel, built with the mesh roles swapped.
    ``absorption_left`` (a, per row) and ``absorption_right`` (b, per
    column) hold the accumulated log-domain shifts already baked into
    the stored values.  Logically immutable: absorb() returns a new
    operator.
    """

    x_mesh: Mesh1D
    y_mesh: Mesh1D
    epsilon: float
    lower: QuasiCollinearRep
    upper: QuasiCollinearRep
    t_lower: QuasiCollinearRep
    t_upper: QuasiCollinearRep
    absorption_left: np.ndarray
    absorption_right: np.ndarray
    op_counter: Optional[OpCounter] = field(default=None)

    @property
    def shape(self):
        return (len(self.x_mesh), len(self.y_mesh))

    def apply(self, psi):
        return apply(self, psi)

    def apply_transpose(self, phi):
        return apply_transpose(self, phi)

    def absorb(self, delta_a, delta_b):
        return absorb(self, delta_a, delta_b)

    def dense_realization(self):
        return dense_realization(self)


def build_operator(x, y, epsilon, count_ops=False):
    """Build the four block representations for meshes x (rows), y (cols)."""
    epsilon = _check_eps(epsilon)
    return _assemble(x, y, epsilon, np.zeros(len(x)), np.zeros(len(y)),
                     OpCounter() if count_ops else None)


def _assemble(x, y, epsilon, a, b, counter):
    zf = dividing_index(x, y)
    zt = dividing_index(y, x)
    return KernelOperator1D(
        x_mesh=x,
        y_mesh=y,
        epsilon=epsilon,
        lower=_build_rep_arrays(x.nodes, y.nodes, zf, epsilon, LOWER, a, b),
        upper=_build_rep_arrays(x.nodes, y.nodes, zf, epsilon, UPPER, a, b),
        t_lower=_build_rep_arrays(y.nodes, x.nodes, zt, epsilon, LOWER, b, a),
        t_upper=_build_rep_arrays(y.nodes, x.nodes, zt, epsilon, UPPER, b, a),
        absorption_left=a,
        absorption_right=b,
        op_counter=counter,
    )


def _check_vec(vec, length, what):
    vec = np.ascontiguousarray(np.asarray(vec, dtype=np.float64))
    if vec.ndim != 1 or vec.size != length:
        raise DimensionMismatch(
            "%s must be a vector of length %d" % (what, length)
        )
    if not np.all(np.isfinite(vec)):
        raise NonFiniteInput("%s must be finite" % what)
    return vec


def _dp(lower, upper, vec, out, counter):
    z = lower.boundaries.zeta
    m = lower.boundaries.n_cols
    if counter is not None:
        mult, add = _k.dp_apply_counted(
            z, lower.ratios, upper.ratios,
            lower.edge_values, upper.edge_values, vec, m, out)
        counter.mults += int(mult)
        counter.adds += int(add)
    else:
        _k.dp_apply(z, lower.ratios, upper.ratios,
                    lower.edge_values, upper.edge_values, vec, m, out)
    return out


def apply(op, psi):
    """K psi by the forward/backward block recursions, O(N + M + stored)."""
    psi = _check_vec(psi, len(op.y_mesh), "psi")
    out = np.empty(len(op.x_mesh))
    return _dp(op.lower, op.upper, psi, out, op.op_counter)


def apply_transpose(op, phi):
    """K^T phi via the transpose-block representations."""
    phi = _check_vec(phi, len(op.x_mesh), "phi")
    out = np.empty(len(op.y_mesh))
    return _dp(op.t_lower, op.t_upper, phi, out, op.op_counter)


def apply_blocks(op, psi):
    """The two block matvecs (K_lower psi, K_upper psi) separately.

    The transport-cost identity needs the halves before they are summed.
    """
    psi = _check_vec(psi, len(op.y_mesh), "psi")
    n = len(op.x_mesh)
    p = np.empty(n)
    q = np.empty(n)
    _k.dp_blocks(op.lower.boundaries.zeta, op.lower.ratios, op.upper.ratios,
                 op.lower.edge_values, op.upper.edge_values,
                 psi, op.lower.boundaries.n_cols, p, q)
    return p, q


def absorb(op, delta_a, delta_b):
    """New operator with shifts a + delta_a, b + delta_b baked in.

    Every stored ratio and edge entry is recomputed from its coordinate
    distance plus the accumulated shifts in a single exponent, so two
    successive absorbs equal one absorb of the summed deltas and can be
    repeated indefinitely without drift.
    """
    delta_a = _check_vec(delta_a, len(op.x_mesh), "delta_a")
    delta_b = _check_vec(delta_b, len(op.y_mesh), "delta_b")
    a = op.absorption_left + delta_a
    b = op.absorption_right + delta_b
    return _assemble(op.x_mesh, op.y_mesh, op.epsilon, a, b, op.op_counter)


def dense_realization(op):
    """The operator's dense matrix, for tests and small-scale debugging.

    Computed independently of the block representations, entry by entry
    from exp((-|x_i - y_j| + a_i + b_j)/eps).
    """
    x = op.x_mesh.nodes
    y = op.y_mesh.nodes
    expo = -np.abs(np.subtract.outer(x, y))
    expo = expo + op.absorption_left[:, None] + op.absorption_right[None, :]
    return np.exp(expo / op.epsilon)

"""Meshes, measures, and problem file I/O.

A problem instance consists of a source and a target discretization
(1D meshes or 2D tensor-product grids) plus one probability measure on
each.  Everything downstream consumes the types defined here.

Random generators use numpy's ``default_rng`` (PCG64), so any quantity
produced from a given seed is reproducible byte for byte across runs
and platforms.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    DuplicateNode,
    NonFiniteCoordinate,
    ParseError,
    UnsortedInput,
    ValidationError,
)

MASS_TOL = 1e-12


def _freeze(a):
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Mesh1D:
    """Strictly ascending finite coordinates; immutable."""

    nodes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", _freeze(self.nodes))
        nodes = self.nodes
        if nodes.ndim != 1 or nodes.size < 1:
            raise ValidationError("mesh needs a nonempty 1D coordinate list")
        if not np.all(np.isfinite(nodes)):
            raise NonFiniteCoordinate("mesh coordinates must be finite")
        diffs = np.diff(nodes)
        if np.any(diffs < 0):
            raise UnsortedInput("mesh coordinates must be ascending")
        if np.any(diffs == 0):
            raise DuplicateNode("mesh coordinates must be strictly ascending")

    def __len__(self):
        return self.nodes.size


@dataclass(frozen=True)
class Measure:
    """Nonnegative weights summing to 1 (within MASS_TOL); immutable."""

    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _freeze(self.weights))
        w = self.weights
        if w.ndim != 1 or w.size < 1:
            raise ValidationError("measure needs a nonempty 1D weight list")
        if not np.all(np.isfinite(w)):
            raise ValidationError("measure weights must be finite")
        if np.any(w < 0):
            raise ValidationError("measure weights must be nonnegative")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ValidationError(
                "measure weights must sum to 1 within %g (got %.17g)"
                % (MASS_TOL, w.sum())
            )

    def __len__(self):
        return self.weights.size


@dataclass(frozen=True)
class Grid2D:
    """Tensor-product grid of two 1D meshes.

    Grid point (k, i) maps to linear index i*N + k, i.e. the columns of
    an N-by-M array are stacked in order (column-major vectorization).
    That convention is what ties grid measures to the factored kernel.
    """

    x_nodes: Mesh1D
    y_nodes: Mesh1D
    ordering: str = field(default="column-major")

    def __post_init__(self):
        if self.ordering != "column-major":
            raise ValidationError("only column-major grid ordering is defined")

    @property
    def shape(self):
        return (len(self.x_nodes), len(self.y_nodes))

    def __len__(self):
        return len(self.x_nodes) * len(self.y_nodes)


@dataclass(frozen=True)
class Measure2D:
    """Nonnegative N-by-M weight array with total mass 1; immutable."""

    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _freeze(self.weights))
        w = self.weights
        if w.ndim != 2 or w.size < 1:
            raise ValidationError("grid measure needs a nonempty 2D weight array")
        if not np.all(np.isfinite(w)):
            raise ValidationError("grid measure weights must be finite")
        if np.any(w < 0):
            raise ValidationError("grid measure weights must be nonnegative")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ValidationError(
                "grid measure weights must sum to 1 within %g (got %.17g)"
                % (MASS_TOL, w.sum())
            )

    @property
    def shape(self):
        return self.weights.shape


@dataclass(frozen=True)
class Problem:
    """A source/target pair of discretizations with their measures.

    For ``dim == 1`` the discretizations are Mesh1D and the measures
    Measure; for ``dim == 2`` they are Grid2D and Measure2D.
    """

    source: object
    target: object
    u: object
    v: object

    @property
    def dim(self):
        return 2 if isinstance(self.source, Grid2D) else 1


def validate_mesh(nodes):
    """Check coordinates and wrap them as a Mesh1D.

    Raises NonFiniteCoordinate, UnsortedInput, or DuplicateNode when the
    coordinates are unusable.  Equal coordinates across two different
    meshes are fine; only duplicates within one mesh are rejected.
    """
    return Mesh1D(np.asarray(nodes, dtype=np.float64))


def chebyshev_nodes(n):
    """Mesh of the n Chebyshev nodes on (0, 1), ascending.

    Node k of the underlying family is 1/2 + cos((2k-1) pi / (2n)) / 2
    for k = 1..n, which runs downhill in k; the returned mesh is the
    ascending reordering.  Nodes cluster near both endpoints and are
    symmetric about 1/2.
    """
    n = int(n)
    if n < 1:
        raise ConfigError("node count must be >= 1")
    k = np.arange(1, n + 1)
    nodes = 0.5 + 0.5 * np.cos((2 * k - 1) * np.pi / (2 * n))
    return Mesh1D(nodes[::-1])


def random_sorted_nodes(n, seed):
    """Mesh of n sorted uniform-[0,1] draws, deterministic in seed.

    Exact duplicates (a probability-zero event at double precision) are
    resampled until the mesh is strictly ascending.
    """
    n = int(n)
    if n < 1:
        raise ConfigError("node count must be >= 1")
    rng = np.random.default_rng(seed)
    nodes = np.sort(rng.uniform(0.0, 1.0, n))
    while n > 1:
        dup = np.flatnonzero(np.diff(nodes) == 0)
        if dup.size == 0:
            break
        nodes[dup] = rng.uniform(0.0, 1.0, dup.size)
        nodes = np.sort(nodes)
    return Mesh1D(nodes)


def random_measure(n, seed):
    """Measure of n uniform draws normalized to unit mass."""
    n = int(n)
    if n < 1:
        raise ConfigError("weight count must be >= 1")
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.0, 1.0, n)
    total = w.sum()
    if total <= 0:
        raise ValidationError("weights sum to zero; cannot normalize")
    return Measure(w / total)


def random_measure_2d(n, m, seed):
    """Grid measure of n-by-m uniform draws normalized to unit mass."""
    n, m = int(n), int(m)
    if n < 1 or m < 1:
        raise ConfigError("grid measure shape must be at least 1x1")
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.0, 1.0, (n, m))
    total = w.sum()
    if total <= 0:
        raise ValidationError("weights sum to zero; cannot normalize")
    return Measure2D(w / total)


def _as_measure(raw, n_expect, what):
    w = np.asarray(raw, dtype=np.float64)
    if w.ndim != 1:
        raise ParseError("%s must be a flat list of weights" % what)
    if w.size != n_expect:
        raise DimensionMismatch(
            "%s has %d weights for %d nodes" % (what, w.size, n_expect)
        )
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValidationError("%s has non-positive or non-finite mass" % what)
    if abs(total - 1.0) > MASS_TOL:
        w = w / total
    return Measure(w)


def _as_measure_2d(raw, shape_expect, what):
    w = np.asarray(raw, dtype=np.float64)
    if w.ndim != 2:
        raise ParseError("%s must be a nested list of weight rows" % what)
    if w.shape != shape_expect:
        raise DimensionMismatch(
            "%s has shape %s for grid shape %s" % (what, w.shape, shape_expect)
        )
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValidationError("%s has non-positive or non-finite mass" % what)
    if abs(total - 1.0) > MASS_TOL:
        w = w / total
    return Measure2D(w)


def load_problem(path):
    """Read a problem file (see save_problem for the schema).

    Weights are kept bit-for-bit when they already sum to 1 within
    MASS_TOL, so a save/load round trip reproduces the instance
    exactly; weights further off are normalized by their exact sum.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError("cannot read problem file %s: %s" % (path, exc)) from exc
    if not isinstance(doc, dict):
        raise ParseError("problem file must hold a JSON object")
    dim = doc.get("dim")
    try:
        if dim == 1:
            x1 = validate_mesh(doc["x1"])
            x2 = validate_mesh(doc["x2"])
            u = _as_measure(doc["u"], len(x1), "u")
            v = _as_measure(doc["v"], len(x2), "v")
            return Problem(x1, x2, u, v)
        if dim == 2:
            g1 = Grid2D(validate_mesh(doc["x1"]), validate_mesh(doc["y1"]))
            g2 = Grid2D(validate_mesh(doc["x2"]), validate_mesh(doc["y2"]))
            u = _as_measure_2d(doc["u"], g1.shape, "u")
            v = _as_measure_2d(doc["v"], g2.shape, "v")
            return Problem(g1, g2, u, v)
    except KeyError as exc:
        raise ParseError("problem file is missing field %s" % exc) from exc
    raise ParseError("problem file must declare dim 1 or 2")


def save_problem(problem, path):
    """Write a problem instance as JSON.

    Schema: ``dim`` (1 or 2); node lists ``x1``, ``x2`` (plus ``y1``,
    ``y2`` for dim 2, the second grid axis of source and target); weight
    arrays ``u``, ``v`` (flat for dim 1, nested rows for dim 2).  Floats
    are written in shortest round-trip form, so loading recovers every
    value exactly.
    """
    if problem.dim == 1:
        doc = {
            "schema_version": 1,
            "dim": 1,
            "x1": problem.source.nodes.tolist(),
            "x2": problem.target.nodes.tolist(),
            "u": problem.u.weights.tolist(),
            "v": problem.v.weights.tolist(),
        }
    else:
        doc = {
            "schema_version": 1,
            "dim": 2,
            "x1": problem.source.x_nodes.nodes.tolist(),
            "y1": problem.source.y_nodes.nodes.tolist(),
            "x2": problem.target.x_nodes.nodes.tolist(),
            "y2": problem.target.y_nodes.nodes.tolist(),
            "u": problem.u.weights.tolist(),
            "v": problem.v.weights.tolist(),
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def save_problem_csv(problem, path):
    """Write the instance as a flat CSV table for interop.

    1D rows are (role, index, node, weight); 2D rows are
    (role, i, j, x, y, weight) over every grid point.  The JSON format
    is the one load_problem reads back; this export is one-way.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if problem.dim == 1:
            w.writerow(["role", "index", "node", "weight"])
            for role, mesh, meas in (
                ("source", problem.source, problem.u),
                ("target", problem.target, problem.v),
            ):
                for i, (node, wt) in enumerate(zip(mesh.nodes, meas.weights)):
                    w.writerow([role, i, repr(float(node)), repr(float(wt))])
        else:
            w.writerow(["role", "i", "j", "x", "y", "weight"])
            for role, grid, meas in (
                ("source", problem.source, problem.u),
                ("target", problem.target, problem.v),
            ):
                xs = grid.x_nodes.nodes
                ys = grid.y_nodes.nodes
                wt = meas.weights
                for i in range(xs.size):
                    for j in range(ys.size):
                        w.writerow([role, i, j,
                                    repr(float(xs[i])), repr(float(ys[j])),
                                    repr(float(wt[i, j]))])

import json

import numpy as np
import pytest

from finom import mesh as fm
from finom.errors import (
    DimensionMismatch,
    DuplicateNode,
    NonFiniteCoordinate,
    ParseError,
    UnsortedInput,
    ValidationError,
)

# Closed form at n=2: 0.5 + 0.5*cos(pi/4) and 0.5 + 0.5*cos(3*pi/4),
# returned in ascending order.
CHEB2 = (0.14644660940672627, 0.8535533905932737)


def test_chebyshev_two_nodes_frozen():
    nodes = fm.chebyshev_nodes(2)
    assert nodes.nodes[0] == CHEB2[0]
    assert nodes.nodes[1] == CHEB2[1]


def test_chebyshev_ascending_and_interior():
    for n in (1, 2, 5, 17, 500):
        nodes = fm.chebyshev_nodes(n).nodes
        assert nodes.size == n
        assert np.all(np.diff(nodes) > 0)
        assert np.all((nodes > 0.0) & (nodes < 1.0))


def test_chebyshev_symmetry():
    nodes = fm.chebyshev_nodes(129).nodes
    assert np.max(np.abs(nodes + nodes[::-1] - 1.0)) < 1e-14


def test_chebyshev_single_node():
    nodes = fm.chebyshev_nodes(1).nodes
    assert nodes[0] == 0.5


class TestMeshValidation:
    def test_unsorted_rejected(self):
        with pytest.raises(UnsortedInput):
            fm.Mesh1D(np.array([0.1, 0.5, 0.3]))

    def test_duplicates_rejected(self):
        with pytest.raises(DuplicateNode):
            fm.Mesh1D(np.array([0.1, 0.3, 0.3, 0.7]))

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteCoordinate):
            fm.Mesh1D(np.array([0.1, np.nan, 0.7]))
        with pytest.raises(NonFiniteCoordinate):
            fm.Mesh1D(np.array([0.1, 0.5, np.inf]))

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            fm.Mesh1D(np.array([]))

    def test_validate_mesh_passes_through(self):
        m = fm.validate_mesh([0.0, 0.25, 1.0])
        assert isinstance(m, fm.Mesh1D)
        assert len(m) == 3

    def test_nodes_frozen(self):
        m = fm.Mesh1D(np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            m.nodes[0] = 5.0


class TestMeasureValidation:
    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            fm.Measure(np.array([0.5, -0.1, 0.6]))

    def test_bad_sum_rejected(self):
        with pytest.raises(ValidationError):
            fm.Measure(np.array([0.5, 0.6]))

    def test_near_one_accepted(self):
        fm.Measure(np.array([0.5, 0.5 + 1e-13]))

    def test_zero_entries_allowed(self):
        m = fm.Measure(np.array([0.0, 1.0, 0.0]))
        assert m.weights[1] == 1.0


def test_random_sorted_nodes_reproducible():
    a = fm.random_sorted_nodes(100, seed=7).nodes
    b = fm.random_sorted_nodes(100, seed=7).nodes
    c = fm.random_sorted_nodes(100, seed=8).nodes
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all(np.diff(a) > 0)


def test_random_measure_sums_to_one_at_million():
    m = fm.random_measure(10**6, seed=3)
    assert abs(float(np.sum(m.weights)) - 1.0) < 1e-12
    assert np.all(m.weights >= 0)


def test_random_measure_2d_shape_and_sum():
    m = fm.random_measure_2d(13, 7, seed=5)
    assert m.weights.shape == (13, 7)
    assert abs(float(np.sum(m.weights)) - 1.0) < 1e-12


def _problem_1d(seed=11, n=23, m=17):
    return fm.Problem(
        source=fm.random_sorted_nodes(n, seed=seed),
        target=fm.random_sorted_nodes(m, seed=seed + 1),
        u=fm.random_measure(n, seed=seed + 2),
        v=fm.random_measure(m, seed=seed + 3),
    )


def _problem_2d(seed=11):
    gx = fm.Grid2D(fm.random_sorted_nodes(5, seed=seed),
                   fm.random_sorted_nodes(4, seed=seed + 1))
    gy = fm.Grid2D(fm.random_sorted_nodes(6, seed=seed + 2),
                   fm.random_sorted_nodes(3, seed=seed + 3))
    return fm.Problem(
        source=gx,
        target=gy,
        u=fm.random_measure_2d(5, 4, seed=seed + 4),
        v=fm.random_measure_2d(6, 3, seed=seed + 5),
    )


def test_round_trip_1d_bit_exact(tmp_path):
    p = _problem_1d()
    path = tmp_path / "p.json"
    fm.save_problem(p, path)
    q = fm.load_problem(path)
    assert q.dim == 1
    assert np.array_equal(p.source.nodes, q.source.nodes)
    assert np.array_equal(p.target.nodes, q.target.nodes)
    assert np.array_equal(p.u.weights, q.u.weights)
    assert np.array_equal(p.v.weights, q.v.weights)


def test_round_trip_2d_bit_exact(tmp_path):
    p = _problem_2d()
    path = tmp_path / "p2.json"
    fm.save_problem(p, path)
    q = fm.load_problem(path)
    assert q.dim == 2
    assert np.array_equal(p.source.x_nodes.nodes, q.source.x_nodes.nodes)
    assert np.array_equal(p.source.y_nodes.nodes, q.source.y_nodes.nodes)
    assert np.array_equal(p.target.x_nodes.nodes, q.target.x_nodes.nodes)
    assert np.array_equal(p.target.y_nodes.nodes, q.target.y_nodes.nodes)
    assert np.array_equal(p.u.weights, q.u.weights)
    assert np.array_equal(p.v.weights, q.v.weights)


def test_load_problem_missing_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"dim": 1, "x1": [0.0, 1.0]}))
    with pytest.raises(ParseError):
        fm.load_problem(path)


def test_load_problem_malformed(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        fm.load_problem(path)


def test_load_problem_absent_file(tmp_path):
    with pytest.raises(ParseError):
        fm.load_problem(tmp_path / "nope.json")


def test_load_problem_length_mismatch(tmp_path):
    path = tmp_path / "mis.json"
    path.write_text(json.dumps({
        "schema_version": 1, "dim": 1,
        "x1": [0.0, 1.0], "x2": [0.0, 0.5, 1.0],
        "u": [0.5, 0.5, 0.0], "v": [0.3, 0.3, 0.4],
    }))
    with pytest.raises(DimensionMismatch):
        fm.load_problem(path)


def test_csv_export_1d(tmp_path):
    p = _problem_1d(n=4, m=3)
    path = tmp_path / "p.csv"
    fm.save_problem_csv(p, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "role,index,node,weight"
    assert len(lines) == 1 + 4 + 3
    role, idx, node, w = lines[1].split(",")
    assert role == "source"
    assert float(node) == p.source.nodes[int(idx)]
    assert float(w) == p.u.weights[int(idx)]


def test_csv_export_2d(tmp_path):
    p = _problem_2d()
    path = tmp_path / "p2.csv"
    fm.save_problem_csv(p, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "role,i,j,x,y,weight"
    assert len(lines) == 1 + 5 * 4 + 6 * 3

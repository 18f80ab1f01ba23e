"""Grid-embedding pipeline: MDS, normalization, cost matrix, assignment."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from dtigrid.errors import (
    CapacityError,
    DegenerateAxisWarning,
    DegenerateGeometryError,
    InvalidInputError,
)
from dtigrid.grid_embed import (
    GRID_SIZE,
    N_CELLS,
    CentroidSet,
    GridLayout,
    assignment_cost,
    build_cost_matrix,
    cell_of_index,
    classical_mds,
    embed_grid,
    hungarian,
    normalize_to_grid,
)


def _pairwise(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sqrt(np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=2))


def _brute_force_min(cost):
    n = cost.shape[0]
    best = np.inf
    best_perm = None
    for perm in itertools.permutations(range(n)):
        c = sum(cost[i, perm[i]] for i in range(n))
        if c < best - 1e-12 or (
            abs(c - best) <= 1e-12 and (best_perm is None or perm < best_perm)
        ):
            best = c
            best_perm = perm
    return best, best_perm


class TestClassicalMds:
    def test_collinear_points_exact(self):
        x = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], dtype=np.float64)
        y = classical_mds(x)
        assert np.max(np.abs(_pairwise(y) - _pairwise(x))) <= 1e-9

    def test_two_points_distance_preserved(self):
        x = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 2.0]])
        y = classical_mds(x)
        assert abs(np.linalg.norm(y[0] - y[1]) - 3.0) <= 1e-9

    def test_unit_square_distances_preserved(self):
        x = np.array(
            [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=np.float64
        )
        y = classical_mds(x)
        assert np.max(np.abs(_pairwise(y) - _pairwise(x))) <= 1e-9

    def test_random_flat_configuration_exact(self):
        # any rank-<=2 configuration embeds exactly
        rng = np.random.default_rng(3)
        planar = rng.normal(size=(12, 2))
        basis = np.linalg.qr(rng.normal(size=(3, 2)))[0]
        x = planar @ basis.T + rng.normal(size=3)
        y = classical_mds(x)
        assert np.max(np.abs(_pairwise(y) - _pairwise(x))) <= 1e-9

    def test_sign_convention_deterministic(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(10, 3))
        y1 = classical_mds(x)
        y2 = classical_mds(x.copy())
        np.testing.assert_array_equal(y1, y2)
        for axis in range(2):
            col = y1[:, axis]
            assert col[np.argmax(np.abs(col))] > 0

    def test_single_point_rejected(self):
        with pytest.raises(InvalidInputError):
            classical_mds(np.zeros((1, 3)))

    def test_coincident_points_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            classical_mds(np.ones((4, 3)))


class TestNormalizeToGrid:
    def test_extremes_and_midpoint(self):
        y = np.array([[0.0, 0.0], [8.0, 8.0], [4.0, 4.0]])
        g = normalize_to_grid(y)
        assert tuple(g[0]) == (1, 1)
        assert tuple(g[1]) == (9, 9)
        assert tuple(g[2]) == (5, 5)

    def test_half_rounds_away_from_zero(self):
        # frac = 0.5 exactly at the first interior boundary
        y = np.array([[0.0, 0.0], [16.0, 16.0], [1.0, 1.0]])
        g = normalize_to_grid(y)
        assert tuple(g[2]) == (2, 2)

    def test_degenerate_axis_maps_to_center(self):
        y = np.array([[0.0, 2.0], [1.0, 2.0], [3.0, 2.0]])
        with pytest.warns(DegenerateAxisWarning):
            g = normalize_to_grid(y)
        assert set(g[:, 1]) == {5}
        assert tuple(g[:, 0]) == (1, 4, 9)  # (1/3)*8 = 2.67 -> cell 4

    def test_bad_shape_rejected(self):
        with pytest.raises(InvalidInputError):
            normalize_to_grid(np.zeros((4, 3)))

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInputError):
            normalize_to_grid(np.array([[0.0, np.nan], [1.0, 2.0]]))


class TestCostMatrix:
    def test_zero_displacement_cell(self):
        cost = build_cost_matrix(np.array([[1, 1]]))
        assert cost[0, 0] == 0.0

    def test_known_displacement(self):
        cost = build_cost_matrix(np.array([[1, 1]]))
        j = 2 * GRID_SIZE + 3  # cell (3, 4)
        assert cell_of_index(j) == (3, 4)
        assert cost[0, j] == 13.0

    def test_dummy_rows_zero(self):
        cost = build_cost_matrix(np.array([[1, 1], [5, 5]]))
        assert np.all(cost[2:] == 0.0)
        assert cost.shape == (N_CELLS, N_CELLS)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            build_cost_matrix(np.ones((N_CELLS + 1, 2), dtype=np.int64))


class TestHungarian:
    def test_identity_friendly(self):
        pairs = hungarian(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert pairs == [(0, 0), (1, 1)]

    def test_known_3x3(self):
        cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
        pairs = hungarian(cost)
        assert assignment_cost(cost, pairs) == 5.0

    def test_random_matrices_match_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            n = int(rng.integers(2, 8))
            cost = rng.integers(0, 101, size=(n, n)).astype(np.float64)
            pairs = hungarian(cost)
            best, _ = _brute_force_min(cost)
            assert assignment_cost(cost, pairs) == best

    def test_lexicographic_tie_break(self):
        rng = np.random.default_rng(23)
        for _ in range(40):
            n = int(rng.integers(2, 7))
            # small integer range forces many ties
            cost = rng.integers(0, 4, size=(n, n)).astype(np.float64)
            pairs = hungarian(cost)
            best, best_perm = _brute_force_min(cost)
            assert assignment_cost(cost, pairs) == best
            assert tuple(c for _, c in pairs) == best_perm

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidInputError):
            hungarian(np.zeros((2, 3)))
        with pytest.raises(InvalidInputError):
            hungarian(np.array([[np.inf, 0.0], [0.0, 1.0]]))
        with pytest.raises(InvalidInputError):
            hungarian(np.zeros((0, 0)))


class TestEmbedGrid:
    def test_74_centroids_injective(self):
        rng = np.random.default_rng(0)
        cs = CentroidSet(
            tuple(f"t{i}" for i in range(74)), rng.normal(0, 30, size=(74, 3))
        )
        layout = embed_grid(cs)
        cells = list(layout.assignment.values())
        assert len(cells) == 74
        assert len(set(cells)) == 74

    def test_zero_displacement_when_collision_free(self):
        # place centroids in the z=0 plane exactly on distinct grid nodes; the
        # provisional grid has no collisions, so the assignment keeps it
        rng = np.random.default_rng(5)
        nodes = [(r, c) for r in range(1, 10) for c in range(1, 10)]
        picked = [nodes[i] for i in rng.choice(81, size=20, replace=False)]
        pos = np.array([[float(r), float(c), 0.0] for r, c in picked])
        cs = CentroidSet(tuple(f"t{i}" for i in range(20)), pos)
        layout = embed_grid(cs)
        planar = classical_mds(cs)
        provisional = normalize_to_grid(planar)
        assert len({tuple(g) for g in provisional}) == 20  # truly collision-free
        expected = {
            f"t{i}": (int(provisional[i, 0]), int(provisional[i, 1]))
            for i in range(20)
        }
        assert layout.assignment == expected

    def test_forced_collisions_minimal_displacement(self):
        # 10 near-coincident centroids collapse onto few provisional cells;
        # optimal total squared displacement checked against an exact
        # independent solver on the same cost matrix
        rng = np.random.default_rng(9)
        pos = rng.normal(0, 1e-3, size=(10, 3)) + np.array([1.0, 2.0, 3.0])
        cs = CentroidSet(tuple(f"t{i}" for i in range(10)), pos)
        layout = embed_grid(cs)
        cells = list(layout.assignment.values())
        assert len(set(cells)) == 10
        provisional = normalize_to_grid(classical_mds(cs))
        cost = build_cost_matrix(provisional)
        got = sum(
            (r - provisional[i, 0]) ** 2 + (c - provisional[i, 1]) ** 2
            for i, (r, c) in enumerate(layout.assignment.values())
        )
        rows, cols = linear_sum_assignment(cost)
        assert got == cost[rows, cols].sum()

    def test_single_centroid_center(self):
        layout = embed_grid(CentroidSet(("only",), np.zeros((1, 3))))
        assert layout.assignment == {"only": (5, 5)}

    def test_capacity_error(self):
        rng = np.random.default_rng(1)
        cs = CentroidSet(
            tuple(f"t{i}" for i in range(82)), rng.normal(size=(82, 3))
        )
        with pytest.raises(CapacityError):
            embed_grid(cs)

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(min_value=2, max_value=81),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_injective_for_any_count(self, n, seed):
        rng = np.random.default_rng(seed)
        cs = CentroidSet(
            tuple(f"t{i}" for i in range(n)), rng.normal(0, 10, size=(n, 3))
        )
        layout = embed_grid(cs)
        cells = list(layout.assignment.values())
        assert len(set(cells)) == n
        assert all(1 <= r <= 9 and 1 <= c <= 9 for r, c in cells)


class TestGridLayout:
    def test_rejects_non_injective(self):
        with pytest.raises(InvalidInputError):
            GridLayout({"a": (1, 1), "b": (1, 1)})

    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidInputError):
            GridLayout({"a": (0, 5)})

    def test_cell_centers_roundtrip_order(self):
        layout = GridLayout({"b": (2, 3), "a": (4, 4)})
        cs = layout.cell_centers_3d()
        assert cs.tract_ids == ("b", "a")
        np.testing.assert_array_equal(
            cs.positions, [[2.0, 3.0, 0.0], [4.0, 4.0, 0.0]]
        )


class TestCentroidSet:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(InvalidInputError):
            CentroidSet(("a", "a"), np.zeros((2, 3)))

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInputError):
            CentroidSet(("a", "b"), np.array([[0, 0, 0], [np.inf, 0, 0]]))

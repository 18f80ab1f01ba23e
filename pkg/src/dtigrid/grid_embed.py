"""3D tract centroids -> collision-free cells of a 9x9 grid.

Pipeline: classical (Torgerson) MDS to the plane, normalization onto the
grid, then an exact linear-assignment step that resolves collisions with
minimal total squared displacement.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CapacityError,
    DegenerateAxisWarning,
    DegenerateGeometryError,
    InvalidInputError,
)

GRID_SIZE = 9
N_CELLS = GRID_SIZE * GRID_SIZE


@dataclass(frozen=True)
class CentroidSet:
    """Ordered per-tract 3D centroids (millimeters)."""

    tract_ids: tuple
    positions: np.ndarray  # (n, 3) float64

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "tract_ids", tuple(self.tract_ids))
        n = len(self.tract_ids)
        if n < 1:
            raise InvalidInputError("centroid set is empty")
        if len(set(self.tract_ids)) != n:
            raise InvalidInputError("tract ids are not unique")
        if pos.shape != (n, 3):
            raise InvalidInputError(
                f"positions shape {pos.shape} does not match {n} tract ids"
            )
        if not np.all(np.isfinite(pos)):
            raise InvalidInputError("centroid coordinates must be finite")

    def __len__(self):
        return len(self.tract_ids)


@dataclass(frozen=True)
class GridLayout:
    """Injective map tract_id -> (row, col), both 1-based in 1..GRID_SIZE."""

    assignment: dict = field(default_factory=dict)

    def __post_init__(self):
        cells = list(self.assignment.values())
        if len(set(cells)) != len(cells):
            raise InvalidInputError("layout is not injective")
        for r, c in cells:
            if not (1 <= r <= GRID_SIZE and 1 <= c <= GRID_SIZE):
                raise InvalidInputError(f"cell ({r},{c}) outside the grid")

    @property
    def occupied_count(self):
        return len(self.assignment)

    def cell_centers_3d(self):
        """Occupied cells as 3D points in the z=0 plane, layout order."""
        ids = list(self.assignment)
        pos = np.array(
            [[float(r), float(c), 0.0] for r, c in self.assignment.values()]
        )
        return CentroidSet(tuple(ids), pos)


def _jacobi_eigh(a, tol=1e-12, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns.
    Convergence: off-diagonal Frobenius norm <= tol * matrix Frobenius norm.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return np.diag(a).copy(), v
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.tril(a, -1) ** 2))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol * norm / n:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0 else 1.0
                t = t / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J on the (p, q) plane
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def classical_mds(centroids):
    """Project centroids to the plane with classical (Torgerson) MDS.

    Double-centers the squared distance matrix and projects onto the top-2
    eigenvectors scaled by sqrt(eigenvalue).  Sign convention: each
    eigenvector's largest-magnitude component is made positive (first index
    wins ties), so the output is deterministic up to the geometry itself.
    """
    if isinstance(centroids, CentroidSet):
        x = centroids.positions
    else:
        x = np.asarray(centroids, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise InvalidInputError("classical_mds needs at least 2 points")
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=2)
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ d2 @ j
    evals, evecs = _jacobi_eigh(b)
    order = np.argsort(-evals)
    top = order[:2]
    if evals[top[0]] <= 0 and evals[top[1]] <= 0:
        raise DegenerateGeometryError("all centroids coincide")
    y = np.zeros((n, 2))
    for axis, idx in enumerate(top):
        lam = max(float(evals[idx]), 0.0)
        vec = evecs[:, idx].copy()
        m = int(np.argmax(np.abs(vec)))
        if vec[m] < 0:
            vec = -vec
        y[:, axis] = vec * np.sqrt(lam)
    return y


def _round_half_away(x):
    return np.floor(np.abs(x) + 0.5) * np.sign(x) + 0.0


def normalize_to_grid(planar):
    """Map planar coordinates onto integer cells of the grid (collisions kept).

    Per axis: g = round((y - y_min) / (y_max - y_min) * (GRID_SIZE-1)) + 1,
    rounding half away from zero.  A collapsed axis maps to the center with a
    DegenerateAxisWarning.
    """
    y = np.asarray(planar, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 2:
        raise InvalidInputError("planar coordinates must have shape (n, 2)")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("planar coordinates must be finite")
    n = y.shape[0]
    g = np.empty((n, 2), dtype=np.int64)
    center = (GRID_SIZE + 1) // 2
    for axis in range(2):
        lo = y[:, axis].min()
        hi = y[:, axis].max()
        if hi == lo:
            warnings.warn(
                f"axis {axis} is degenerate (all values equal); using center",
                DegenerateAxisWarning,
                stacklevel=2,
            )
            g[:, axis] = center
            continue
        frac = (y[:, axis] - lo) / (hi - lo) * (GRID_SIZE - 1)
        g[:, axis] = _round_half_away(frac).astype(np.int64) + 1
    return g


def cell_of_index(j):
    """Row-major cell index -> 1-based (row, col)."""
    return (j // GRID_SIZE + 1, j % GRID_SIZE + 1)


def build_cost_matrix(grid):
    """Squared-displacement cost of every tract against every grid cell.

    Rows past the tract count are zero-cost dummies padding to N_CELLS so the
    assignment problem is square.
    """
    g = np.asarray(grid, dtype=np.int64)
    n = g.shape[0]
    if n < 1:
        raise InvalidInputError("empty provisional grid")
    if n > N_CELLS:
        raise CapacityError(f"{n} tracts exceed {N_CELLS} grid cells")
    cells = np.array([cell_of_index(j) for j in range(N_CELLS)], dtype=np.int64)
    cost = np.zeros((N_CELLS, N_CELLS), dtype=np.float64)
    diff = g[:, None, :] - cells[None, :, :]
    cost[:n] = np.sum(diff * diff, axis=2)
    return cost


def _solve_jv(cost):
    """Shortest-augmenting-path assignment solver; returns matching and duals.

    Same reduce-and-augment machinery as the classical row/column reduction
    formulation, but each row is inserted with one Dijkstra-style pass.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    inf = np.inf
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = np.empty(n + 1)
            cur[0] = inf
            cur[1:] = cost[i0 - 1, :] - u[i0] - v[1:]
            free = ~used
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        if p[j]:
            row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:].copy(), v[1:].copy()


def _try_augment(r, adj, match_rc, match_cr, fixed_below, visited):
    for c in adj[r]:
        if c in visited:
            continue
        visited.add(c)
        occupant = match_cr[c]
        if occupant == -1:
            match_rc[r] = c
            match_cr[c] = r
            return True
        if occupant <= fixed_below:
            continue
        if _try_augment(occupant, adj, match_rc, match_cr, fixed_below, visited):
            match_rc[r] = c
            match_cr[c] = r
            return True
    return False


def _lex_refine(cost, row_to_col, u, v):
    """Lexicographically smallest optimal assignment (by row, then column).

    Any optimal assignment lies in the tight graph of the optimal duals
    (complementary slackness), and every perfect matching of that graph is
    optimal, so a greedy fix per row with a rematching feasibility check is
    exact.
    """
    n = cost.shape[0]
    tol = 1e-9 * (1.0 + float(np.abs(cost).max()))
    slack = cost - u[:, None] - v[None, :]
    adj = [np.flatnonzero(slack[i] <= tol).tolist() for i in range(n)]
    match_rc = [int(c) for c in row_to_col]
    match_cr = [-1] * n
    for i, c in enumerate(match_rc):
        match_cr[c] = i
    for i in range(n):
        for c in adj[i]:
            if match_rc[i] == c:
                break
            occupant = match_cr[c]
            if occupant != -1 and occupant <= i:
                continue  # column already fixed to an earlier row
            old_c = match_rc[i]
            match_rc[i] = c
            match_cr[c] = i
            match_cr[old_c] = -1
            if occupant == -1:
                break
            match_rc[occupant] = -1
            if _try_augment(occupant, adj, match_rc, match_cr, i, {c}):
                break
            # revert the tentative move
            match_rc[occupant] = c
            match_cr[c] = occupant
            match_rc[i] = old_c
            match_cr[old_c] = i
    return match_rc


def hungarian(cost):
    """Exact minimum-cost perfect matching on a square cost matrix.

    Returns row-sorted (row, col) pairs; among equal-cost optima the
    lexicographically smallest assignment (row-major) is returned.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidInputError("cost matrix must be square")
    if c.shape[0] == 0:
        raise InvalidInputError("cost matrix is empty")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("cost matrix must be finite")
    row_to_col, u, v = _solve_jv(c)
    refined = _lex_refine(c, row_to_col, u, v)
    return [(i, refined[i]) for i in range(c.shape[0])]


def assignment_cost(cost, assignment):
    c = np.asarray(cost, dtype=np.float64)
    return float(sum(c[i, j] for i, j in assignment))


def embed_grid(centroids):
    """Full centroid -> GridLayout pipeline (MDS, normalize, assignment)."""
    if not isinstance(centroids, CentroidSet):
        raise InvalidInputError("embed_grid expects a CentroidSet")
    n = len(centroids)
    if n > N_CELLS:
        raise CapacityError(f"{n} tracts exceed {N_CELLS} grid cells")
    center = (GRID_SIZE + 1) // 2
    if n == 1:
        # both planar axes are trivially degenerate; land on the center
        return GridLayout({centroids.tract_ids[0]: (center, center)})
    planar = classical_mds(centroids)
    provisional = normalize_to_grid(planar)
    cost = build_cost_matrix(provisional)
    pairs = hungarian(cost)
    assignment = {}
    for i, j in pairs:
        if i < n:
            assignment[centroids.tract_ids[i]] = cell_of_index(j)
    return GridLayout(assignment)

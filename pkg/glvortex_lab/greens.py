"""
Green's functions of (-Δ+1) and -Δ with Dirichlet data, by singularity subtraction.

2πG(x,y) = S̃(x,y) + K₀(|x-y|) where S̃(·,y) solves the homogeneous Helmholtz
problem with boundary data -K₀(|x-y|); the regular part is
S(x,y) = S̃(x,y) + (K₀(|x-y|) + log|x-y|). The Laplace regular part
R(·,y) is the harmonic extension of log|x-y|.
"""

import logging
import math
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
import psutil
import scipy.sparse as sp

from .bessel import L_CONSTANT, k0, k0_plus_log, k1
from .elliptic import OperatorKind, ScalarField, interpolation_stencil, operator, solve
from .errors import DomainError
from .geometry import Grid, distance_array

logger = logging.getLogger(__name__)

ROW_BLOCK = 128
PAIR_CHUNK = 256
NODE_CHUNK = 2048
# Fraction of available memory the cached inverse rows may take
ROW_MEMORY_FRACTION = 0.25
CELL_AVERAGE_SUBDIVISIONS = 16


def _pair_distance(points: np.ndarray, sources: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Differences p - y and distances, broadcasting points (..., 2) against sources (..., 2)."""
    diff = points - sources
    return diff, np.hypot(diff[..., 0], diff[..., 1])


class GreenKernel:
    """
    Regular part of a Dirichlet Green's function at arbitrary point pairs.

    The discrete solution with boundary data g(·,y) is A⁻¹ b(y), and b(y)
    only touches nodes next to the boundary. The kernel therefore stores the
    rows of A⁻¹ restricted to those nodes once, after which any value
    S̃(node, y) is a short dot product. The first argument is interpolated
    with the cubic-convolution stencil; the second enters analytically
    through the boundary data, so both gradients are exact derivatives of
    the discrete representation.

    When the full (nodes x cut nodes) block does not fit the memory budget
    the kernel runs lazily: rows are solved on demand for the nodes a call
    touches and kept in a bounded cache, node values come from one direct
    solve per source and the diagonal is streamed over blocks of cut nodes.
    """

    def __init__(
        self,
        grid: Grid,
        kind: Union[OperatorKind, str] = OperatorKind.HELMHOLTZ,
        logger: Optional[logging.Logger] = None,
        dense: Optional[bool] = None,
    ):
        self.grid = grid
        self.kind = OperatorKind(kind)
        self.logger = logger or logging.getLogger(__name__)
        self.op = operator(grid, self.kind)

        cuts = grid.cuts
        self.cut_nodes, slot = np.unique(cuts.node, return_inverse=True)
        self._aggregate = sp.csr_matrix(
            (cuts.weight, (slot, np.arange(len(cuts)))), shape=(self.cut_nodes.size, len(cuts))
        )

        n, nc = grid.node_count, self.cut_nodes.size
        budget = ROW_MEMORY_FRACTION * psutil.virtual_memory().available
        needed = 8.0 * n * nc
        self.dense = needed <= budget if dense is None else bool(dense)
        self._row_limit = max(ROW_BLOCK, int(budget // (8.0 * max(nc, 1))))
        self._row_cache: Dict[int, np.ndarray] = {}
        if self.dense:
            self.rows: Optional[np.ndarray] = self._inverse_rows()
        else:
            self.rows = None
            self.logger.info(
                f"{self.kind.value} kernel on {grid!r} runs lazily: full rows would take "
                f"{needed / 2**20:.0f} MiB, budget {budget / 2**20:.0f} MiB, "
                f"caching at most {self._row_limit} rows"
            )

    def _unit_solutions(self, targets: np.ndarray) -> np.ndarray:
        """A⁻¹ e_t for each target node, (n, len(targets))."""
        unit = np.zeros((self.grid.node_count, targets.size))
        unit[targets, np.arange(targets.size)] = 1.0
        return np.asarray(self.op.solve_system(unit)).reshape(self.grid.node_count, targets.size)

    def _inverse_rows(self) -> np.ndarray:
        n, nc = self.grid.node_count, self.cut_nodes.size
        rows = np.empty((n, nc))
        for start in range(0, nc, ROW_BLOCK):
            block = self.cut_nodes[start:start + ROW_BLOCK]
            rows[:, start:start + block.size] = self._unit_solutions(block)
        self.logger.debug(f"{self.kind.value} kernel on {self.grid!r}: {nc} boundary rows cached")
        return rows

    def _node_rows(self, index: np.ndarray) -> np.ndarray:
        """Rows A⁻¹[i, cut nodes] for an array of node indices, shape index.shape + (nc,)."""
        index = np.asarray(index)
        if self.rows is not None:
            return self.rows[index]

        uniq, inverse = np.unique(index.ravel(), return_inverse=True)
        found = {i: self._row_cache[i] for i in uniq.tolist() if i in self._row_cache}
        missing = np.array([i for i in uniq.tolist() if i not in found], dtype=np.int64)
        for start in range(0, missing.size, ROW_BLOCK):
            block = missing[start:start + ROW_BLOCK]
            # A is symmetric, so row i restricted to the cut nodes is (A⁻¹e_i)[cut nodes]
            solved = self._unit_solutions(block)[self.cut_nodes]
            for k, i in enumerate(block.tolist()):
                found[i] = solved[:, k].copy()

        for i in missing.tolist():
            self._row_cache[i] = found[i]
        while len(self._row_cache) > self._row_limit:
            self._row_cache.pop(next(iter(self._row_cache)))

        stacked = np.stack([found[i] for i in uniq.tolist()])
        return stacked[inverse.ravel()].reshape(index.shape + (self.cut_nodes.size,))

    def boundary_value(self, points: np.ndarray, sources: np.ndarray) -> np.ndarray:
        """Boundary data g(p, y) with broadcasting over leading axes."""
        _, r = _pair_distance(points, sources)
        if self.kind is OperatorKind.HELMHOLTZ:
            return -k0(r)
        return np.log(r)

    def boundary_gradient(self, points: np.ndarray, sources: np.ndarray) -> np.ndarray:
        """∂g(p, y)/∂y, shape (..., 2)."""
        diff, r = _pair_distance(points, sources)
        if self.kind is OperatorKind.HELMHOLTZ:
            factor = k1(r) / r
        else:
            factor = 1.0 / (r * r)
        return -diff * factor[..., None]

    def _boundary_coefficients(self, sources: np.ndarray) -> np.ndarray:
        """Aggregated right-hand sides at the cut nodes, (nc, m)."""
        cut_points = self.grid.cuts.points
        values = self.boundary_value(cut_points[:, None, :], sources[None, :, :])
        return self._aggregate @ values

    def _boundary_coefficient_gradients(self, sources: np.ndarray) -> np.ndarray:
        cut_points = self.grid.cuts.points
        grads = self.boundary_gradient(cut_points[:, None, :], sources[None, :, :])
        return np.stack([self._aggregate @ grads[..., 0], self._aggregate @ grads[..., 1]], axis=-1)

    def node_values(self, sources: np.ndarray) -> np.ndarray:
        """Discrete solutions for each source at every interior node, (n, m)."""
        sources = np.atleast_2d(np.asarray(sources, dtype=float))
        coeff = self._boundary_coefficients(sources)
        if self.rows is not None:
            return self.rows @ coeff
        rhs = np.zeros((self.grid.node_count, coeff.shape[1]))
        rhs[self.cut_nodes] = coeff
        return np.asarray(self.op.solve_system(rhs)).reshape(rhs.shape)

    def _evaluate_chunk(self, xs: np.ndarray, ys: np.ndarray, with_gradient: bool):
        grid = self.grid
        stencil = interpolation_stencil(grid, xs)
        flat = grid.index[stencil.I, stencil.J]
        inner = flat >= 0
        rows = self._node_rows(np.where(inner, flat, 0))
        outer = ~inner
        node_points = np.stack([grid.xs[stencil.I], grid.ys[stencil.J]], axis=-1)[outer]
        outer_sources = np.broadcast_to(ys[:, None, :], stencil.I.shape + (2,))[outer]

        coeff = self._boundary_coefficients(ys)
        vals = np.einsum("msc,cm->ms", rows, coeff)
        # Nodes outside the grid interior carry the boundary data itself
        vals[outer] = self.boundary_value(node_points, outer_sources)
        value = np.sum(stencil.w * vals, axis=1)
        if not with_gradient:
            return value, None, None

        grad_x = np.column_stack([np.sum(stencil.wx * vals, axis=1), np.sum(stencil.wy * vals, axis=1)])
        dcoeff = self._boundary_coefficient_gradients(ys)
        dvals = np.einsum("msc,cmk->msk", rows, dcoeff)
        dvals[outer] = self.boundary_gradient(node_points, outer_sources)
        grad_y = np.sum(stencil.w[..., None] * dvals, axis=1)
        return value, grad_x, grad_y

    def evaluate(self, xs, ys, with_gradient: bool = False):
        """
        Kernel values at pairs (xs[k], ys[k]).

        Args:
            xs: First arguments, (m, 2), strictly inside the domain
            ys: Second arguments (sources), (m, 2), strictly inside the domain
            with_gradient: Also return the gradients in x and in y

        Returns:
            values (m,), or (values, grad_x (m, 2), grad_y (m, 2))
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        m = len(xs)
        values = np.empty(m)
        grad_x = np.empty((m, 2))
        grad_y = np.empty((m, 2))
        for start in range(0, m, PAIR_CHUNK):
            part = slice(start, start + PAIR_CHUNK)
            v, gx, gy = self._evaluate_chunk(xs[part], ys[part], with_gradient)
            values[part] = v
            if with_gradient:
                grad_x[part] = gx
                grad_y[part] = gy
        if with_gradient:
            return values, grad_x, grad_y
        return values

    def diagonal(self, points, with_gradient: bool = False):
        """Kernel on the diagonal x = y; the gradient is the total derivative."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not with_gradient:
            return self.evaluate(points, points)
        value, gx, gy = self.evaluate(points, points, with_gradient=True)
        return value, gx + gy

    def diagonal_at_nodes(self) -> np.ndarray:
        """Kernel diagonal at every interior node (exact node values, no interpolation)."""
        nodes = self.grid.nodes
        if self.rows is not None:
            out = np.empty(self.grid.node_count)
            for start in range(0, nodes.shape[0], NODE_CHUNK):
                block = slice(start, start + NODE_CHUNK)
                coeff = self._boundary_coefficients(nodes[block])
                out[block] = np.einsum("bc,cb->b", self.rows[block], coeff)
            return out

        out = np.zeros(self.grid.node_count)
        cut_points = self.grid.cuts.points
        for start in range(0, self.cut_nodes.size, ROW_BLOCK):
            columns = self._unit_solutions(self.cut_nodes[start:start + ROW_BLOCK])
            aggregate = self._aggregate[start:start + ROW_BLOCK]
            touched = np.unique(aggregate.nonzero()[1])
            aggregate = aggregate[:, touched]
            for first in range(0, nodes.shape[0], NODE_CHUNK):
                block = slice(first, first + NODE_CHUNK)
                values = self.boundary_value(cut_points[touched][:, None, :], nodes[block][None, :, :])
                coeff = np.asarray(aggregate @ values)
                out[block] += np.einsum("bc,cb->b", columns[block], coeff)
        return out


def green_kernel(grid: Grid, kind: Union[OperatorKind, str] = OperatorKind.HELMHOLTZ) -> GreenKernel:
    """Shared kernel of a grid, built on first use."""
    kind = OperatorKind(kind)
    return grid.derived(f"kernel:{kind.value}", lambda: GreenKernel(grid, kind))


def _check_source(grid: Grid, y: np.ndarray) -> bool:
    """True when the source is within one cell of the boundary (reduced accuracy)."""
    d = float(distance_array(grid.spec, y.reshape(1, 2))[0])
    if d <= 0.0:
        raise DomainError(f"Source {y.tolist()} is not strictly inside the domain")
    if d < grid.spacing:
        logger.warning(f"Source {y.tolist()} lies within one grid cell of the boundary; accuracy is reduced")
        return True
    return False


def _helmholtz_boundary(y: np.ndarray):
    def boundary(points: np.ndarray) -> np.ndarray:
        return -k0(np.hypot(points[:, 0] - y[0], points[:, 1] - y[1]))
    return boundary


def _log_boundary(y: np.ndarray):
    def boundary(points: np.ndarray) -> np.ndarray:
        return np.log(np.hypot(points[:, 0] - y[0], points[:, 1] - y[1]))
    return boundary


def stilde_field(grid: Grid, y) -> ScalarField:
    """S̃(·,y): (-Δ+1)S̃ = 0 in the domain, S̃ = -K₀(|x-y|) on the boundary."""
    y = np.asarray(y, dtype=float).reshape(2)
    _check_source(grid, y)
    return solve(operator(grid, OperatorKind.HELMHOLTZ), 0.0, _helmholtz_boundary(y))


def laplace_R_field(grid: Grid, y) -> ScalarField:
    """R(·,y): harmonic in the domain with boundary data log|x-y|."""
    y = np.asarray(y, dtype=float).reshape(2)
    _check_source(grid, y)
    return solve(operator(grid, OperatorKind.LAPLACE), 0.0, _log_boundary(y))


def k0_cell_average(centers: np.ndarray, y: np.ndarray, spacing: float) -> np.ndarray:
    """Mean of K₀(|x-y|) over the grid cells centered at the given points (midpoint rule)."""
    n = CELL_AVERAGE_SUBDIVISIONS
    offsets = spacing * ((np.arange(n) + 0.5) / n - 0.5)
    ox, oy = np.meshgrid(offsets, offsets, indexing="ij")
    px = centers[:, 0, None] + ox.ravel()[None, :] - y[0]
    py = centers[:, 1, None] + oy.ravel()[None, :] - y[1]
    return k0(np.hypot(px, py)).mean(axis=1)


class GreenBundle:
    """Fields of one source y: S̃(·,y), G(·,y), S(·,y) and R(·,y)."""

    def __init__(self, source: np.ndarray, stilde: ScalarField, G: ScalarField, S: ScalarField,
                 R: ScalarField, accuracy_warning: bool = False):
        self.source = source
        self.stilde = stilde
        self.G = G
        self.S = S
        self.R = R
        self.accuracy_warning = accuracy_warning

    @property
    def grid(self) -> Grid:
        return self.G.grid

    def G_at(self, points) -> np.ndarray:
        """Exact singular G(x, y) at points x ≠ y, with S̃ interpolated."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.hypot(pts[:, 0] - self.source[0], pts[:, 1] - self.source[1])
        return (self.stilde.sample(pts) + k0(r)) / (2.0 * math.pi)

    def S_at(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.hypot(pts[:, 0] - self.source[0], pts[:, 1] - self.source[1])
        return self.stilde.sample(pts) + k0_plus_log(r)

    def __repr__(self) -> str:
        return f"GreenBundle(source={self.source.tolist()}, grid={self.grid!r})"


def green_G(grid: Grid, y) -> GreenBundle:
    """
    Build the Green's function bundle for one source.

    Nodes within one cell of the source carry the cell average of K₀ so that
    G is finite at every node and integrates correctly.
    """
    y = np.asarray(y, dtype=float).reshape(2)
    warning = _check_source(grid, y)
    stilde = solve(operator(grid, OperatorKind.HELMHOLTZ), 0.0, _helmholtz_boundary(y))

    nodes = grid.nodes
    r = np.hypot(nodes[:, 0] - y[0], nodes[:, 1] - y[1])
    near = (np.abs(nodes[:, 0] - y[0]) < grid.spacing) & (np.abs(nodes[:, 1] - y[1]) < grid.spacing)
    singular = np.empty(grid.node_count)
    with np.errstate(divide="ignore"):
        singular[~near] = k0(r[~near])
    singular[near] = k0_cell_average(nodes[near], y, grid.spacing)
    G = ScalarField(grid, (stilde.values + singular) / (2.0 * math.pi))

    S = ScalarField(grid, stilde.values + k0_plus_log(r), _log_boundary(y))
    R = solve(operator(grid, OperatorKind.LAPLACE), 0.0, _log_boundary(y))
    return GreenBundle(y, stilde, G, S, R, warning)


def s_values(grid: Grid, points, with_gradient: bool = False):
    """s(x) = S(x,x) = S̃(x,x) + L at arbitrary interior points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = distance_array(grid.spec, pts)
    if np.any(d < grid.spacing):
        logger.warning(f"{int(np.sum(d < grid.spacing))} diagonal points lie within one cell of the boundary")
    kernel = green_kernel(grid, OperatorKind.HELMHOLTZ)
    if with_gradient:
        value, grad = kernel.diagonal(pts, with_gradient=True)
        return value + L_CONSTANT, grad
    return kernel.diagonal(pts) + L_CONSTANT


def s_diag(grid: Grid) -> ScalarField:
    """The diagonal s(x) at every interior node."""
    return grid.derived(
        "s_diag", lambda: ScalarField(grid, green_kernel(grid, OperatorKind.HELMHOLTZ).diagonal_at_nodes() + L_CONSTANT)
    )


def disk_R(radius: float, x, y) -> np.ndarray:
    """Closed-form Laplace regular part on a centered disk: log|ρ² - x ȳ| - log ρ."""
    zx = np.atleast_2d(np.asarray(x, dtype=float)) @ np.array([1.0, 1.0j])
    zy = np.atleast_2d(np.asarray(y, dtype=float)) @ np.array([1.0, 1.0j])
    return np.log(np.abs(radius * radius - zx * np.conj(zy))) - math.log(radius)


def fit_s_constants(grid: Grid, points: Iterable) -> Dict[str, float]:
    """
    Smallest constants in |s(x)| <= C(|log d(x)| + 1) and |∇s(x)| <= C/d(x) over sample points.
    """
    pts = np.atleast_2d(np.asarray(list(points), dtype=float))
    value, grad = s_values(grid, pts, with_gradient=True)
    d = distance_array(grid.spec, pts)
    c_value = np.max(np.abs(value) / (np.abs(np.log(d)) + 1.0))
    c_grad = np.max(np.linalg.norm(grad, axis=1) * d)
    return {"C_value": float(c_value), "C_gradient": float(c_grad), "samples": int(len(pts))}


def fit_stilde_C(grid: Grid, sources: Iterable) -> float:
    """Smallest C with min S̃(·,y) >= log d(y) - C over the given sources (nodes and boundary)."""
    kernel = green_kernel(grid, OperatorKind.HELMHOLTZ)
    srcs = np.atleast_2d(np.asarray(list(sources), dtype=float))
    values = kernel.node_values(srcs)
    boundary = kernel.boundary_value(grid.cuts.points[:, None, :], srcs[None, :, :])
    lowest = np.minimum(values.min(axis=0), boundary.min(axis=0))
    d = distance_array(grid.spec, srcs)
    return float(np.max(np.log(d) - lowest))

"""
Dirichlet problems for (-Δ+1) and -Δ on a cut-cell grid, plus field calculus.

The discrete operator uses the symmetric ghost-value cut-cell stencil: a
neighbor outside the domain is replaced by the linear extrapolation through
the boundary value at the cut point. Off-diagonal entries only couple interior
nodes, so the matrix is symmetric positive definite.
"""

import logging
import math
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np
import pandas as pd
import psutil
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, NumericError
from .geometry import DIRECTIONS, Grid

logger = logging.getLogger(__name__)

BoundaryData = Callable[[np.ndarray], np.ndarray]

RESIDUAL_TOL = 1.0e-10
CG_MAX_ITERS = 20000


class OperatorKind(str, Enum):
    """The two elliptic operators used throughout the lab."""
    HELMHOLTZ = "helmholtz"
    LAPLACE = "laplace"

    @property
    def shift(self) -> float:
        return 1.0 if self is OperatorKind.HELMHOLTZ else 0.0


def constant_boundary(value: float) -> BoundaryData:
    """Boundary data that is constant along the boundary."""
    def boundary(points: np.ndarray) -> np.ndarray:
        return np.full(len(points), float(value))
    return boundary


def _as_boundary(boundary: Union[None, float, BoundaryData]) -> Optional[BoundaryData]:
    if boundary is None or callable(boundary):
        return boundary
    if float(boundary) == 0.0:
        return None
    return constant_boundary(float(boundary))


def assemble_matrix(grid: Grid, shift: float) -> sp.csr_matrix:
    """Matrix of -Δ_h + shift on the interior nodes (ghost-value cut cells)."""
    h2 = grid.spacing ** 2
    n = grid.node_count
    diag = np.full(n, shift)
    rows, cols = [], []
    padded = np.pad(grid.index, 1, constant_values=-1)
    for k, (dx, dy) in enumerate(DIRECTIONS):
        neighbor = padded[1 + grid.ix + dx, 1 + grid.iy + dy]
        inner = neighbor >= 0
        diag[inner] += 1.0 / h2
        theta = grid.cut_distances[k][grid.ix, grid.iy]
        diag[~inner] += 1.0 / (theta[~inner] * h2)
        rows.append(np.nonzero(inner)[0])
        cols.append(neighbor[inner])
    rows_all = np.concatenate(rows)
    cols_all = np.concatenate(cols)
    off = sp.coo_matrix((np.full(rows_all.size, -1.0 / h2), (rows_all, cols_all)), shape=(n, n))
    return (sp.diags(diag) + off).tocsr()


class OperatorHandle:
    """
    Factorized discrete operator for one (grid, kind) pair.

    A sparse LU factorization is built once and reused for every right-hand
    side. When the estimated factor size does not fit in available memory the
    handle falls back to Jacobi-preconditioned conjugate gradients.
    """

    def __init__(
        self,
        grid: Grid,
        kind: Union[OperatorKind, str],
        logger: Optional[logging.Logger] = None,
        method: str = "auto",
    ):
        self.grid = grid
        self.kind = OperatorKind(kind)
        self.logger = logger or logging.getLogger(__name__)
        self.matrix = assemble_matrix(grid, self.kind.shift)
        self._diag_inv = 1.0 / self.matrix.diagonal()
        self.method = self._choose_method(method)
        self._lu = None
        if self.method == "direct":
            self._lu = spla.splu(self.matrix.tocsc(), permc_spec="MMD_AT_PLUS_A")
        self.logger.debug(f"{self.kind.value} operator on {grid!r} ready ({self.method})")

    def _choose_method(self, method: str) -> str:
        if method in ("direct", "cg"):
            return method
        n = self.grid.node_count
        estimate = 8 * 16 * n * max(math.log2(n), 1.0)
        available = psutil.virtual_memory().available
        if estimate > 0.5 * available:
            self.logger.warning(
                f"Factorization estimate {estimate / 2**20:.0f} MiB exceeds half of available memory; "
                f"using conjugate gradients"
            )
            return "cg"
        return "direct"

    def _cg(self, b: np.ndarray) -> np.ndarray:
        preconditioner = sp.diags(self._diag_inv)
        x, info = spla.cg(self.matrix, b, rtol=1.0e-13, atol=0.0, maxiter=CG_MAX_ITERS, M=preconditioner)
        if info != 0:
            residual = float(np.linalg.norm(self.matrix @ x - b) / max(np.linalg.norm(b), 1e-300))
            raise NumericError(f"Conjugate gradients did not converge for {self.kind.value}",
                               residual=residual, iterations=CG_MAX_ITERS)
        return x

    def solve_system(self, b: np.ndarray) -> np.ndarray:
        """Solve A x = b for one vector or for the columns of a matrix."""
        b = np.asarray(b, dtype=float)
        if self._lu is not None:
            x = self._lu.solve(np.asfortranarray(b))
        elif b.ndim == 1:
            x = self._cg(b)
        else:
            x = np.column_stack([self._cg(b[:, k]) for k in range(b.shape[1])])

        scale = np.linalg.norm(b, axis=0)
        residual = np.linalg.norm(self.matrix @ x - b, axis=0)
        relative = float(np.max(np.where(scale > 0, residual / np.where(scale > 0, scale, 1.0), residual)))
        if relative > RESIDUAL_TOL or not np.all(np.isfinite(x)):
            raise NumericError(f"{self.kind.value} solve failed the residual check", residual=relative)
        return x

    def boundary_rhs(self, boundary: Optional[BoundaryData]) -> np.ndarray:
        """Right-hand-side contribution of Dirichlet data at the cut points."""
        out = np.zeros(self.grid.node_count)
        if boundary is None:
            return out
        cuts = self.grid.cuts
        values = np.asarray(boundary(cuts.points), dtype=float)
        np.add.at(out, cuts.node, cuts.weight * values)
        return out


def operator(grid: Grid, kind: Union[OperatorKind, str]) -> OperatorHandle:
    """Shared operator handle of a grid, factorized on first use."""
    kind = OperatorKind(kind)
    return grid.derived(f"operator:{kind.value}", lambda: OperatorHandle(grid, kind))


def helmholtz(grid: Grid) -> OperatorHandle:
    return operator(grid, OperatorKind.HELMHOLTZ)


def laplace(grid: Grid) -> OperatorHandle:
    return operator(grid, OperatorKind.LAPLACE)


def _cubic_weights(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Keys cubic-convolution weights (a = -1/2) for offsets -1, 0, 1, 2 and their t-derivatives."""
    u0 = t + 1.0
    u1 = t
    u2 = 1.0 - t
    u3 = 2.0 - t
    w = np.stack([
        -0.5 * u0 ** 3 + 2.5 * u0 ** 2 - 4.0 * u0 + 2.0,
        1.5 * u1 ** 3 - 2.5 * u1 ** 2 + 1.0,
        1.5 * u2 ** 3 - 2.5 * u2 ** 2 + 1.0,
        -0.5 * u3 ** 3 + 2.5 * u3 ** 2 - 4.0 * u3 + 2.0,
    ], axis=-1)
    dw = np.stack([
        -1.5 * u0 ** 2 + 5.0 * u0 - 4.0,
        4.5 * u1 ** 2 - 5.0 * u1,
        -(4.5 * u2 ** 2 - 5.0 * u2),
        -(-1.5 * u3 ** 2 + 5.0 * u3 - 4.0),
    ], axis=-1)
    return w, dw


class Stencil:
    """Interpolation stencil of several points: node indices and weights (value and gradient)."""

    def __init__(self, I: np.ndarray, J: np.ndarray, w: np.ndarray, wx: np.ndarray, wy: np.ndarray):
        self.I, self.J = I, J
        self.w, self.wx, self.wy = w, wx, wy

    def apply(self, ext: np.ndarray) -> np.ndarray:
        return np.sum(self.w * ext[self.I, self.J], axis=1)

    def apply_gradient(self, ext: np.ndarray) -> np.ndarray:
        vals = ext[self.I, self.J]
        return np.column_stack([np.sum(self.wx * vals, axis=1), np.sum(self.wy * vals, axis=1)])


def interpolation_stencil(grid: Grid, points: np.ndarray, cubic: bool = True) -> Stencil:
    """
    Stencils for points strictly inside the domain.

    Cubic stencils use the 4x4 node block around the containing cell, bilinear
    ones its four corners.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    outside = grid.spec.implicit(pts[:, 0], pts[:, 1]) >= 0.0
    if np.any(outside):
        raise DomainError(f"Point {pts[np.argmax(outside)].tolist()} is not strictly inside the domain")

    h = grid.spacing
    u = (pts[:, 0] - grid.xs[0]) / h
    v = (pts[:, 1] - grid.ys[0]) / h
    i = np.clip(np.floor(u).astype(np.int64), 1, grid.shape[0] - 3)
    j = np.clip(np.floor(v).astype(np.int64), 1, grid.shape[1] - 3)
    tx, ty = u - i, v - j

    if cubic:
        wx, dwx = _cubic_weights(tx)
        wy, dwy = _cubic_weights(ty)
        offsets = np.arange(-1, 3)
    else:
        wx = np.column_stack([1.0 - tx, tx])
        wy = np.column_stack([1.0 - ty, ty])
        dwx = np.column_stack([-np.ones_like(tx), np.ones_like(tx)])
        dwy = np.column_stack([-np.ones_like(ty), np.ones_like(ty)])
        offsets = np.arange(0, 2)

    k = offsets.size
    I = (i[:, None, None] + offsets[None, :, None]) * np.ones((1, 1, k), dtype=np.int64)
    J = (j[:, None, None] + offsets[None, None, :]) * np.ones((1, k, 1), dtype=np.int64)
    m = len(pts)
    w = (wx[:, :, None] * wy[:, None, :]).reshape(m, -1)
    gx = (dwx[:, :, None] * wy[:, None, :]).reshape(m, -1) / h
    gy = (wx[:, :, None] * dwy[:, None, :]).reshape(m, -1) / h
    return Stencil(I.reshape(m, -1), J.reshape(m, -1), w, gx, gy)


class ScalarField:
    """A real function sampled at the interior nodes of one grid, with its boundary data."""

    def __init__(self, grid: Grid, values: np.ndarray, boundary: Optional[BoundaryData] = None):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.node_count,):
            raise ValueError(f"Field needs {grid.node_count} values, got shape {values.shape}")
        self.grid = grid
        self.values = values
        self.boundary = boundary
        self._ext: Optional[np.ndarray] = None
        self._grad: Optional[np.ndarray] = None

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.node_count, float(value)), _as_boundary(value))

    @classmethod
    def from_function(cls, grid: Grid, fn: BoundaryData) -> "ScalarField":
        """Sample a function given on the whole plane; it also supplies the boundary data."""
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float), fn)

    def _check(self, other: "ScalarField") -> None:
        if other.grid.key != self.grid.key:
            raise ValueError("Fields live on different grids")

    def _combine(self, other, op) -> "ScalarField":
        if isinstance(other, ScalarField):
            self._check(other)
            mine, theirs = self.boundary, other.boundary

            def boundary(points: np.ndarray) -> np.ndarray:
                a = mine(points) if mine is not None else np.zeros(len(points))
                b = theirs(points) if theirs is not None else np.zeros(len(points))
                return op(a, b)

            has_boundary = mine is not None or theirs is not None
            return ScalarField(self.grid, op(self.values, other.values), boundary if has_boundary else None)

        scalar = float(other)
        mine = self.boundary

        def shifted(points: np.ndarray) -> np.ndarray:
            a = mine(points) if mine is not None else np.zeros(len(points))
            return op(a, scalar)

        return ScalarField(self.grid, op(self.values, scalar), shifted)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return self._combine(other, np.multiply)
        scalar = float(other)
        mine = self.boundary
        boundary = None if mine is None else (lambda points: scalar * mine(points))
        return ScalarField(self.grid, scalar * self.values, boundary)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def boundary_at(self, points: np.ndarray) -> np.ndarray:
        if self.boundary is None:
            return np.zeros(len(points))
        return np.asarray(self.boundary(points), dtype=float)

    def extended(self) -> np.ndarray:
        """Bounding-box array: interior values, boundary data at every other node."""
        if self._ext is None:
            grid = self.grid
            ext = np.zeros(grid.shape)
            if self.boundary is not None:
                outer = ~grid.interior_mask
                ext[outer] = self.boundary(np.column_stack([grid.X[outer], grid.Y[outer]]))
            ext[grid.ix, grid.iy] = self.values
            self._ext = ext
        return self._ext

    def gradient(self) -> np.ndarray:
        """Node gradients, (n, 2); one-sided three-point formulas next to the boundary."""
        if self._grad is not None:
            return self._grad
        grid = self.grid
        h = grid.spacing
        cuts = grid.cuts
        cut_values = self.boundary_at(cuts.points)
        padded = np.pad(grid.index, 1, constant_values=-1)
        grad = np.zeros((grid.node_count, 2))
        for axis in (0, 1):
            sides = []
            for k in (2 * axis, 2 * axis + 1):
                dx, dy = DIRECTIONS[k]
                neighbor = padded[1 + grid.ix + dx, 1 + grid.iy + dy]
                inner = neighbor >= 0
                dist = np.full(grid.node_count, h)
                vals = np.zeros(grid.node_count)
                vals[inner] = self.values[neighbor[inner]]
                sel = cuts.direction == k
                dist[cuts.node[sel]] = cuts.theta[sel] * h
                vals[cuts.node[sel]] = cut_values[sel]
                sides.append((dist, vals))
            (hr, ur), (hl, ul) = sides
            u0 = self.values
            grad[:, axis] = (-hr / (hl * (hl + hr))) * ul + ((hr - hl) / (hl * hr)) * u0 + (hl / (hr * (hl + hr))) * ur
        self._grad = grad
        return grad

    def integrate(self) -> float:
        return float(np.dot(self.grid.node_areas, self.values))

    def dot(self, other: "ScalarField") -> float:
        """Nodal inner product h^2 Σ u v."""
        self._check(other)
        return float(self.grid.spacing ** 2 * np.dot(self.values, other.values))

    def interpolate(self, point) -> float:
        stencil = interpolation_stencil(self.grid, np.asarray(point, dtype=float).reshape(1, 2), cubic=False)
        return float(stencil.apply(self.extended())[0])

    def interpolate_gradient(self, point) -> np.ndarray:
        grid = self.grid
        stencil = interpolation_stencil(grid, np.asarray(point, dtype=float).reshape(1, 2), cubic=False)
        ext = self.extended()
        gx = np.gradient(ext, grid.spacing, axis=0)
        gy = np.gradient(ext, grid.spacing, axis=1)
        grad = self.gradient()
        gx[grid.ix, grid.iy] = grad[:, 0]
        gy[grid.ix, grid.iy] = grad[:, 1]
        return np.array([stencil.apply(gx)[0], stencil.apply(gy)[0]])

    def sample(self, points: np.ndarray) -> np.ndarray:
        """C¹ cubic-convolution values at many points."""
        return interpolation_stencil(self.grid, points).apply(self.extended())

    def sample_gradient(self, points: np.ndarray) -> np.ndarray:
        """Exact gradient of the cubic-convolution interpolant, (m, 2)."""
        return interpolation_stencil(self.grid, points).apply_gradient(self.extended())

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def to_frame(self) -> pd.DataFrame:
        """Rows (ix, iy, x, y, value) in lexicographic (ix, iy) order."""
        grid = self.grid
        return pd.DataFrame({
            "ix": grid.ix,
            "iy": grid.iy,
            "x": grid.nodes[:, 0],
            "y": grid.nodes[:, 1],
            "value": self.values,
        })

    def __repr__(self) -> str:
        return f"ScalarField({self.grid!r}, min={self.min():.6g}, max={self.max():.6g})"


def solve(op: OperatorHandle, rhs: Union[ScalarField, float, np.ndarray], boundary=None) -> ScalarField:
    """
    Solve (-Δ + c) u = rhs in the domain with u = boundary on its boundary.

    Args:
        op: Operator handle of the target grid
        rhs: Right-hand side as a field, a constant or a node vector
        boundary: Dirichlet data as a function of points, a constant or None for zero

    Returns:
        The discrete solution, carrying the boundary data
    """
    grid = op.grid
    if isinstance(rhs, ScalarField):
        if rhs.grid.key != grid.key:
            raise ValueError("Right-hand side lives on a different grid than the operator")
        f = rhs.values
    elif np.ndim(rhs) == 0:
        f = np.full(grid.node_count, float(rhs))
    else:
        f = np.asarray(rhs, dtype=float)

    data = _as_boundary(boundary)
    values = op.solve_system(f + op.boundary_rhs(data))
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{op.kind.value} solve produced non-finite values")
    return ScalarField(grid, values, data)


def apply_operator(op: OperatorHandle, field: ScalarField) -> ScalarField:
    """Discrete (-Δ + c) applied to a field, using the field's own boundary data."""
    values = op.matrix @ field.values - op.boundary_rhs(field.boundary)
    return ScalarField(op.grid, values)


def laplacian(field: ScalarField) -> ScalarField:
    """Discrete Δ of a field."""
    return -1.0 * apply_operator(laplace(field.grid), field)


def xi0(grid: Grid) -> ScalarField:
    """Solution of (-Δ+1)ξ₀ = -1 with zero boundary data."""
    def build() -> ScalarField:
        field = solve(helmholtz(grid), -1.0, 0.0)
        logger.debug(f"ξ₀ on {grid!r}: min {field.min():.6f}")
        return field

    return grid.derived("xi0", build)


def gradient_field(field: ScalarField) -> np.ndarray:
    return field.gradient()


def integrate(field: ScalarField) -> float:
    return field.integrate()


def interpolate(field: ScalarField, point) -> float:
    return field.interpolate(point)


def interpolate_gradient(field: ScalarField, point) -> np.ndarray:
    return field.interpolate_gradient(point)


def F_energy(field: ScalarField) -> float:
    """½∫|∇ξ|² + (ξ+1)²."""
    grad = field.gradient()
    density = np.sum(grad * grad, axis=1) + (field.values + 1.0) ** 2
    return 0.5 * float(np.dot(field.grid.node_areas, density))


def meissner_energy(field: ScalarField) -> float:
    """½∫|∇ξ|² + ξ², the no-vortex magnetic energy per unit hex²."""
    grad = field.gradient()
    density = np.sum(grad * grad, axis=1) + field.values ** 2
    return 0.5 * float(np.dot(field.grid.node_areas, density))

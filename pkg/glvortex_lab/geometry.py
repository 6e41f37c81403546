"""
Domains and their Cartesian discretization.

Two domain families are supported: the disk and the axis-aligned ellipse,
both centered at the origin. Grids place nodes at integer multiples of the
spacing so that every node of a grid is also a node of the grid with twice
the resolution.
"""

import hashlib
import json
import logging
import math
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

# Axis directions in the order used by every cut array: +x, -x, +y, -y
DIRECTIONS: Tuple[Tuple[int, int], ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))

# Nodes closer than this fraction of a cell to the boundary (along an axis)
# are treated as boundary, not interior.
MIN_CUT_FRACTION = 1.0e-6

NEWTON_MAX_ITERS = 50
NEWTON_TOL = 1.0e-12

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(12)


class DomainKind(str, Enum):
    """Supported domain families."""
    DISK = "disk"
    ELLIPSE = "ellipse"


class DomainSpec:
    """A disk or ellipse centered at the origin with semi-axes (a, b)."""

    def __init__(self, kind: str, semi_axes: Tuple[float, float]):
        try:
            self.kind = DomainKind(kind)
        except ValueError:
            raise ConfigurationError(f"Unknown domain kind: {kind!r} (expected 'disk' or 'ellipse')")

        a, b = (float(v) for v in semi_axes)
        if self.kind is DomainKind.DISK and a != b:
            raise ConfigurationError(f"A disk needs equal semi-axes, got ({a}, {b})")
        if not (a > 0.0 and b > 0.0) or not (math.isfinite(a) and math.isfinite(b)):
            raise ConfigurationError(f"Semi-axes must be positive and finite, got ({a}, {b})")
        self.semi_axes = (a, b)

    @classmethod
    def disk(cls, radius: float = 1.0) -> "DomainSpec":
        return cls("disk", (radius, radius))

    @classmethod
    def ellipse(cls, a: float, b: float) -> "DomainSpec":
        return cls("ellipse", (a, b))

    @property
    def area(self) -> float:
        a, b = self.semi_axes
        return math.pi * a * b

    @property
    def diameter(self) -> float:
        return 2.0 * max(self.semi_axes)

    @property
    def d0(self) -> float:
        """Radius of the boundary layer on which the distance function is smooth."""
        a, b = self.semi_axes
        if self.kind is DomainKind.DISK:
            return 0.5 * a
        return min(a, b) ** 2 / max(a, b)

    def implicit(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Level-set function, negative inside the domain."""
        a, b = self.semi_axes
        return (np.asarray(x) / a) ** 2 + (np.asarray(y) / b) ** 2 - 1.0

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.implicit(pts[:, 0], pts[:, 1]) < 0.0

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for serialization."""
        return {"kind": self.kind.value, "semi_axes": [self.semi_axes[0], self.semi_axes[1]]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DomainSpec":
        """Create from dictionary after deserialization."""
        if "kind" not in data:
            raise ConfigurationError("Domain spec is missing 'kind'")
        kind = data["kind"]
        axes = data.get("semi_axes")
        if axes is None:
            if kind == "disk":
                radius = float(data.get("radius", 1.0))
                axes = [radius, radius]
            else:
                raise ConfigurationError("Ellipse domain needs 'semi_axes'")
        if len(axes) != 2:
            raise ConfigurationError(f"semi_axes must have two entries, got {axes}")
        return cls(kind, (axes[0], axes[1]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DomainSpec):
            return NotImplemented
        return self.kind == other.kind and self.semi_axes == other.semi_axes

    def __hash__(self) -> int:
        return hash((self.kind, self.semi_axes))

    def __repr__(self) -> str:
        return f"DomainSpec(kind={self.kind.value!r}, semi_axes={self.semi_axes})"


def _ellipse_quadrant_projection(a: float, b: float, x0: np.ndarray, y0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closest boundary points for points in the closed first quadrant, a >= b.

    Uses Newton's method on the secular equation
    (a x0/(s+a^2))^2 + (b y0/(s+b^2))^2 = 1, started to the left of the root
    so that the iteration increases monotonically; points that do not converge
    within the iteration cap are finished by bisection.
    """
    qx = np.empty_like(x0)
    qy = np.empty_like(y0)
    tiny = 1.0e-14 * a

    on_axis = y0 <= tiny
    generic = ~on_axis & (x0 > tiny)
    vertical = ~on_axis & ~generic

    # On the minor axis the closest point is the co-vertex
    qx[vertical] = 0.0
    qy[vertical] = b

    # On the major axis: off-axis foot point for points near the center
    if np.any(on_axis):
        xs = x0[on_axis]
        limit = (a * a - b * b) / a if a > b else 0.0
        inner = xs < limit
        px = np.where(inner, a * a * xs / max(a * a - b * b, tiny), a)
        py = np.where(inner, b * np.sqrt(np.clip(1.0 - (px / a) ** 2, 0.0, None)), 0.0)
        qx[on_axis] = px
        qy[on_axis] = py

    if np.any(generic):
        ax = a * x0[generic]
        by = b * y0[generic]
        s = -b * b + by
        s_hi = -b * b + np.hypot(ax, by)
        done = np.zeros(s.shape, dtype=bool)
        for _ in range(NEWTON_MAX_ITERS):
            ra = ax / (s + a * a)
            rb = by / (s + b * b)
            f = ra * ra + rb * rb - 1.0
            df = -2.0 * (ra * ra / (s + a * a) + rb * rb / (s + b * b))
            step = np.where(done, 0.0, -f / df)
            s = np.minimum(s + step, s_hi)
            done |= np.abs(step) <= NEWTON_TOL * (1.0 + np.abs(s))
            if np.all(done):
                break

        if not np.all(done):
            lo = -b * b + by
            hi = s_hi.copy()
            pending = ~done
            logger.debug(f"Ellipse projection: bisection fallback for {int(pending.sum())} points")
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                ra = ax / (mid + a * a)
                rb = by / (mid + b * b)
                positive = ra * ra + rb * rb - 1.0 > 0.0
                lo = np.where(pending & positive, mid, lo)
                hi = np.where(pending & ~positive, mid, hi)
            s = np.where(pending, 0.5 * (lo + hi), s)

        qx[generic] = a * a * x0[generic] / (s + a * a)
        qy[generic] = b * b * y0[generic] / (s + b * b)

    return qx, qy


def project_to_boundary(spec: DomainSpec, points: np.ndarray) -> np.ndarray:
    """Closest points of the boundary curve, one row per input point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a, b = spec.semi_axes

    if spec.kind is DomainKind.DISK:
        r = np.hypot(pts[:, 0], pts[:, 1])
        safe = np.where(r > 0.0, r, 1.0)
        q = a * pts / safe[:, None]
        q[r == 0.0] = (a, 0.0)
        return q

    swap = a < b
    if swap:
        a, b = b, a
        px, py = pts[:, 1], pts[:, 0]
    else:
        px, py = pts[:, 0], pts[:, 1]

    qx, qy = _ellipse_quadrant_projection(a, b, np.abs(px), np.abs(py))
    qx = np.copysign(qx, px)
    qy = np.copysign(qy, py)
    if swap:
        qx, qy = qy, qx
    return np.column_stack([qx, qy])


def distance_array(spec: DomainSpec, points: np.ndarray) -> np.ndarray:
    """Signed distance to the boundary for many points; positive inside."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if spec.kind is DomainKind.DISK:
        return spec.semi_axes[0] - np.hypot(pts[:, 0], pts[:, 1])
    q = project_to_boundary(spec, pts)
    dist = np.hypot(pts[:, 0] - q[:, 0], pts[:, 1] - q[:, 1])
    inside = spec.implicit(pts[:, 0], pts[:, 1]) < 0.0
    return np.where(inside, dist, -dist)


def distance_gradient(spec: DomainSpec, points: np.ndarray) -> np.ndarray:
    """Gradient of the signed distance (the inward unit normal of the foot point)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a, b = spec.semi_axes
    q = project_to_boundary(spec, pts)
    # Inward normal at the foot point; valid on and off the medial axis
    normal = -np.column_stack([q[:, 0] / (a * a), q[:, 1] / (b * b)])
    normal /= np.linalg.norm(normal, axis=1)[:, None]
    return normal


def signed_distance(spec: DomainSpec, point) -> float:
    """dist(point, boundary), positive inside the domain and negative outside."""
    return float(distance_array(spec, np.asarray(point, dtype=float).reshape(1, 2))[0])


def _cell_area_in_ellipse(a: float, b: float, x0: float, x1: float, y0: float, y1: float) -> float:
    """Exact (to quadrature precision) area of [x0,x1]x[y0,y1] inside the ellipse."""
    lo, hi = max(x0, -a), min(x1, a)
    if hi <= lo:
        return 0.0

    breaks = {lo, hi}
    for c in (y0, y1):
        if abs(c) < b:
            xc = a * math.sqrt(1.0 - (c / b) ** 2)
            for candidate in (-xc, xc):
                if lo < candidate < hi:
                    breaks.add(candidate)
    edges = sorted(breaks)

    total = 0.0
    for left, right in zip(edges[:-1], edges[1:]):
        half = 0.5 * (right - left)
        xq = 0.5 * (right + left) + half * _GAUSS_NODES
        half_height = b * np.sqrt(np.clip(1.0 - (xq / a) ** 2, 0.0, None))
        chord = np.minimum(y1, half_height) - np.maximum(y0, -half_height)
        total += half * float(np.dot(_GAUSS_WEIGHTS, np.clip(chord, 0.0, None)))
    return total


class GridCuts:
    """Flattened list of boundary cuts: one entry per (interior node, direction) pair."""

    def __init__(self, node: np.ndarray, direction: np.ndarray, theta: np.ndarray, points: np.ndarray, spacing: float):
        self.node = node
        self.direction = direction
        self.theta = theta
        self.points = points
        # Diagonal/right-hand-side coupling of the ghost-value stencil
        self.weight = 1.0 / (theta * spacing * spacing)

    def __len__(self) -> int:
        return int(self.node.size)

    @property
    def unique_nodes(self) -> np.ndarray:
        return np.unique(self.node)


class Grid:
    """
    Uniform Cartesian grid over the bounding box of a domain.

    Arrays indexed [ix, iy] cover the whole box; interior quantities are
    flat vectors in lexicographic (ix, iy) order.
    """

    def __init__(self, spec: DomainSpec, resolution: int):
        if resolution < 16:
            raise ConfigurationError(f"Grid resolution must be at least 16 nodes per unit length, got {resolution}")

        self.spec = spec
        self.resolution = int(resolution)
        # Derived state only: every entry is a pure function of (spec, resolution),
        # so it never takes part in equality or hashing. Fill it through derived().
        self.cache: Dict[str, Any] = {}
        self.spacing = 1.0 / self.resolution
        h = self.spacing
        a, b = spec.semi_axes

        kx = int(math.ceil(a / h)) + 2
        ky = int(math.ceil(b / h)) + 2
        self.xs = h * np.arange(-kx, kx + 1, dtype=float)
        self.ys = h * np.arange(-ky, ky + 1, dtype=float)
        self.shape = (self.xs.size, self.ys.size)
        self.bbox = (float(self.xs[0]), float(self.xs[-1]), float(self.ys[0]), float(self.ys[-1]))

        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        self.X, self.Y = X, Y

        inside = spec.implicit(X, Y) < 0.0
        half_width = a * np.sqrt(np.clip(1.0 - (Y / b) ** 2, 0.0, None))
        half_height = b * np.sqrt(np.clip(1.0 - (X / a) ** 2, 0.0, None))
        axis_theta = np.stack([
            (half_width - X) / h,
            (half_width + X) / h,
            (half_height - Y) / h,
            (half_height + Y) / h,
        ])
        self.interior_mask = inside & (axis_theta.min(axis=0) >= MIN_CUT_FRACTION)

        self.node_count = int(self.interior_mask.sum())
        if self.node_count == 0:
            raise ConfigurationError(f"Resolution {resolution} is too coarse: the grid has no interior node")

        self.index = np.full(self.shape, -1, dtype=np.int64)
        self.ix, self.iy = np.nonzero(self.interior_mask)
        self.index[self.ix, self.iy] = np.arange(self.node_count)
        self.nodes = np.column_stack([self.xs[self.ix], self.ys[self.iy]])

        self.cut_distances = np.zeros((4,) + self.shape)
        cut_node: List[np.ndarray] = []
        cut_dir: List[np.ndarray] = []
        cut_theta: List[np.ndarray] = []
        padded = np.pad(self.interior_mask, 1, constant_values=False)
        for k, (dx, dy) in enumerate(DIRECTIONS):
            neighbor = padded[1 + dx:1 + dx + self.shape[0], 1 + dy:1 + dy + self.shape[1]]
            has_cut = self.interior_mask & ~neighbor
            theta = np.clip(axis_theta[k], MIN_CUT_FRACTION, 1.0)
            self.cut_distances[k][has_cut] = theta[has_cut]
            flat = self.index[has_cut]
            cut_node.append(flat)
            cut_dir.append(np.full(flat.size, k, dtype=np.int64))
            cut_theta.append(theta[has_cut])

        node = np.concatenate(cut_node)
        direction = np.concatenate(cut_dir)
        theta = np.concatenate(cut_theta)
        order = np.lexsort((direction, node))
        node, direction, theta = node[order], direction[order], theta[order]
        offsets = np.array(DIRECTIONS, dtype=float)[direction]
        points = self.nodes[node] + h * theta[:, None] * offsets
        self.cuts = GridCuts(node, direction, theta, points, h)

        self.node_distance = distance_array(spec, self.nodes)
        self.node_areas = self._node_areas()
        self.key = hashlib.md5(
            json.dumps({"domain": spec.to_dict(), "resolution": self.resolution}, sort_keys=True).encode()
        ).hexdigest()

        logger.debug(
            f"Built grid {self.shape[0]}x{self.shape[1]} for {spec!r}: "
            f"{self.node_count} interior nodes, {len(self.cuts)} boundary cuts"
        )

    def _node_areas(self) -> np.ndarray:
        """Areas of (control cell ∩ domain), with boundary slivers given to interior neighbors."""
        h = self.spacing
        a, b = self.spec.semi_axes
        cell_area = np.zeros(self.shape)

        all_points = np.column_stack([self.X.ravel(), self.Y.ravel()])
        dist = distance_array(self.spec, all_points).reshape(self.shape)
        cell_area[dist >= h] = h * h
        band_ix, band_iy = np.nonzero(np.abs(dist) < h)
        for i, j in zip(band_ix, band_iy):
            x, y = self.xs[i], self.ys[j]
            cell_area[i, j] = _cell_area_in_ellipse(a, b, x - 0.5 * h, x + 0.5 * h, y - 0.5 * h, y + 0.5 * h)

        areas = cell_area[self.interior_mask].copy()
        orphan_ix, orphan_iy = np.nonzero(~self.interior_mask & (cell_area > 0.0))
        lost = 0.0
        for i, j in zip(orphan_ix, orphan_iy):
            target = self._nearest_interior(i, j)
            if target < 0:
                lost += cell_area[i, j]
                continue
            areas[target] += cell_area[i, j]
        if lost > 0.0:
            logger.debug(f"Dropped {lost:.3e} of boundary sliver area with no interior neighbor")
        return areas

    def _nearest_interior(self, i: int, j: int) -> int:
        best, best_dist = -1, math.inf
        for radius in (1, 2):
            for di in range(-radius, radius + 1):
                for dj in range(-radius, radius + 1):
                    p, q = i + di, j + dj
                    if 0 <= p < self.shape[0] and 0 <= q < self.shape[1] and self.index[p, q] >= 0:
                        dist = di * di + dj * dj
                        if dist < best_dist:
                            best, best_dist = int(self.index[p, q]), dist
            if best >= 0:
                return best
        return best

    @property
    def area(self) -> float:
        return float(self.node_areas.sum())

    def full_array(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Scatter interior values into a bounding-box array."""
        out = np.full(self.shape, fill, dtype=np.result_type(values, float))
        out[self.ix, self.iy] = values
        return out

    def locate(self, point) -> Tuple[int, int, float, float]:
        """Cell containing a point: lower-left node indices and fractional offsets."""
        h = self.spacing
        u = (float(point[0]) - self.xs[0]) / h
        v = (float(point[1]) - self.ys[0]) / h
        i = min(max(int(math.floor(u)), 0), self.shape[0] - 2)
        j = min(max(int(math.floor(v)), 0), self.shape[1] - 2)
        return i, j, u - i, v - j

    def cells_from_boundary(self, point) -> float:
        """Distance of a point to the boundary measured in grid cells."""
        return signed_distance(self.spec, point) / self.spacing

    def derived(self, key: str, build: Callable[[], Any]) -> Any:
        """Return the derived object stored under key, building it on first use."""
        if key not in self.cache:
            self.cache[key] = build()
        return self.cache[key]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return f"Grid({self.spec!r}, resolution={self.resolution}, nodes={self.node_count})"


def build_grid(spec: DomainSpec, resolution: int) -> Grid:
    """Build the finite-difference grid of a domain at the given nodes per unit length."""
    return Grid(spec, resolution)

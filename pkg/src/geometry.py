"""
Circle-arrangement primitives for the area of possible leaf positions.

All leaves at a given radius r are circles of the same size, so the area of
positions where a leaf covers exactly a subset v of the pixel set is bounded
by arcs of the circles of radius r around the pixels. The functions here
supply the points, angles and predicates that the prior integrates.

Subsets of a pixel set are handled as integer bitmasks over the pixel order.
"""

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from src.config import GEOM_EPS
from src.errors import InvalidInputError


class Point2(NamedTuple):
    x: float
    y: float


def _as_point(p) -> Point2:
    if isinstance(p, Point2):
        return p
    x, y = p
    return Point2(float(x), float(y))


def mask_of(indices: Iterable[int]) -> int:
    """Bitmask with the given pixel indices set."""
    mask = 0
    for i in indices:
        mask |= 1 << i
    return mask


def indices_of(mask: int) -> list[int]:
    """Pixel indices set in a bitmask, ascending."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


# The eight symmetries of the square, acting on (x, y).
_DIHEDRAL = [
    lambda x, y: (x, y),
    lambda x, y: (-y, x),
    lambda x, y: (-x, -y),
    lambda x, y: (y, -x),
    lambda x, y: (-x, y),
    lambda x, y: (x, -y),
    lambda x, y: (y, x),
    lambda x, y: (-y, -x),
]


@dataclass(frozen=True)
class PixelSet:
    """
    Ordered set of distinct sample points.

    The order fixes the bit of each pixel in subset masks. Constructors that
    build grids use row-major order by (y, x).
    """

    points: tuple[Point2, ...]
    coords: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple(_as_point(p) for p in self.points)
        coords = np.array(pts, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(coords)):
            raise InvalidInputError("Pixel coordinates must be finite")
        if len(set(pts)) != len(pts):
            raise InvalidInputError("Pixel set contains duplicate points")
        coords.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_points(cls, points: Iterable, sort: bool = True) -> "PixelSet":
        """Build a pixel set, ordered row-major by (y, x) unless sort is False."""
        pts = [_as_point(p) for p in points]
        if sort:
            pts.sort(key=lambda p: (p.y, p.x))
        return cls(tuple(pts))

    @classmethod
    def grid(cls, width: int, height: int, x0: int = 0, y0: int = 0) -> "PixelSet":
        """Integer lattice window with its bottom-left pixel at (x0, y0)."""
        if width < 1 or height < 1:
            raise InvalidInputError(f"Grid must be at least 1x1, got {width}x{height}")
        return cls(tuple(
            Point2(float(x0 + x), float(y0 + y))
            for y in range(height)
            for x in range(width)
        ))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[Point2]:
        return iter(self.points)

    def __getitem__(self, i: int) -> Point2:
        return self.points[i]

    @property
    def full_mask(self) -> int:
        return (1 << len(self.points)) - 1

    def index_of(self, point) -> int:
        p = _as_point(point)
        try:
            return self.points.index(p)
        except ValueError:
            raise InvalidInputError(f"Point {tuple(p)} is not in the pixel set") from None

    def mask_of(self, points: Iterable) -> int:
        """Bitmask of the given points, which must all belong to the set."""
        return mask_of(self.index_of(p) for p in points)

    def subset(self, mask: int) -> "PixelSet":
        """Pixels selected by mask, keeping their relative order."""
        return PixelSet(tuple(self.points[i] for i in indices_of(mask)))

    def transformed(self, k: int) -> "PixelSet":
        """Apply the k-th square symmetry (0..7) to every point, keeping order."""
        fn = _DIHEDRAL[k]
        return PixelSet(tuple(Point2(*map(float, fn(p.x, p.y))) for p in self.points))


@dataclass(frozen=True)
class IntersectionPoint:
    """
    One of the points where the circles of radius r around x_i and x_j meet.

    The point is x_i + r * n(alpha + sign * beta) with n(t) = (cos t, sin t).
    """

    point: Point2
    sign: int
    alpha: float
    beta: float
    i: int = 0
    j: int = 1

    @property
    def t(self) -> float:
        """Angle of the point as seen from x_i."""
        return self.alpha + self.sign * self.beta


@dataclass(frozen=True)
class CriticalRadiusSchedule:
    """Sorted radii splitting [r_min, r_max] into intervals of fixed topology."""

    radii: tuple[float, ...]
    tags: tuple[frozenset, ...]

    def __len__(self) -> int:
        return len(self.radii)

    def intervals(self) -> Iterator[tuple[float, float, float]]:
        """Yield (r_lo, r_hi, r_mid) for consecutive radii."""
        for lo, hi in zip(self.radii[:-1], self.radii[1:]):
            yield lo, hi, 0.5 * (lo + hi)


def _distance(p: Point2, q: Point2) -> float:
    return math.hypot(q.x - p.x, q.y - p.y)


def pair_critical_radius(xi, xj) -> float:
    """Radius at which the circles around two pixels start to intersect."""
    xi, xj = _as_point(xi), _as_point(xj)
    d = _distance(xi, xj)
    if d == 0.0:
        raise InvalidInputError(f"Critical radius needs distinct points, got {tuple(xi)} twice")
    return 0.5 * d


def triple_circumradius(xi, xj, xk) -> float | None:
    """
    Circumradius of three pixels, or None when they are collinear.

    Uses the product of the sides over four times the Heron area, with the
    semiperimeter factors rearranged for stability.
    """
    xi, xj, xk = _as_point(xi), _as_point(xj), _as_point(xk)
    sides = sorted((_distance(xj, xk), _distance(xi, xk), _distance(xi, xj)), reverse=True)
    a, b, c = sides
    if c == 0.0:
        raise InvalidInputError("Circumradius needs three distinct points")

    cross = (xj.x - xi.x) * (xk.y - xi.y) - (xj.y - xi.y) * (xk.x - xi.x)
    if abs(cross) <= GEOM_EPS * a * a:
        return None

    heron = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    if heron <= 0.0:
        return None
    return a * b * c / math.sqrt(heron)


def alpha_angle(xi, xj) -> float:
    """
    Angle of the vector x_j - x_i in [-pi, pi).

    Equals s_ij * acos(dx / d) with s_ij the sign of dy, falling back to the
    sign of dx when dy is zero. Hence a vector pointing left gives -pi.
    """
    xi, xj = _as_point(xi), _as_point(xj)
    dx, dy = xj.x - xi.x, xj.y - xi.y
    if dx == 0.0 and dy == 0.0:
        raise InvalidInputError(f"Angle is undefined for coincident points {tuple(xi)}")
    if dy == 0.0 and dx < 0.0:
        return -math.pi
    return math.atan2(dy, dx)


def intersection_points(xi, xj, r: float, i: int = 0, j: int = 1) -> tuple[IntersectionPoint, ...]:
    """
    Intersections of the circles of radius r around x_i and x_j.

    Returns nothing when the circles are apart, the single kissing point
    when they touch, and otherwise the (+, -) pair. The + point seen from
    x_i is the - point seen from x_j.
    """
    if r <= 0.0:
        raise InvalidInputError(f"Radius must be positive, got {r}")
    xi, xj = _as_point(xi), _as_point(xj)
    d = _distance(xi, xj)
    if d == 0.0:
        raise InvalidInputError(f"Coincident circles at {tuple(xi)}")

    alpha = alpha_angle(xi, xj)
    if abs(d - 2.0 * r) <= GEOM_EPS * max(1.0, r):
        mid = Point2(0.5 * (xi.x + xj.x), 0.5 * (xi.y + xj.y))
        return (IntersectionPoint(mid, +1, alpha, 0.0, i, j),)
    if d > 2.0 * r:
        return ()

    beta = math.acos(d / (2.0 * r))
    out = []
    for sign in (+1, -1):
        t = alpha + sign * beta
        q = Point2(xi.x + r * math.cos(t), xi.y + r * math.sin(t))
        out.append(IntersectionPoint(q, sign, alpha, beta, i, j))
    return tuple(out)


def membership_in_region(p, r: float, v: int, a: PixelSet, eps: float = GEOM_EPS) -> bool:
    """
    Whether a leaf of radius r centred at p covers exactly the pixels in v.

    Pixels of v may lie on the circle; pixels outside v must lie strictly
    outside it.
    """
    p = _as_point(p)
    for k, x in enumerate(a.points):
        dist = _distance(p, x)
        if v >> k & 1:
            if dist > r + eps:
                return False
        elif dist <= r + eps:
            return False
    return True


def delta_singular(ip: IntersectionPoint, r: float, v: int, a: PixelSet, eps: float = GEOM_EPS) -> int:
    """
    1 when the intersection point lies in the closure of the region for v.

    With v = 0 this is the empty-leaf variant: the point must be outside or
    on every circle.
    """
    for k, x in enumerate(a.points):
        dist = _distance(ip.point, x)
        if v >> k & 1:
            if dist > r + eps:
                return 0
        elif dist < r - eps:
            return 0
    return 1


def orientation_sign(i_in_v: bool, j_in_v: bool, sign: int) -> int:
    """Sign of an endpoint term: flipped when exactly one of the two pixels is in v."""
    base = 1 if sign > 0 else -1
    return -base if bool(i_in_v) != bool(j_in_v) else base


def first_critical_radius(a: PixelSet, i: int) -> float:
    """Half the distance from pixel i to its nearest neighbour, inf when alone."""
    if len(a) == 1:
        return math.inf
    diff = a.coords - a.coords[i]
    dist = np.hypot(diff[:, 0], diff[:, 1])
    dist[i] = np.inf
    return 0.5 * float(dist.min())


def critical_radius_schedule(a: PixelSet, law) -> CriticalRadiusSchedule:
    """
    All pair and triple critical radii inside [r_min, r_max].

    Radii within GEOM_EPS of each other are merged and keep the union of
    their provenance tags. The bounds are always the first and last entry.
    """
    entries: list[tuple[float, tuple]] = []
    pts = a.points
    for i, j in combinations(range(len(pts)), 2):
        entries.append((pair_critical_radius(pts[i], pts[j]), ("pair", i, j)))
    for i, j, k in combinations(range(len(pts)), 3):
        rc = triple_circumradius(pts[i], pts[j], pts[k])
        if rc is not None:
            entries.append((rc, ("triple", i, j, k)))

    inside = [(r, tag) for r, tag in entries if law.r_min < r < law.r_max]
    inside.sort(key=lambda e: e[0])

    radii = [law.r_min]
    tags = [{("bound", "r_min")}]
    for r, tag in inside:
        if r - radii[-1] <= GEOM_EPS:
            tags[-1].add(tag)
        else:
            radii.append(r)
            tags.append({tag})

    # Radii within tolerance of the bounds belong to the bounds.
    for r, tag in entries:
        if abs(r - law.r_min) <= GEOM_EPS:
            tags[0].add(tag)
    if law.r_max - radii[-1] <= GEOM_EPS and len(radii) > 1:
        tags[-1].add(("bound", "r_max"))
        radii[-1] = law.r_max
    else:
        radii.append(law.r_max)
        tags.append({("bound", "r_max")})
    for r, tag in entries:
        if abs(r - law.r_max) <= GEOM_EPS:
            tags[-1].add(tag)

    return CriticalRadiusSchedule(tuple(radii), tuple(frozenset(t) for t in tags))


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    """Dense Euclidean distance matrix of an (n, 2) array."""
    diff = coords[:, None, :] - coords[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def points_from_pairs(pairs: Sequence[Sequence[float]]) -> list[Point2]:
    """Convert [[x, y], ...] into points."""
    return [_as_point(p) for p in pairs]

"""
Analytic prior over dead leaves partitions.

A leaf table holds, for every non-empty subset v of a pixel set, the mass of
leaves whose footprint on the set is exactly v. Masses are unscaled: they
integrate 2 r^-3 times the area of possible positions and drop the constants
1/|B| and 1/(r_min^-2 - r_max^-2), which cancel in every ratio.

The area is a sum of signed terms over the arc endpoints of its boundary, so
the radius integral becomes a sum of antiderivative differences over the
intervals between critical radii. Angles are only known up to 2 pi, so each
(subset, interval) contribution is reduced modulo 2 pi log(r_hi / r_lo).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy.special import logsumexp
from tqdm import tqdm

from src.config import GEOM_EPS, MAX_TABLE_PIXELS, MOD_TOL, NEGATIVE_MASS_TOL
from src.errors import ConsistencyError, InvalidInputError
from src.geometry import (
    PixelSet,
    critical_radius_schedule,
    delta_singular,
    intersection_points,
    orientation_sign,
    pairwise_distances,
)
from src.partitions import Partition, canonicalize, validate_cover
from src.specfun import RadiusLaw, _b


@dataclass(frozen=True)
class LeafProbTable:
    """Leaf masses indexed by subset bitmask; entry 0 (the empty leaf) is unused."""

    pixels: PixelSet
    masses: np.ndarray
    nonempty_mass: float
    scaled: bool = False

    def mass(self, v: int) -> float:
        return float(self.masses[v])

    def ratio(self, v: int) -> float:
        """P(L_a = v | L_a != empty)."""
        return float(self.masses[v]) / self.nonempty_mass

    def to_json(self) -> dict:
        return {f"{v:x}": float(self.masses[v]) for v in range(1, len(self.masses))}


@dataclass(frozen=True)
class PriorResult:
    value: float
    log_value: float
    mode: str


def reduce_modulo(values: np.ndarray, period: float) -> np.ndarray:
    """
    Reduce into [0, period), sending remainders within MOD_TOL of the
    period, or of zero from below, to zero.
    """
    rem = np.mod(values, period)
    rem = np.where(rem > period - MOD_TOL, rem - period, rem)
    return np.maximum(rem, 0.0)


def _singleton_terms(dist: np.ndarray, law: RadiusLaw) -> np.ndarray:
    """2 pi log(min(r_i*, r_max) / r_min) for each pixel whose disk is isolated at r_min."""
    n = dist.shape[0]
    if n == 1:
        first = np.array([math.inf])
    else:
        masked = dist + np.diag(np.full(n, np.inf))
        first = 0.5 * masked.min(axis=1)
    upper = np.minimum(first, law.r_max)
    return np.where(upper > law.r_min, 2.0 * math.pi * np.log(upper / law.r_min), 0.0)


def _table_masses(a: PixelSet, law: RadiusLaw) -> np.ndarray:
    n = len(a)
    coords = a.coords - a.coords.mean(axis=0)
    masses = np.zeros(1 << n)
    dist = pairwise_distances(coords)
    bits = np.int64(1) << np.arange(n, dtype=np.int64)

    if n >= 2:
        ii, jj = np.nonzero(~np.eye(n, dtype=bool))
        d = dist[ii, jj]
        dx = coords[jj, 0] - coords[ii, 0]
        dy = coords[jj, 1] - coords[ii, 1]
        alpha = np.where((dy == 0.0) & (dx < 0.0), -math.pi, np.arctan2(dy, dx))

        for r_lo, r_hi, r_mid in critical_radius_schedule(a, law).intervals():
            active = d < 2.0 * r_mid
            if not active.any():
                continue
            ia, ja, da, aa = ii[active], jj[active], d[active], alpha[active]
            xi = coords[ia]
            lo = np.maximum(r_lo, 0.5 * da)
            rows = np.arange(len(ia))
            contrib = np.zeros_like(masses)

            for sign in (1, -1):
                t = aa + sign * np.arccos(np.minimum(da / (2.0 * r_mid), 1.0))
                q = xi + r_mid * np.stack([np.cos(t), np.sin(t)], axis=1)
                diff = q[:, None, :] - coords[None, :, :]
                inside = np.hypot(diff[..., 0], diff[..., 1]) < r_mid - GEOM_EPS
                inside[rows, ia] = False
                inside[rows, ja] = False
                S = inside.astype(np.int64) @ bits

                delta_b = sign * (_b(r_hi, xi, aa, da, sign) - _b(lo, xi, aa, da, sign))
                bi, bj = bits[ia], bits[ja]
                # The four regions meeting at the point share it as a corner.
                np.add.at(contrib, S, delta_b)
                np.add.at(contrib, S | bi, -delta_b)
                np.add.at(contrib, S | bj, -delta_b)
                np.add.at(contrib, S | bi | bj, delta_b)

            contrib[0] = 0.0
            masses += reduce_modulo(contrib, 2.0 * math.pi * math.log(r_hi / r_lo))

    masses[bits] += _singleton_terms(dist, law)
    masses[0] = 0.0
    return masses


def leaf_prob_table(a: PixelSet, law: RadiusLaw) -> LeafProbTable:
    """
    Unscaled leaf masses for every non-empty subset of a.

    Raises:
        InvalidInputError: empty or oversized pixel set
        ConsistencyError: a mass came out negative beyond rounding
    """
    n = len(a)
    if n == 0:
        raise InvalidInputError("Leaf table needs at least one pixel")
    if n > MAX_TABLE_PIXELS:
        raise InvalidInputError(f"Leaf table for {n} pixels would need 2**{n} entries")

    masses = _table_masses(a, law)
    lowest = masses.min()
    if lowest < -NEGATIVE_MASS_TOL or not np.all(np.isfinite(masses)):
        raise ConsistencyError(f"Leaf table has invalid mass {lowest!r}")
    masses = np.maximum(masses, 0.0)
    masses.setflags(write=False)
    return LeafProbTable(a, masses, float(masses[1:].sum()))


def nonempty_mass_for(a: PixelSet, table: LeafProbTable) -> float:
    """Mass of all non-empty leaves, the sum over non-empty subsets."""
    if table.pixels != a:
        raise InvalidInputError("Leaf table was built for a different pixel set")
    return float(table.masses[1:].sum())


def leaf_ratio(a: PixelSet, v: int, law: RadiusLaw) -> float:
    """P(L_a = v | L_a != empty) for a single subset."""
    return leaf_prob_table(a, law).ratio(v)


def region_area(a: PixelSet, v: int, r: float) -> float:
    """
    Area of centres where a leaf of radius r covers exactly v.

    r must not be a critical radius of a.
    """
    if v <= 0:
        raise InvalidInputError("Region needs a non-empty subset")
    pts = a.points
    n = len(pts)
    dist = pairwise_distances(a.coords)

    area = 0.0
    for i in range(n):
        for j in range(n):
            if i == j or dist[i, j] >= 2.0 * r:
                continue
            ips = intersection_points(pts[i], pts[j], r, i, j)
            if len(ips) < 2:
                continue
            for ip in ips:
                if not delta_singular(ip, r, v, a):
                    continue
                c = orientation_sign(v >> i & 1, v >> j & 1, ip.sign)
                t = ip.t
                x, y = pts[i]
                area += c * (0.5 * r * r * t + 0.5 * r * (x * math.sin(t) - y * math.cos(t)))

    full = math.pi * r * r
    area = float(reduce_modulo(np.array(area), full))
    for k in range(n):
        if v == 1 << k:
            others = np.delete(dist[k], k)
            if others.size == 0 or r < 0.5 * others.min():
                area += full
    return area


TableBuilder = Callable[[PixelSet, RadiusLaw], LeafProbTable]


def _compress(mask: int, residual: int) -> int:
    """Re-index the bits of mask to positions within residual."""
    out = 0
    pos = 0
    while residual:
        low = residual & -residual
        if mask & low:
            out |= 1 << pos
        pos += 1
        residual ^= low
    return out


class PriorModel:
    """
    Partition priors over one pixel set with shared caches.

    Tables are cached per residual pixel set and unordered priors are
    memoized per residual partition, so a sweep over all partitions builds
    each table once.
    """

    def __init__(
        self,
        pixels: PixelSet,
        law: RadiusLaw,
        table_builder: TableBuilder | None = None,
        memoize: bool = True,
    ):
        """
        Args:
            pixels: The pixel set every partition refers to.
            law: Radius law of the leaves.
            table_builder: Builds a leaf table for a pixel subset.
                           Defaults to the analytic leaf_prob_table.
            memoize: Cache unordered priors of residual partitions.
        """
        self.pixels = pixels
        self.law = law
        self.table_builder = table_builder or leaf_prob_table
        self.memoize = memoize
        self._tables: dict[int, LeafProbTable] = {}
        self._memo: dict[tuple[int, ...], float] = {}

    def table_for(self, residual: int) -> LeafProbTable:
        """Leaf table of the residual pixels, indexed in their local order."""
        table = self._tables.get(residual)
        if table is None:
            table = self.table_builder(self.pixels.subset(residual), self.law)
            # Concurrent builders may race; either result is identical.
            table = self._tables.setdefault(residual, table)
        return table

    def prefetch(self, residuals: Iterable[int], threads: int = 1, progress: bool = False) -> None:
        """Build the tables of many residual sets, optionally on a thread pool."""
        todo = [r for r in residuals if r and r not in self._tables]
        bar = tqdm(total=len(todo), desc="Leaf tables", disable=not progress)
        if threads <= 1:
            for r in todo:
                self.table_for(r)
                bar.update()
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for _ in pool.map(self.table_for, todo):
                    bar.update()
        bar.close()

    def log_leaf_ratio(self, block: int, residual: int) -> float:
        """log P(L = block | L != empty) on the residual set."""
        table = self.table_for(residual)
        if table.nonempty_mass <= 0.0:
            raise ConsistencyError(f"Residual set {residual:#x} has no non-empty leaf mass")
        q = table.masses[_compress(block, residual)]
        if q <= 0.0:
            return -math.inf
        return math.log(q) - math.log(table.nonempty_mass)

    def _log_unordered(self, blocks: tuple[int, ...]) -> float:
        if not blocks:
            return 0.0
        if self.memoize:
            cached = self._memo.get(blocks)
            if cached is not None:
                return cached

        residual = 0
        for b in blocks:
            residual |= b
        terms = []
        for k, block in enumerate(blocks):
            top = self.log_leaf_ratio(block, residual)
            if top == -math.inf:
                continue
            rest = self._log_unordered(blocks[:k] + blocks[k + 1:])
            if rest == -math.inf:
                continue
            terms.append(top + rest)
        value = float(logsumexp(terms)) if terms else -math.inf

        if self.memoize:
            value = self._memo.setdefault(blocks, value)
        return value

    def log_prior_unordered(self, m: Partition) -> float:
        return self._log_unordered(canonicalize(m).blocks)

    def log_prior_ordered(self, m: Partition) -> float:
        residual = m.support
        total = 0.0
        for block in m.blocks:
            total += self.log_leaf_ratio(block, residual)
            if total == -math.inf:
                return total
            residual &= ~block
        return total

    def layers(self, m: Partition) -> list[tuple[float, float]]:
        """(leaf mass, non-empty mass) of each block on the pixels not covered by the blocks above it."""
        validate_cover(m, self.pixels)
        residual = m.support
        out = []
        for block in m.blocks:
            table = self.table_for(residual)
            out.append((float(table.masses[_compress(block, residual)]), table.nonempty_mass))
            residual &= ~block
        return out

    def prior_unordered(self, m: Partition) -> PriorResult:
        validate_cover(m, self.pixels)
        log_value = self.log_prior_unordered(m)
        return PriorResult(math.exp(log_value), log_value, "unordered")

    def prior_ordered(self, m: Partition) -> PriorResult:
        validate_cover(m, self.pixels)
        log_value = self.log_prior_ordered(m)
        return PriorResult(math.exp(log_value), log_value, "ordered")


def prior_ordered(m: Partition, a: PixelSet, law: RadiusLaw) -> PriorResult:
    """Prior of a depth-ordered partition, block 0 on top."""
    return PriorModel(a, law).prior_ordered(m)


def prior_unordered(m: Partition, a: PixelSet, law: RadiusLaw) -> PriorResult:
    """Prior of an unordered partition, summing over every depth order."""
    return PriorModel(a, law).prior_unordered(m)

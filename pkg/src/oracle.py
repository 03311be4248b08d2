"""
Independent estimators used to check the analytic prior.

Monte Carlo estimators sample leaves directly; grid estimators count grid
positions. All of them return scaled probabilities, so comparisons with
unscaled analytic masses go through ratios or through scale_factor.

Positions are sampled on the frame of the pixel set: the bounding square
of the pixels, of side s, grown by r_max on every side.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from src.config import MC_CHUNK_SIZE, MC_MAX_ROUNDS
from src.errors import ConsistencyError, InvalidInputError
from src.geometry import PixelSet
from src.partitions import Partition, canonicalize
from src.prior import LeafProbTable
from src.specfun import RadiusLaw, power_law_cdf, power_law_sample


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n_samples: int

    def z_score(self, target: float) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.value == target else math.inf
        return (self.value - target) / self.std_error

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n_samples": self.n_samples}


def frame_for(a: PixelSet, law: RadiusLaw) -> tuple[np.ndarray, float]:
    """Lower-left corner and side of the square positions are drawn from."""
    lower = a.coords.min(axis=0)
    s = float((a.coords.max(axis=0) - lower).max())
    return lower - law.r_max, s + 2.0 * law.r_max


def frame_area(a: PixelSet, law: RadiusLaw) -> float:
    return frame_for(a, law)[1] ** 2


def _bernoulli(hits: int, n: int) -> Estimate:
    p = hits / n
    se = math.sqrt(p * (1.0 - p) / (n - 1)) if n > 1 else 0.0
    return Estimate(p, se, n)


def ratio_estimate(num: Estimate, den: Estimate, covariance: float = 0.0) -> Estimate:
    """First-order delta method for num / den."""
    if den.value == 0.0:
        raise InvalidInputError("Ratio estimate with a zero denominator")
    r = num.value / den.value
    var = (num.std_error ** 2 - 2.0 * r * covariance + r * r * den.std_error ** 2) / den.value ** 2
    return Estimate(r, math.sqrt(max(var, 0.0)), min(num.n_samples, den.n_samples))


def _chunks(n: int) -> list[tuple[int, int]]:
    return [(c, min(MC_CHUNK_SIZE, n - c * MC_CHUNK_SIZE))
            for c in range((n + MC_CHUNK_SIZE - 1) // MC_CHUNK_SIZE)]


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng([seed, chunk])


def _footprints(a: PixelSet, law: RadiusLaw, size: int, rng: np.random.Generator) -> np.ndarray:
    """Bitmask of the pixels covered by each of size random leaves."""
    corner, side = frame_for(a, law)
    r = power_law_sample(law, rng, size)
    p = corner + side * rng.random((size, 2))
    diff = p[:, None, :] - a.coords[None, :, :]
    covered = np.hypot(diff[..., 0], diff[..., 1]) <= r[:, None]
    bits = np.int64(1) << np.arange(len(a), dtype=np.int64)
    return covered.astype(np.int64) @ bits


def _map_chunks(fn, n: int, seed: int, threads: int, progress: bool, desc: str) -> list:
    chunks = _chunks(n)
    jobs = [(lambda c=c, m=m: fn(m, _chunk_rng(seed, c))) for c, m in chunks]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(job) for job in jobs]
            return [f.result() for f in tqdm(futures, desc=desc, disable=not progress)]
    return [job() for job in tqdm(jobs, desc=desc, disable=not progress)]


def mc_leaf_probability(
    a: PixelSet, v: int, law: RadiusLaw, n: int, seed: int,
    threads: int = 1, progress: bool = False,
) -> Estimate:
    """Unconditional P(L_a = v) from n random leaves."""
    if n < 1:
        raise InvalidInputError(f"Need at least one sample, got {n}")
    counts = _map_chunks(
        lambda m, rng: int(np.count_nonzero(_footprints(a, law, m, rng) == v)),
        n, seed, threads, progress, "MC leaves",
    )
    return _bernoulli(sum(counts), n)


def mc_leaf_ratio(
    a: PixelSet, v: int, law: RadiusLaw, n: int, seed: int,
    threads: int = 1, progress: bool = False,
) -> Estimate:
    """P(L_a = v | L_a != empty) with the numerator/denominator covariance in the error."""
    if n < 1:
        raise InvalidInputError(f"Need at least one sample, got {n}")

    def count(m, rng):
        fp = _footprints(a, law, m, rng)
        return int(np.count_nonzero(fp == v)), int(np.count_nonzero(fp))

    pairs = _map_chunks(count, n, seed, threads, progress, "MC leaves")
    hits = sum(h for h, _ in pairs)
    nonempty = sum(k for _, k in pairs)
    num, den = _bernoulli(hits, n), _bernoulli(nonempty, n)
    if den.value == 0.0:
        raise ConsistencyError("No sampled leaf touched the pixel set")
    # v is a sub-event of the non-empty event
    cov = num.value * (1.0 - den.value) / (n - 1) if n > 1 else 0.0
    return ratio_estimate(num, den, cov)


def _grid_positions(a: PixelSet, law: RadiusLaw, pos_res: int, row: int) -> np.ndarray:
    corner, side = frame_for(a, law)
    h = side / pos_res
    xs = corner[0] + h * (np.arange(pos_res) + 0.5)
    y = corner[1] + h * (row + 0.5)
    return np.column_stack([xs, np.full(pos_res, y)])


def grid_leaf_table(
    a: PixelSet, law: RadiusLaw, pos_res: int, rad_res: int | None = None,
    progress: bool = False,
) -> LeafProbTable:
    """
    Leaf probabilities of every subset by counting grid positions.

    A leaf centred at p covers the k nearest pixels exactly for radii in
    [d_(k), d_(k+1)). With rad_res None that radius range is integrated with
    the power-law CDF (half-discrete); otherwise radii are cells of a
    geometric grid weighted by their exact probability (full-discrete).
    """
    if pos_res < 2 or (rad_res is not None and rad_res < 2):
        raise InvalidInputError("Grid resolutions must be >= 2")
    n = len(a)
    size = 1 << n
    table = np.zeros(size)
    bits = np.int64(1) << np.arange(n, dtype=np.int64)
    cell = (frame_for(a, law)[1] / pos_res) ** 2

    if rad_res is not None:
        edges = np.geomspace(law.r_min, law.r_max, rad_res + 1)
        weights = np.diff(power_law_cdf(edges, law))
        radii = np.sqrt(edges[:-1] * edges[1:])

    for row in tqdm(range(pos_res), desc="Grid rows", disable=not progress):
        p = _grid_positions(a, law, pos_res, row)
        diff = p[:, None, :] - a.coords[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        order = np.argsort(dist, axis=1, kind="stable")
        sorted_d = np.take_along_axis(dist, order, axis=1)
        prefix = np.cumsum(bits[order], axis=1)
        upper = np.concatenate([sorted_d[:, 1:], np.full((pos_res, 1), np.inf)], axis=1)

        if rad_res is None:
            w = power_law_cdf(np.minimum(upper, law.r_max), law) - power_law_cdf(sorted_d, law)
            w = np.where(sorted_d < law.r_max, np.maximum(w, 0.0), 0.0)
        else:
            # count of radius cells with sorted_d <= r < upper
            lo = np.searchsorted(radii, sorted_d, side="left")
            hi = np.searchsorted(radii, upper, side="left")
            cum = np.concatenate([[0.0], np.cumsum(weights)])
            w = cum[hi] - cum[lo]
        np.add.at(table, prefix.ravel(), w.ravel())

    table *= cell / frame_area(a, law)
    table[0] = 0.0
    table.setflags(write=False)
    return LeafProbTable(a, table, float(table[1:].sum()), scaled=True)


def grid_leaf_probability(
    a: PixelSet, v: int, law: RadiusLaw, pos_res: int, rad_res: int | None = None,
) -> Estimate:
    """Deterministic grid estimate of P(L_a = v); std_error is 0."""
    table = grid_leaf_table(a, law, pos_res, rad_res)
    return Estimate(table.mass(v), 0.0, pos_res * pos_res * (rad_res or 1))


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Rewrite each row of leaf labels as its restricted-growth string."""
    rows, n = labels.shape
    out = np.zeros((rows, n), dtype=np.int64)
    nxt = np.ones(rows, dtype=np.int64)
    idx = np.arange(rows)
    for k in range(1, n):
        match = labels[:, :k] == labels[:, k:k + 1]
        seen = match.any(axis=1)
        first = match.argmax(axis=1)
        out[:, k] = np.where(seen, out[idx, first], nxt)
        nxt += ~seen
    return out


def _simulate_partitions(a: PixelSet, law: RadiusLaw, size: int, rng: np.random.Generator) -> np.ndarray:
    """Leaf labels of size independent runs of the occlusion process on a."""
    n = len(a)
    corner, side = frame_for(a, law)
    labels = np.zeros((size, n), dtype=np.int64)
    next_label = np.ones(size, dtype=np.int64)
    active = np.arange(size)
    rounds = 0
    while active.size:
        rounds += 1
        if rounds > MC_MAX_ROUNDS:
            raise ConsistencyError(f"Runs still uncovered after {MC_MAX_ROUNDS} leaf rounds")
        r = power_law_sample(law, rng, active.size)
        p = corner + side * rng.random((active.size, 2))
        diff = p[:, None, :] - a.coords[None, :, :]
        covered = np.hypot(diff[..., 0], diff[..., 1]) <= r[:, None]
        current = labels[active]
        new = covered & (current == 0)
        claimed = new.any(axis=1)
        current = np.where(new, next_label[active][:, None], current)
        labels[active] = current
        next_label[active] += claimed
        active = active[(labels[active] == 0).any(axis=1)]
    return labels


def mc_partition_distribution(
    a: PixelSet, law: RadiusLaw, n: int, seed: int,
    threads: int = 1, progress: bool = False,
) -> dict[tuple[int, ...], Estimate]:
    """Empirical distribution of induced partitions, keyed by restricted-growth string."""
    if n < 1:
        raise InvalidInputError(f"Need at least one sample, got {n}")

    def run(m, rng):
        rgs = canonical_labels(_simulate_partitions(a, law, m, rng))
        keys, counts = np.unique(rgs, axis=0, return_counts=True)
        return {tuple(int(x) for x in key): int(c) for key, c in zip(keys, counts)}

    totals: dict[tuple[int, ...], int] = {}
    for part in _map_chunks(run, n, seed, threads, progress, "MC partitions"):
        for key, c in part.items():
            totals[key] = totals.get(key, 0) + c
    return {key: _bernoulli(c, n) for key, c in sorted(totals.items())}


def mc_partition_prior(
    a: PixelSet, m: Partition, law: RadiusLaw, n: int, seed: int,
    threads: int = 1, progress: bool = False,
) -> Estimate:
    """Fraction of simulated runs whose unordered partition equals m."""
    key = canonicalize(m).labels(len(a))
    dist = mc_partition_distribution(a, law, n, seed, threads, progress)
    return dist.get(key, Estimate(0.0, 0.0, n))

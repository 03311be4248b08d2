"""
Ideal observer: posterior over every partition of a pixel window.
"""

import csv
import dataclasses
import heapq
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp
from tqdm import tqdm

from src.config import CSV_DIGITS
from src.errors import ConsistencyError, FormatError, InvalidInputError
from src.generator import ColorTextureModel, model_from_dict
from src.geometry import PixelSet
from src.io_formats import load_json, to_jsonable
from src.likelihood import ObservationWindow, log_likelihood
from src.partitions import (
    Partition,
    bell_number,
    check_cap,
    enumerate_partitions,
    partition_from_json,
    partition_string,
    partition_to_json,
    split_streams,
)
from src.prior import PriorModel
from src.specfun import RadiusLaw


@dataclass(frozen=True)
class PosteriorRecord:
    partition: Partition
    log_prior: float
    log_likelihood: float
    log_posterior_unnorm: float
    posterior: float
    index: int
    tie: bool = False

    def to_dict(self, pixels: PixelSet) -> dict:
        return to_jsonable({
            "index": self.index,
            "partition": partition_to_json(self.partition, pixels),
            "log_prior": self.log_prior,
            "log_likelihood": self.log_likelihood,
            "log_posterior_unnorm": self.log_posterior_unnorm,
            "posterior": self.posterior,
            "tie": self.tie,
        })


class LogSumExpAccumulator:
    """Running log(sum(exp(x))) with a shifting maximum."""

    def __init__(self):
        self.max = -math.inf
        self.sum = 0.0
        self.count = 0

    def add(self, x: float) -> None:
        self.count += 1
        if x == -math.inf:
            return
        if x > self.max:
            self.sum = self.sum * math.exp(self.max - x) + 1.0
            self.max = x
        else:
            self.sum += math.exp(x - self.max)

    @property
    def value(self) -> float:
        if self.sum == 0.0:
            return -math.inf
        return self.max + math.log(self.sum)


def _sort_key(record: PosteriorRecord):
    return (-record.log_posterior_unnorm, record.index)


def _score(w, model, prior_model, partition, exact_discrete):
    lp = prior_model.log_prior_unordered(partition)
    ll = log_likelihood(w, partition, model, exact_discrete=exact_discrete)
    return lp, ll


def posterior_sweep(
    w: ObservationWindow,
    law: RadiusLaw,
    model: ColorTextureModel,
    cap: int | None = None,
    threads: int = 1,
    prior_model: PriorModel | None = None,
    exact_discrete: bool = False,
    progress: bool = False,
) -> list[PosteriorRecord]:
    """
    Score and normalize every partition of the window.

    Args:
        w: Observed pixels and values.
        law: Radius law of the leaves.
        model: Color/texture model for the likelihood.
        cap: Largest window to enumerate (default PARTITION_CAP).
        threads: Worker threads; results do not depend on it.
        prior_model: Engine with shared caches; built on demand.
        exact_discrete: Use the marginalized discrete likelihood for uniform models.
        progress: Show progress bars.

    Returns:
        Records sorted by posterior, ties in enumeration order.
    """
    n = len(w.pixels)
    check_cap(n, cap)
    if prior_model is None:
        prior_model = PriorModel(w.pixels, law)
    prior_model.prefetch(range(1, 1 << n), threads=threads, progress=progress)

    prefixes = split_streams(n, depth=3 if threads > 1 else 0)
    bar = tqdm(total=bell_number(n), desc="Partitions", disable=not progress)

    def work(prefix):
        rows = []
        for partition in enumerate_partitions(n, cap, prefix):
            rows.append((partition, *_score(w, model, prior_model, partition, exact_discrete)))
            bar.update()
        return rows

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, prefixes))
    else:
        chunks = [work(p) for p in prefixes]
    bar.close()

    rows = [row for chunk in chunks for row in chunk]
    log_unnorm = np.array([lp + ll for _, lp, ll in rows])
    log_z = float(logsumexp(log_unnorm))
    if not math.isfinite(log_z):
        raise ConsistencyError("Every partition has zero posterior mass")

    records = [
        PosteriorRecord(p, lp, ll, lp + ll, math.exp(lp + ll - log_z), index)
        for index, (p, lp, ll) in enumerate(rows)
    ]
    records.sort(key=_sort_key)
    return records


def map_partition(records: list[PosteriorRecord]) -> PosteriorRecord:
    """Record with the largest posterior; equal scores go to the first in enumeration order."""
    if not records:
        raise InvalidInputError("No posterior records")
    best = min(records, key=_sort_key)
    tie = any(
        r.index != best.index and r.log_posterior_unnorm == best.log_posterior_unnorm
        for r in records
    )
    return dataclasses.replace(best, tie=tie)


def top_k(records: list[PosteriorRecord], k: int) -> list[PosteriorRecord]:
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    return heapq.nsmallest(k, records, key=_sort_key)


def posterior_top_k_streaming(
    w: ObservationWindow,
    law: RadiusLaw,
    model: ColorTextureModel,
    k: int,
    cap: int | None = None,
    prior_model: PriorModel | None = None,
    exact_discrete: bool = False,
    progress: bool = False,
) -> tuple[list[PosteriorRecord], dict]:
    """
    Two passes over the enumeration, keeping only the top k records.

    The first pass accumulates the normalizer; the second re-scores each
    partition, which hits the prior memo, and keeps a bounded heap.
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    n = len(w.pixels)
    check_cap(n, cap)
    if prior_model is None:
        prior_model = PriorModel(w.pixels, law)
    total = bell_number(n)

    acc = LogSumExpAccumulator()
    for partition in tqdm(enumerate_partitions(n, cap), total=total,
                          desc="Pass 1", disable=not progress):
        lp, ll = _score(w, model, prior_model, partition, exact_discrete)
        acc.add(lp + ll)
    log_z = acc.value
    if not math.isfinite(log_z):
        raise ConsistencyError("Every partition has zero posterior mass")

    heap: list = []
    for index, partition in enumerate(tqdm(enumerate_partitions(n, cap), total=total,
                                           desc="Pass 2", disable=not progress)):
        lp, ll = _score(w, model, prior_model, partition, exact_discrete)
        item = (lp + ll, -index, partition, lp, ll)
        if len(heap) < k:
            heapq.heappush(heap, item)
        elif item[:2] > heap[0][:2]:
            heapq.heapreplace(heap, item)

    records = [
        PosteriorRecord(p, lp, ll, lu, math.exp(lu - log_z), -neg)
        for lu, neg, p, lp, ll in heap
    ]
    records.sort(key=_sort_key)
    summary = {"log_evidence": log_z, "n_partitions": acc.count, "k": len(records)}
    return records, summary


def write_records_jsonl(records: list[PosteriorRecord], path: Path, pixels: PixelSet) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(pixels)) + "\n")


def write_records_csv(records: list[PosteriorRecord], path: Path, pixels: PixelSet) -> None:
    """Partition string, log prior, log likelihood and posterior, rounded for plotting."""
    fmt = f"{{:.{CSV_DIGITS}g}}"
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["partition", "log_prior", "log_likelihood", "posterior"])
        for record in records:
            writer.writerow([
                partition_string(record.partition, pixels),
                fmt.format(record.log_prior),
                fmt.format(record.log_likelihood),
                fmt.format(record.posterior),
            ])


def summarize(records: list[PosteriorRecord], pixels: PixelSet) -> dict:
    best = map_partition(records)
    return to_jsonable({
        "n_pixels": len(pixels),
        "n_partitions": len(records),
        "log_evidence": float(logsumexp([r.log_posterior_unnorm for r in records])),
        "posterior_sum": math.fsum(r.posterior for r in records),
        "map": best.to_dict(pixels),
    })


@dataclass(frozen=True)
class WindowBundle:
    """Observed window plus the optional law, model and generating partition shipped with it."""

    window: ObservationWindow
    law: RadiusLaw | None = None
    model: ColorTextureModel | None = None
    partition: Partition | None = None


def read_window_bundle(path: Path) -> WindowBundle:
    """
    Load a window bundle: {"pixels": [[x, y], ...], "values": [[...], ...]}
    with optional "law", "model" and "partition" entries.
    """
    data = load_json(path)
    try:
        points = [(float(x), float(y)) for x, y in data["pixels"]]
        values = np.asarray(data["values"], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"Malformed window bundle: {e!r}", path=path) from e
    if values.ndim != 2 or values.shape[0] != len(points):
        raise FormatError(f"Need one value row per pixel, got shape {values.shape}", path=path)

    pixels = PixelSet.from_points(points)
    order = [pixels.index_of(p) for p in points]
    sorted_values = np.empty_like(values)
    sorted_values[order] = values
    window = ObservationWindow(pixels, sorted_values)

    law = model = partition = None
    if "law" in data:
        law_data = data["law"]
        law = RadiusLaw(float(law_data["r_min"]), float(law_data["r_max"]), float(law_data.get("s", 0.0)))
    if "model" in data:
        model = model_from_dict(data["model"])
    if "partition" in data:
        partition = partition_from_json(data["partition"], pixels, ordered=True)
    return WindowBundle(window, law, model, partition)

"""
Set partitions of a pixel set: enumeration, canonical form and conversions.

Blocks are stored as bitmasks over the pixel order of the PixelSet they
partition. Canonical (unordered) partitions list their blocks by lowest
pixel, which is the block order of the restricted-growth string.
"""

import json
from dataclasses import dataclass
from math import comb
from typing import Iterator, Sequence

from src.config import PARTITION_CAP
from src.errors import FormatError, InvalidInputError, PartitionCapError
from src.geometry import PixelSet, indices_of


def _lowest_bit(mask: int) -> int:
    return (mask & -mask).bit_length() - 1


@dataclass(frozen=True)
class Partition:
    """
    Disjoint non-empty blocks covering a pixel set.

    When ordered is True the block order is the depth order, block 0 being
    the topmost leaf.
    """

    blocks: tuple[int, ...]
    ordered: bool = False

    def __post_init__(self):
        seen = 0
        for b in self.blocks:
            if b <= 0:
                raise InvalidInputError("Partition blocks must be non-empty")
            if seen & b:
                raise InvalidInputError("Partition blocks must be disjoint")
            seen |= b
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))

    @property
    def support(self) -> int:
        """Union of all blocks."""
        out = 0
        for b in self.blocks:
            out |= b
        return out

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def key(self) -> tuple[int, ...]:
        """Hashable key of the unordered partition."""
        return tuple(sorted(self.blocks, key=_lowest_bit))

    def labels(self, n: int) -> tuple[int, ...]:
        """Restricted-growth string of the canonical form, 0-based."""
        out = [-1] * n
        for label, block in enumerate(self.key):
            for i in indices_of(block):
                out[i] = label
        if -1 in out:
            raise InvalidInputError(f"Partition does not cover all {n} pixels")
        return tuple(out)


def from_labels(labels: Sequence[int], ordered: bool = False) -> Partition:
    """Partition whose block k collects the pixels labelled k, in label order."""
    blocks: dict[int, int] = {}
    for i, label in enumerate(labels):
        blocks[label] = blocks.get(label, 0) | (1 << i)
    return Partition(tuple(blocks[k] for k in sorted(blocks)), ordered=ordered)


def canonicalize(p: Partition) -> Partition:
    """Unordered canonical form: blocks sorted by their lowest pixel."""
    return Partition(p.key, ordered=False)


def restrict(p: Partition, keep: int) -> Partition:
    """Intersect every block with keep and drop the empty ones."""
    return Partition(tuple(b & keep for b in p.blocks if b & keep), ordered=p.ordered)


def membership_map(p: Partition, a: PixelSet) -> dict:
    """Map each pixel to the 1-based index of its block."""
    out = {}
    for label, block in enumerate(p.blocks, start=1):
        for i in indices_of(block):
            out[a[i]] = label
    if len(out) != len(a):
        raise InvalidInputError("Partition does not cover the pixel set")
    return out


def validate_cover(p: Partition, a: PixelSet) -> None:
    if p.support != a.full_mask:
        raise InvalidInputError(
            f"Partition covers mask {p.support:#x}, pixel set needs {a.full_mask:#x}"
        )


def bell_number(n: int) -> int:
    """Number of set partitions of n elements, via B_{k+1} = sum_j C(k, j) B_j."""
    if n < 0:
        raise InvalidInputError(f"Bell number needs n >= 0, got {n}")
    bell = [1]
    for k in range(n):
        bell.append(sum(comb(k, j) * bell[j] for j in range(k + 1)))
    return bell[n]


def check_cap(n: int, cap: int | None = None) -> None:
    if cap is None:
        cap = PARTITION_CAP
    if n > cap:
        raise PartitionCapError(n, cap, bell_number(n))


def _restricted_growth(n: int, prefix: Sequence[int] = ()) -> Iterator[list[int]]:
    """
    Restricted-growth strings of length n starting with prefix, in lexicographic order.

    The yielded list is reused between iterations.
    """
    k = len(prefix)
    if n == 0:
        if k == 0:
            yield []
        return
    if k > n:
        raise InvalidInputError(f"Prefix of length {k} is longer than {n}")
    a = list(prefix) + [0] * (n - k)
    if k == 0:
        k = 1
    # m[i] = max(a[0..i]) used to bound the next label
    m = [0] * n
    for i in range(n):
        if i == 0:
            if a[0] != 0:
                raise InvalidInputError("Restricted-growth strings start with 0")
            m[0] = 0
        else:
            if i < k and a[i] > m[i - 1] + 1:
                raise InvalidInputError(f"Invalid restricted-growth prefix {list(prefix)}")
            m[i] = max(m[i - 1], a[i])

    while True:
        yield a
        i = n - 1
        while i >= k and a[i] > m[i - 1]:
            i -= 1
        if i < k:
            return
        a[i] += 1
        m[i] = max(m[i - 1], a[i])
        for j in range(i + 1, n):
            a[j] = 0
            m[j] = m[i]


def enumerate_partitions(a: PixelSet | int, cap: int | None = None,
                         prefix: Sequence[int] = ()) -> Iterator[Partition]:
    """
    Stream every canonical partition of a pixel set exactly once.

    Order is lexicographic in the restricted-growth string over the pixel
    order. A prefix restricts the stream to strings starting with it.
    """
    n = a if isinstance(a, int) else len(a)
    check_cap(n, cap)
    for labels in _restricted_growth(n, prefix):
        yield from_labels(labels)


def split_streams(n: int, depth: int = 2) -> list[tuple[int, ...]]:
    """
    Prefixes that split the enumeration of n pixels into disjoint sub-streams.

    Concatenating the sub-streams in the returned order gives the full stream.
    """
    depth = max(0, min(depth, n))
    if depth == 0:
        return [()]
    return [tuple(s) for s in _restricted_growth(depth)]


def _format_coord(v: float):
    return int(v) if float(v).is_integer() else float(v)


def partition_to_json(p: Partition, a: PixelSet) -> list:
    """Blocks as lists of [x, y] pairs, blocks in the partition's order."""
    return [
        [[_format_coord(a[i].x), _format_coord(a[i].y)] for i in indices_of(block)]
        for block in p.blocks
    ]


def partition_from_json(data, a: PixelSet, ordered: bool = False) -> Partition:
    """Parse blocks of [x, y] pairs; accepts a JSON string or decoded data."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as e:
            raise FormatError(f"Invalid partition JSON: {e.msg}", line=e.lineno, column=e.colno) from e
    if not isinstance(data, list):
        raise FormatError("Partition must be a list of blocks")
    blocks = []
    for block in data:
        if not isinstance(block, list) or not block:
            raise FormatError("Every block must be a non-empty list of [x, y] pairs")
        try:
            blocks.append(a.mask_of((float(x), float(y)) for x, y in block))
        except (TypeError, ValueError) as e:
            raise FormatError(f"Bad pixel in partition: {e}") from e
    p = Partition(tuple(blocks), ordered=ordered)
    validate_cover(p, a)
    return p


def partition_string(p: Partition, a: PixelSet) -> str:
    """Compact text form, e.g. "(0,0)(0,1)|(2,0)"."""
    parts = []
    for block in p.blocks:
        parts.append("".join(
            f"({_format_coord(a[i].x)},{_format_coord(a[i].y)})" for i in indices_of(block)
        ))
    return "|".join(parts)

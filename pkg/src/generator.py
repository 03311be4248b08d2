"""
Dead leaves scene and image synthesis.

Leaves are drawn one after another until every pixel of the s x s frame is
covered. A leaf that covers no new pixel is discarded without using an
index, so labels stay contiguous and label 1 is the topmost leaf. Colors are
drawn once per leaf, texture once per pixel and channel, and the result is
capped to [0, 1].

Geometry, colors and texture use three rng streams spawned from the master
seed, so swapping the color model never changes the geometry.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from src.config import GEOM_EPS, LEAF_BATCH, MAX_LEAF_DRAWS
from src.errors import ConsistencyError, FormatError, InvalidInputError
from src.geometry import Point2
from src.io_formats import dump_json, load_json, read_pfm, read_pnm, write_pfm, write_pnm16
from src.specfun import RadiusLaw, power_law_sample


class Leaf(NamedTuple):
    center: Point2
    radius: float


def _per_channel(value, channels: int, name: str) -> tuple[float, ...]:
    vals = np.atleast_1d(np.asarray(value, dtype=float))
    if vals.size == 1:
        vals = np.repeat(vals, channels)
    if vals.size != channels:
        raise InvalidInputError(f"{name} has {vals.size} entries for {channels} channel(s)")
    return tuple(float(v) for v in vals)


@dataclass(frozen=True)
class GaussianModel:
    """Normal leaf colors N(mu_c, sigma_c^2) plus normal texture N(0, sigma_t^2), per channel."""

    mu_c: tuple[float, ...]
    sigma_c: tuple[float, ...]
    sigma_t: tuple[float, ...]

    @classmethod
    def create(cls, mu_c, sigma_c, sigma_t, channels: int | None = None) -> "GaussianModel":
        """Broadcast scalar parameters to the channel count."""
        if channels is None:
            channels = np.atleast_1d(mu_c).size
        return cls(
            _per_channel(mu_c, channels, "mu_c"),
            _per_channel(sigma_c, channels, "sigma_c"),
            _per_channel(sigma_t, channels, "sigma_t"),
        )

    def __post_init__(self):
        if not len(self.mu_c) == len(self.sigma_c) == len(self.sigma_t):
            raise InvalidInputError("Gaussian model parameters need one entry per channel")
        if len(self.mu_c) not in (1, 3):
            raise InvalidInputError(f"Models have 1 or 3 channels, got {len(self.mu_c)}")
        if min(self.sigma_c) <= 0.0:
            raise InvalidInputError(f"sigma_c must be > 0, got {self.sigma_c}")
        if min(self.sigma_t) < 0.0:
            raise InvalidInputError(f"sigma_t must be >= 0, got {self.sigma_t}")

    @property
    def channels(self) -> int:
        return len(self.mu_c)

    def to_dict(self) -> dict:
        return {
            "variant": "gaussian",
            "mu_c": list(self.mu_c),
            "sigma_c": list(self.sigma_c),
            "sigma_t": list(self.sigma_t),
        }


@dataclass(frozen=True)
class UniformModel:
    """Uniform colors on a level grid plus integer texture offsets in [-h, h]."""

    color_levels: int = 256
    texture_halfwidth: int = 10
    channels: int = 3

    def __post_init__(self):
        if self.color_levels < 2:
            raise InvalidInputError(f"Need at least 2 color levels, got {self.color_levels}")
        if self.texture_halfwidth < 0:
            raise InvalidInputError(f"texture_halfwidth must be >= 0, got {self.texture_halfwidth}")
        if self.channels not in (1, 3):
            raise InvalidInputError(f"Models have 1 or 3 channels, got {self.channels}")

    @property
    def texture_levels(self) -> int:
        return 2 * self.texture_halfwidth + 1

    def to_dict(self) -> dict:
        return {
            "variant": "uniform",
            "color_levels": self.color_levels,
            "texture_halfwidth": self.texture_halfwidth,
            "channels": self.channels,
        }


ColorTextureModel = GaussianModel | UniformModel


def model_from_dict(data: dict) -> ColorTextureModel:
    variant = data.get("variant")
    if variant == "gaussian":
        return GaussianModel.create(data["mu_c"], data["sigma_c"], data["sigma_t"])
    if variant == "uniform":
        return UniformModel(
            int(data.get("color_levels", 256)),
            int(data.get("texture_halfwidth", 10)),
            int(data.get("channels", 3)),
        )
    raise InvalidInputError(f"Unknown color/texture model {variant!r}")


@dataclass
class Scene:
    """Depth-ordered leaves and the label of every pixel; labels[y, x], row 0 at the bottom."""

    side: int
    labels: np.ndarray
    leaves: list[Leaf]
    law: RadiusLaw
    seed: int
    draws: int = 0
    render: dict | None = field(default=None)
    config: dict | None = field(default=None)
    drawn_radii: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)


@dataclass
class Image:
    """Pixel values[y, x, channel] in [0, 1], row 0 at the bottom."""

    values: np.ndarray

    @property
    def side(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def _streams(seed: int) -> list[np.random.Generator]:
    """Geometry, color and texture generators for a master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def generate_scene(law: RadiusLaw, seed: int, record_draws: bool = False) -> Scene:
    """
    Draw leaves until the s x s frame is covered.

    Pixel centres sit at integer (x, y) for x, y in [0, s); leaf centres are
    uniform on [-r_max, s + r_max]^2. With record_draws the radius of every
    draw, kept or discarded, is stored in scene.drawn_radii.

    Raises:
        InvalidInputError: frame side below 1
        ConsistencyError: MAX_LEAF_DRAWS draws without full coverage
    """
    side = int(law.s)
    if side < 1 or side != law.s:
        raise InvalidInputError(f"Frame side must be a positive integer, got {law.s}")
    rng = _streams(seed)[0]

    labels = np.zeros((side, side), dtype=np.int32)
    uncovered = side * side
    leaves: list[Leaf] = []
    draws = 0
    recorded: list[np.ndarray] = []
    lo, hi = -law.r_max, side + law.r_max

    while uncovered:
        batch = min(LEAF_BATCH, MAX_LEAF_DRAWS - draws)
        if batch <= 0:
            raise ConsistencyError(
                f"Frame not covered after {MAX_LEAF_DRAWS:,} leaf draws; "
                f"{uncovered} pixel(s) left. Check r_max against the frame size."
            )
        radii = power_law_sample(law, rng, batch)
        centers = rng.uniform(lo, hi, size=(batch, 2))
        start = draws

        for r, (cx, cy) in zip(radii, centers):
            draws += 1
            x0, x1 = max(0, math.ceil(cx - r)), min(side - 1, math.floor(cx + r))
            y0, y1 = max(0, math.ceil(cy - r)), min(side - 1, math.floor(cy + r))
            if x0 > x1 or y0 > y1:
                continue
            ys, xs = np.ogrid[y0:y1 + 1, x0:x1 + 1]
            window = labels[y0:y1 + 1, x0:x1 + 1]
            new = ((xs - cx) ** 2 + (ys - cy) ** 2 <= r * r) & (window == 0)
            count = int(new.sum())
            if not count:
                continue
            window[new] = len(leaves) + 1
            leaves.append(Leaf(Point2(float(cx), float(cy)), float(r)))
            uncovered -= count
            if not uncovered:
                break
        if record_draws:
            recorded.append(radii[:draws - start])

    scene = Scene(side, labels, leaves, law, seed, draws)
    if record_draws:
        scene.drawn_radii = np.concatenate(recorded)
    return scene


def render_image(scene: Scene, model: ColorTextureModel, seed: int) -> Image:
    """Color every leaf once, add per-pixel texture and cap to [0, 1]."""
    color_rng, texture_rng = _streams(seed)[1:]
    shape = (scene.side, scene.side, model.channels)
    index = scene.labels - 1

    if isinstance(model, GaussianModel):
        colors = color_rng.normal(model.mu_c, model.sigma_c, size=(scene.n_leaves, model.channels))
        texture = texture_rng.normal(0.0, model.sigma_t, size=shape)
        values = np.clip(colors[index] + texture, 0.0, 1.0)
    else:
        top = model.color_levels - 1
        colors = color_rng.integers(0, model.color_levels, size=(scene.n_leaves, model.channels))
        h = model.texture_halfwidth
        texture = texture_rng.integers(-h, h + 1, size=shape)
        values = np.clip(colors[index] + texture, 0, top) / top

    scene.render = {"model": model.to_dict(), "seed": seed}
    return Image(values)


def validate_scene(scene: Scene) -> None:
    """Check labels, leaf radii and occlusion order."""
    labels = scene.labels
    if labels.shape != (scene.side, scene.side):
        raise FormatError(f"Label array has shape {labels.shape}, expected {(scene.side,) * 2}")
    present = np.unique(labels)
    expected = np.arange(1, scene.n_leaves + 1)
    if present.shape != expected.shape or not np.array_equal(present, expected):
        missing = sorted(set(expected.tolist()) - set(present.tolist()))
        raise FormatError(
            f"Leaf labels must be exactly 1..{scene.n_leaves}; "
            f"missing {missing[:5]} or extra {sorted(set(present.tolist()) - set(expected.tolist()))[:5]}"
        )
    for k, leaf in enumerate(scene.leaves, start=1):
        if not scene.law.r_min <= leaf.radius <= scene.law.r_max:
            raise FormatError(f"Leaf {k} radius {leaf.radius} outside the radius law")
    _check_occlusion(scene)


def _check_occlusion(scene: Scene) -> None:
    """Pixel labelled i lies in disk i and strictly outside every disk j < i."""
    labels = scene.labels
    geometry = np.array([[leaf.center.x, leaf.center.y, leaf.radius] for leaf in scene.leaves])
    cx, cy, radius = geometry[labels - 1].transpose(2, 0, 1)
    ys, xs = np.indices(labels.shape)
    outside = np.hypot(xs - cx, ys - cy) > radius + GEOM_EPS
    if outside.any():
        y, x = np.argwhere(outside)[0]
        raise FormatError(f"Pixel ({x}, {y}) lies outside its leaf {labels[y, x]}")

    side = scene.side
    for j, (px, py, r) in enumerate(geometry, start=1):
        x0, x1 = max(0, math.ceil(px - r)), min(side - 1, math.floor(px + r))
        y0, y1 = max(0, math.ceil(py - r)), min(side - 1, math.floor(py + r))
        if x0 > x1 or y0 > y1:
            continue
        wy, wx = np.ogrid[y0:y1 + 1, x0:x1 + 1]
        inside = np.hypot(wx - px, wy - py) < r - GEOM_EPS
        hidden = inside & (labels[y0:y1 + 1, x0:x1 + 1] > j)
        if hidden.any():
            y, x = np.argwhere(hidden)[0]
            raise FormatError(
                f"Pixel ({x0 + x}, {y0 + y}) is labelled {labels[y0 + y, x0 + x]} "
                f"but lies inside the earlier leaf {j}"
            )


def scene_to_dict(scene: Scene) -> dict:
    out = {
        "format": "dead-leaves-scene",
        "version": 1,
        "side": scene.side,
        "seed": scene.seed,
        "law": scene.law.to_dict(),
        "draws": scene.draws,
        "leaves": [[leaf.center.x, leaf.center.y, leaf.radius] for leaf in scene.leaves],
        "labels": scene.labels.tolist(),
    }
    if scene.render is not None:
        out["render"] = scene.render
    if scene.config is not None:
        out["config"] = scene.config
    return out


def scene_from_dict(data: dict, path=None) -> Scene:
    try:
        law_data = data["law"]
        law = RadiusLaw(float(law_data["r_min"]), float(law_data["r_max"]), float(law_data["s"]))
        leaves = [Leaf(Point2(float(x), float(y)), float(r)) for x, y, r in data["leaves"]]
        labels = np.asarray(data["labels"], dtype=np.int32)
        scene = Scene(int(data["side"]), labels, leaves, law, int(data["seed"]),
                      int(data.get("draws", 0)), data.get("render"), data.get("config"))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"Malformed scene: {e!r}", path=path) from e
    validate_scene(scene)
    return scene


def write_scene(path: Path, scene: Scene) -> None:
    validate_scene(scene)
    dump_json(scene_to_dict(scene), path)


def read_scene(path: Path) -> Scene:
    return scene_from_dict(load_json(path), path=path)


def write_image(path: Path, image: Image) -> None:
    """Float image as PFM."""
    write_pfm(path, image.values)


def read_image(path: Path) -> Image:
    """Read a PFM float image, or an 8/16-bit PNM preview."""
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic in (b"PF", b"Pf"):
        return Image(read_pfm(path))
    if magic in (b"P5", b"P6"):
        return Image(read_pnm(path))
    raise FormatError(f"Unknown image format (magic {magic!r})", path=path, offset=0)


def write_preview(path: Path, image: Image, comments: Sequence[str] = ()) -> None:
    """16-bit quantized export for viewing."""
    write_pnm16(path, image.values, list(comments))

"""
Likelihood of observed pixel values given a partition.

Each block is one leaf: its pixels share a leaf color and carry independent
texture, and channels are independent.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from src.errors import InvalidInputError
from src.generator import ColorTextureModel, GaussianModel, Image, UniformModel
from src.geometry import PixelSet, indices_of
from src.partitions import Partition, validate_cover

LOG_2PI = math.log(2.0 * math.pi)
LEVEL_TOL = 1e-4  # Allowed distance from the level grid, in levels


@dataclass(frozen=True)
class ObservationWindow:
    """Values[k, channel] of the pixels of a pixel set."""

    pixels: PixelSet
    values: np.ndarray

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] != len(self.pixels):
            raise InvalidInputError(
                f"{values.shape[0]} value rows for {len(self.pixels)} pixels"
            )
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_image(cls, image: Image, pixels: PixelSet) -> "ObservationWindow":
        """Pick the pixels (integer x, y; origin bottom-left) out of an image."""
        h, w = image.values.shape[:2]
        rows = []
        for p in pixels:
            x, y = int(p.x), int(p.y)
            if x != p.x or y != p.y or not (0 <= x < w and 0 <= y < h):
                raise InvalidInputError(f"Pixel {tuple(p)} is not inside the {w}x{h} image")
            rows.append(image.values[y, x])
        return cls(pixels, np.array(rows))


def _check_channels(w: ObservationWindow, model: ColorTextureModel) -> None:
    if model.channels != w.channels:
        raise InvalidInputError(
            f"Model has {model.channels} channel(s), observation has {w.channels}"
        )


def _levels(w: ObservationWindow, model: UniformModel) -> np.ndarray:
    """Observed values as integer levels; rejects values off the level grid."""
    scaled = w.values * (model.color_levels - 1)
    levels = np.rint(scaled)
    if w.values.size and np.max(np.abs(scaled - levels)) > LEVEL_TOL:
        raise InvalidInputError(
            f"Observed values are not on the {model.color_levels}-level grid"
        )
    return levels.astype(int)


def gaussian_block_logpdf(values: np.ndarray, mu_c, sigma_c, sigma_t) -> np.ndarray:
    """
    Per-channel log density of one block.

    The covariance sigma_c^2 * ones + sigma_t^2 * I has determinant
    sigma_t^(2(n-1)) (sigma_t^2 + n sigma_c^2), and its quadratic form splits
    into the within-block scatter over sigma_t^2 and the mean offset over
    sigma_t^2 + n sigma_c^2.
    """
    values = np.atleast_2d(values)
    n = values.shape[0]
    t2 = np.asarray(sigma_t, dtype=float) ** 2
    c2 = np.asarray(sigma_c, dtype=float) ** 2
    d = values - np.asarray(mu_c, dtype=float)
    mean = d.mean(axis=0)
    scatter = ((d - mean) ** 2).sum(axis=0)
    pooled = t2 + n * c2
    return -0.5 * (
        n * LOG_2PI
        + (n - 1) * np.log(t2)
        + np.log(pooled)
        + scatter / t2
        + n * mean ** 2 / pooled
    )


def _block_rows(m: Partition, w: ObservationWindow):
    validate_cover(m, w.pixels)
    for block in m.blocks:
        yield block, w.values[indices_of(block)]


def log_likelihood_uniform(w: ObservationWindow, m: Partition, model: UniformModel) -> float:
    """|a| * channels * log(1 / (2h + 1)); the same for every partition."""
    _check_channels(w, model)
    _levels(w, model)
    validate_cover(m, w.pixels)
    return len(w.pixels) * w.channels * -math.log(model.texture_levels)


def log_likelihood_gaussian(w: ObservationWindow, m: Partition, model: GaussianModel) -> float:
    """Sum over blocks and channels of the multivariate normal log density."""
    return float(sum(block_log_likelihoods(w, m, model)))


def _discrete_block(levels: np.ndarray, model: UniformModel) -> float:
    """log sum_c P_c(c) prod_j P_t(s_j - c), summed over channels."""
    colors = np.arange(model.color_levels)
    h = model.texture_halfwidth
    total = 0.0
    for ch in range(levels.shape[1]):
        offsets = levels[None, :, ch] - colors[:, None]
        log_pt = np.where(np.abs(offsets) <= h, -math.log(model.texture_levels), -np.inf)
        per_color = log_pt.sum(axis=1) - math.log(model.color_levels)
        total += float(logsumexp(per_color))
    return total


def log_likelihood_discrete(w: ObservationWindow, m: Partition, model: UniformModel) -> float:
    """
    Exact discrete likelihood, marginalizing each leaf color per channel.

    Capping at the level bounds is not modelled.
    """
    return float(sum(block_log_likelihoods(w, m, model, exact_discrete=True)))


def block_log_likelihoods(
    w: ObservationWindow,
    m: Partition,
    model: ColorTextureModel,
    exact_discrete: bool = False,
) -> list[float]:
    """Log likelihood of every block, in the partition's block order."""
    _check_channels(w, model)
    if isinstance(model, GaussianModel):
        if min(model.sigma_t) <= 0.0:
            raise InvalidInputError("Gaussian likelihood needs sigma_t > 0")
        return [
            float(gaussian_block_logpdf(rows, model.mu_c, model.sigma_c, model.sigma_t).sum())
            for _, rows in _block_rows(m, w)
        ]

    levels = _levels(w, model)
    validate_cover(m, w.pixels)
    out = []
    for block in m.blocks:
        idx = indices_of(block)
        if exact_discrete:
            out.append(_discrete_block(levels[idx], model))
        else:
            out.append(len(idx) * w.channels * -math.log(model.texture_levels))
    return out


def log_likelihood(
    w: ObservationWindow,
    m: Partition,
    model: ColorTextureModel,
    exact_discrete: bool = False,
) -> float:
    """Dispatch on the model variant."""
    if isinstance(model, GaussianModel):
        return log_likelihood_gaussian(w, m, model)
    if exact_discrete:
        return log_likelihood_discrete(w, m, model)
    return log_likelihood_uniform(w, m, model)

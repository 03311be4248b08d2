"""
Special functions for the radius integral: the Clausen function, the
power-law radius law and the closed-form antiderivative of the boundary term.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import zeta

from src.config import CLAUSEN_TERMS, GEOM_EPS
from src.errors import InvalidInputError
from src.geometry import _as_point, alpha_angle

TWO_PI = 2.0 * math.pi

# zeta(2k) / (k (2k + 1) (2 pi)^(2k)) for k = 1..CLAUSEN_TERMS
_K = np.arange(1, CLAUSEN_TERMS + 1, dtype=float)
_CLAUSEN_COEFFS = zeta(2.0 * _K) / (_K * (2.0 * _K + 1.0) * TWO_PI ** (2.0 * _K))


@dataclass(frozen=True)
class RadiusLaw:
    """
    Power-law radius density on [r_min, r_max] and the frame it lives in.

    Leaf centres are uniform on B = [-r_max, s + r_max]^2 where s is the side
    of the visible area.
    """

    r_min: float
    r_max: float
    s: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.r_min) and math.isfinite(self.r_max)):
            raise InvalidInputError("Radius bounds must be finite")
        if not 0.0 < self.r_min < self.r_max:
            raise InvalidInputError(
                f"Radius law needs 0 < r_min < r_max, got ({self.r_min}, {self.r_max})"
            )
        if self.s < 0.0:
            raise InvalidInputError(f"Frame side must be >= 0, got {self.s}")

    @property
    def inv_sq_span(self) -> float:
        """r_min^-2 - r_max^-2."""
        return self.r_min ** -2 - self.r_max ** -2

    @property
    def norm_constant(self) -> float:
        return 2.0 / self.inv_sq_span

    @property
    def frame_area(self) -> float:
        return (self.s + 2.0 * self.r_max) ** 2

    def to_dict(self) -> dict:
        return {"r_min": self.r_min, "r_max": self.r_max, "s": self.s}


def clausen2(theta):
    """
    Clausen function Cl_2(theta) = sum_k sin(k theta) / k^2.

    The argument is reduced to [-pi, pi] and evaluated with the expansion
    theta - theta log|theta| + sum_k zeta(2k) theta^(2k+1) / (k (2k+1) (2 pi)^(2k)).
    Accepts scalars or arrays.
    """
    arr = np.asarray(theta, dtype=float)
    x = arr - TWO_PI * np.round(arr / TWO_PI)
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        head = np.where(ax > 0.0, x - x * np.log(ax), 0.0)
    x2 = x * x
    series = np.zeros_like(x)
    power = x.copy()
    for c in _CLAUSEN_COEFFS:
        power = power * x2
        series = series + c * power
    out = head + series
    if np.ndim(theta) == 0:
        return float(out)
    return out


def power_law_pdf(r, law: RadiusLaw):
    """Density 2 / (r_min^-2 - r_max^-2) * r^-3 on the support, zero outside."""
    r = np.asarray(r, dtype=float)
    inside = (r >= law.r_min) & (r <= law.r_max)
    with np.errstate(divide="ignore"):
        out = np.where(inside, law.norm_constant * r ** -3.0, 0.0)
    return float(out) if out.ndim == 0 else out


def power_law_cdf(r, law: RadiusLaw):
    """(r_min^-2 - r^-2) / (r_min^-2 - r_max^-2), clipped to [0, 1]."""
    r = np.clip(np.asarray(r, dtype=float), law.r_min, law.r_max)
    out = (law.r_min ** -2 - r ** -2.0) / law.inv_sq_span
    return float(out) if out.ndim == 0 else out


def power_law_quantile(u, law: RadiusLaw):
    """Inverse CDF: (r_min^-2 - u (r_min^-2 - r_max^-2))^(-1/2)."""
    u = np.asarray(u, dtype=float)
    out = (law.r_min ** -2 - u * law.inv_sq_span) ** -0.5
    out = np.clip(out, law.r_min, law.r_max)
    return float(out) if out.ndim == 0 else out


def power_law_sample(law: RadiusLaw, rng: np.random.Generator, size=None):
    """Draw radii by inverse-transform sampling."""
    return power_law_quantile(rng.random(size), law)


def scale_factor(law: RadiusLaw, frame_area: float | None = None) -> float:
    """
    Factor turning an unscaled mass into a probability.

    Unscaled masses integrate 2 r^-3 times the area of possible positions;
    the probability divides by |B| and by r_min^-2 - r_max^-2.
    """
    if frame_area is None:
        frame_area = law.frame_area
    return 1.0 / (frame_area * law.inv_sq_span)


def _beta(r, d):
    """acos(d / 2r), clamping arguments that overshoot 1 by rounding."""
    arg = np.asarray(d, dtype=float) / (2.0 * np.asarray(r, dtype=float))
    if np.any(arg > 1.0 + GEOM_EPS):
        raise InvalidInputError("Radius is below half the pair distance; circles do not meet")
    return np.arccos(np.clip(arg, -1.0, 1.0))


def _b(r, xi, alpha, d, sign):
    """
    Vectorized antiderivative; xi is (..., 2), the rest broadcast against it.

    b = alpha log r - s (Cl2(2 beta + pi) / 2 + beta log(d / r))
        - d / (4 r^2) <x_i, n(alpha - pi/2)>
        + s <x_i, n(alpha)> / d (beta - sin(2 beta) / 2)
    """
    r = np.asarray(r, dtype=float)
    xi = np.asarray(xi, dtype=float)
    beta = _beta(r, d)
    proj_normal = xi[..., 0] * np.cos(alpha - 0.5 * math.pi) + xi[..., 1] * np.sin(alpha - 0.5 * math.pi)
    proj_axis = xi[..., 0] * np.cos(alpha) + xi[..., 1] * np.sin(alpha)
    return (
        alpha * np.log(r)
        - sign * (0.5 * clausen2(2.0 * beta + math.pi) + beta * np.log(d / r))
        - d / (4.0 * r * r) * proj_normal
        + sign * proj_axis / d * (beta - 0.5 * np.sin(2.0 * beta))
    )


def _pair(xi, xj):
    xi, xj = _as_point(xi), _as_point(xj)
    d = math.hypot(xj.x - xi.x, xj.y - xi.y)
    if d == 0.0:
        raise InvalidInputError(f"Antiderivative needs distinct points, got {tuple(xi)} twice")
    return np.array(xi, dtype=float), alpha_angle(xi, xj), d


def antiderivative_b(r: float, xi, xj, sign: int) -> float:
    """
    Radius antiderivative of 2 r^-3 A(x_ij+-; r) for the endpoint x_ij with the given sign.

    Only differences b(r2) - b(r1) are meaningful.
    """
    xi_arr, alpha, d = _pair(xi, xj)
    return float(_b(r, xi_arr, alpha, d, 1 if sign > 0 else -1))


def antiderivative_integrand(r: float, xi, xj, sign: int) -> float:
    """
    2 r^-3 A(t; r) with A(t; r) = r^2 t / 2 + r <x_i, n(t - pi/2)> / 2.

    A is the contribution of an arc endpoint at angle t on the circle around
    x_i to the area enclosed by the region boundary.
    """
    xi_arr, alpha, d = _pair(xi, xj)
    s = 1 if sign > 0 else -1
    t = alpha + s * float(_beta(r, d))
    area_term = 0.5 * r * r * t + 0.5 * r * (xi_arr[0] * math.sin(t) - xi_arr[1] * math.cos(t))
    return 2.0 * area_term / r ** 3

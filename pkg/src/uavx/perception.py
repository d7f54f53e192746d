"""Observation building and the step reward.

The raw depth image is augmented by shrinking depths inside the detected
person box (the person then looks closer than it is, so avoidance starts
earlier), and the reward combines distance travelled with two bounding-box
terms: an off-center bonus and a closeness penalty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .worldsim import BBox, DepthImage

MIN_DEPTH = 1e-3  # meters; augmented depths never reach zero

PENALTY_MODES = ("height", "aspect")


@dataclass(frozen=True)
class RewardParams:
    dt: float = 0.5
    lam: float = 0.5
    rho: float = 1.0
    collision_reward: float = -10.0

    def validate(self) -> None:
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.lam < 0.0 or self.rho < 0.0:
            raise ValueError("lam and rho must be non-negative")


@dataclass
class Observation:
    depth: DepthImage
    bbox: BBox | None


def _pixel_window(bbox: BBox, width: int, height: int):
    x0 = max(0, int(math.floor(bbox.x_min)))
    x1 = min(width, int(math.ceil(bbox.x_max)))
    y0 = max(0, int(math.floor(bbox.y_min)))
    y1 = min(height, int(math.ceil(bbox.y_max)))
    return x0, x1, y0, y1


def augment_depth(raw: DepthImage, bbox: BBox | None, shrink: float = 0.5) -> DepthImage:
    """Multiply depths inside the box by shrink (floored at MIN_DEPTH).

    Pixels outside the box are untouched; with no box this is the identity.
    """
    if not 0.0 < shrink <= 1.0:
        raise ValueError(f"shrink must lie in (0, 1], got {shrink}")
    depths = raw.depths.copy()
    if bbox is not None:
        if bbox.x_min < 0 or bbox.y_min < 0 or bbox.x_max > raw.width or bbox.y_max > raw.height:
            raise ValueError(f"bbox {bbox} exceeds image bounds {raw.width}x{raw.height}")
        x0, x1, y0, y1 = _pixel_window(bbox, raw.width, raw.height)
        depths[y0:y1, x0:x1] = np.maximum(depths[y0:y1, x0:x1] * shrink, MIN_DEPTH)
    return DepthImage(raw.width, raw.height, depths)


def bb_distance(bbox: BBox | None, width: int) -> float:
    """Normalized horizontal offset of the box center from the image center.

    0 with no detection or a perfectly centered person, 1 at the image edge.
    """
    if bbox is None:
        return 0.0
    return abs(bbox.center_x - width / 2.0) / (width / 2.0)


def bb_penalty(bbox: BBox | None, height: int, mode: str = "height") -> float:
    """Closeness proxy in [0, 1]: the bigger the box, the closer the person.

    'height' uses the box height as a fraction of the image height;
    'aspect' uses the box width/height ratio, which only grows once the
    person is close enough that the box is clipped vertically.
    """
    if mode not in PENALTY_MODES:
        raise ValueError(f"penalty mode must be one of {PENALTY_MODES}, got {mode!r}")
    if bbox is None:
        return 0.0
    if mode == "height":
        return min(1.0, bbox.height / height)
    if bbox.height <= 0.0:
        return 0.0
    return min(1.0, bbox.width / bbox.height)


def reward(
    applied_v: float,
    applied_psi: float,
    bbox: BBox | None,
    image_size: tuple,
    collided: bool,
    params: RewardParams,
    penalty_mode: str = "height",
) -> float:
    """Step reward: collision is exactly the collision reward; otherwise
    v*cos(psi)*dt plus the off-center bonus minus the closeness penalty."""
    params.validate()
    if collided:
        return params.collision_reward
    width, height = image_size
    travelled = applied_v * math.cos(applied_psi) * params.dt
    return (
        travelled
        + params.lam * bb_distance(bbox, width)
        - params.rho * bb_penalty(bbox, height, mode=penalty_mode)
    )


def network_state(depth: DepthImage, max_range: float, resolution: int) -> np.ndarray:
    """Network-ready observation: depths normalized by max range and
    block-averaged down to (resolution, resolution)."""
    if depth.height % resolution or depth.width % resolution:
        raise ShapeError(
            f"image {depth.width}x{depth.height} not divisible by resolution {resolution}"
        )
    by = depth.height // resolution
    bx = depth.width // resolution
    norm = depth.depths / max_range
    return norm.reshape(resolution, by, resolution, bx).mean(axis=(1, 3))

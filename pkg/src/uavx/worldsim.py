"""Deterministic 3-D kinematic world with a ray-cast depth camera.

The UAV is a sphere steered by ten discrete actions inside an axis-aligned
bounded volume containing box obstacles and one walking person (a vertical
cylinder on a waypoint loop). Depth images come from exact ray/box and
ray/cylinder intersections through a pinhole camera, so identical inputs
always produce bit-identical outputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ConfigError

N_ACTIONS = 10
FORWARD_SPEED = 1.2   # m/s
CLIMB_SPEED = 0.6     # m/s, vertical action
TURN_RATE = math.pi / 6.0  # rad/s
PITCH_LIMIT = math.pi / 3.0
PERSON_RADIUS = 0.3
PERSON_HEIGHT = 1.8

# yaw/pitch turn directions for actions 2..9: left, right, up, down, then
# the four diagonals (up-left, up-right, down-left, down-right)
_TURNS = {
    2: (1.0, 0.0),
    3: (-1.0, 0.0),
    4: (0.0, 1.0),
    5: (0.0, -1.0),
    6: (1.0, 1.0),
    7: (-1.0, 1.0),
    8: (1.0, -1.0),
    9: (-1.0, -1.0),
}

_EPS = 1e-9


@dataclass(frozen=True)
class CameraConfig:
    width: int = 32
    height: int = 32
    hfov: float = math.pi / 2.0
    max_range: float = 20.0

    @property
    def focal_px(self) -> float:
        return (self.width / 2.0) / math.tan(self.hfov / 2.0)


@dataclass(frozen=True)
class WorldConfig:
    bounds_min: tuple
    bounds_max: tuple
    spawn_position: tuple
    spawn_heading: float = 0.0
    obstacles: tuple = ()          # ((min_xyz, max_xyz), ...)
    person_waypoints: tuple = ()   # empty means no person in the world
    person_speed: float = 0.0
    uav_radius: float = 0.3
    control_dt: float = 0.5
    camera: CameraConfig = CameraConfig()
    name: str = ""


@dataclass(frozen=True)
class WorldState:
    uav_position: tuple
    uav_heading: float
    uav_pitch: float
    person_position: tuple | None
    person_waypoint_index: int
    step_count: int


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def center_x(self) -> float:
        return 0.5 * (self.x_min + self.x_max)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


@dataclass
class DepthImage:
    width: int
    height: int
    depths: np.ndarray  # (height, width), meters, row-major


def _wrap_angle(a: float) -> float:
    """Normalize to [-pi, pi)."""
    return float((a + math.pi) % (2.0 * math.pi) - math.pi)


def _orientation_vector(heading: float, pitch: float) -> np.ndarray:
    cp = math.cos(pitch)
    return np.array(
        [cp * math.cos(heading), cp * math.sin(heading), math.sin(pitch)]
    )


# ---------------------------------------------------------------------------
# collision geometry


def _point_box_distance(p: np.ndarray, bmin, bmax) -> float:
    closest = np.clip(p, bmin, bmax)
    return float(np.linalg.norm(p - closest))


def _point_bounds_margin(p: np.ndarray, bmin, bmax) -> float:
    """Distance from p to the nearest bounds face; negative when outside."""
    lo = p - np.asarray(bmin)
    hi = np.asarray(bmax) - p
    return float(min(lo.min(), hi.min()))


def _point_person_distance(p: np.ndarray, person_pos) -> float:
    base = np.asarray(person_pos)
    dxy = math.hypot(p[0] - base[0], p[1] - base[1])
    radial = max(0.0, dxy - PERSON_RADIUS)
    axial = max(0.0, base[2] - p[2], p[2] - (base[2] + PERSON_HEIGHT))
    return math.hypot(radial, axial)


def min_solid_distance(position, config: WorldConfig, person_position=None) -> float:
    """Distance from a point to the nearest solid (obstacles, the region
    outside the bounds, and the person when present)."""
    p = np.asarray(position, dtype=np.float64)
    best = _point_bounds_margin(p, config.bounds_min, config.bounds_max)
    for bmin, bmax in config.obstacles:
        best = min(best, _point_box_distance(p, bmin, bmax))
    if person_position is not None:
        best = min(best, _point_person_distance(p, person_position))
    return best


def _collides(position, config: WorldConfig, person_position) -> bool:
    return min_solid_distance(position, config, person_position) < config.uav_radius


# ---------------------------------------------------------------------------
# configuration


def validate_config(config: WorldConfig) -> None:
    bmin = np.asarray(config.bounds_min, dtype=np.float64)
    bmax = np.asarray(config.bounds_max, dtype=np.float64)
    if bmin.shape != (3,) or bmax.shape != (3,) or not np.all(bmin < bmax):
        raise ConfigError(f"bounds must satisfy min < max per axis, got {config.bounds_min} / {config.bounds_max}")
    if config.control_dt <= 0.0:
        raise ConfigError(f"control_dt must be positive, got {config.control_dt}")
    cam = config.camera
    if cam.max_range <= 0.0:
        raise ConfigError(f"camera max_range must be positive, got {cam.max_range}")
    if not 0.0 < cam.hfov < math.pi:
        raise ConfigError(f"camera hfov must lie in (0, pi), got {cam.hfov}")
    if cam.width < 1 or cam.height < 1:
        raise ConfigError("camera resolution must be at least 1x1")
    if config.uav_radius < 0.0:
        raise ConfigError("uav_radius must be non-negative")
    for bominf, bomaxf in config.obstacles:
        if not all(a <= b for a, b in zip(bominf, bomaxf)):
            raise ConfigError(f"obstacle box has min > max: {bominf} / {bomaxf}")
    if config.person_waypoints and config.person_speed < 0.0:
        raise ConfigError("person_speed must be non-negative")
    person = config.person_waypoints[0] if config.person_waypoints else None
    if _collides(config.spawn_position, config, person):
        raise ConfigError(
            f"spawn position {config.spawn_position} is not collision-free "
            f"inside the bounds"
        )


def reset(config: WorldConfig, seed: int = 0) -> WorldState:
    """Place the UAV at the spawn pose and the person at its first waypoint.

    Identical (config, seed) always yields a bit-identical state; the seed
    is accepted for interface stability, spawning itself is deterministic.
    """
    validate_config(config)
    del seed
    if config.person_waypoints:
        person = tuple(float(v) for v in config.person_waypoints[0])
        target = 1 % len(config.person_waypoints)
    else:
        person = None
        target = 0
    return WorldState(
        uav_position=tuple(float(v) for v in config.spawn_position),
        uav_heading=_wrap_angle(config.spawn_heading),
        uav_pitch=0.0,
        person_position=person,
        person_waypoint_index=target,
        step_count=0,
    )


def _advance_person(state: WorldState, config: WorldConfig):
    if state.person_position is None:
        return None, 0
    waypoints = config.person_waypoints
    if len(waypoints) < 2 or config.person_speed <= 0.0:
        return state.person_position, state.person_waypoint_index
    pos = np.asarray(state.person_position, dtype=np.float64)
    idx = state.person_waypoint_index
    remaining = config.person_speed * config.control_dt
    # guard against zero-length segments (duplicate waypoints)
    for _ in range(2 * len(waypoints) + 4):
        if remaining <= _EPS:
            break
        target = np.asarray(waypoints[idx], dtype=np.float64)
        seg = target - pos
        dist = float(np.linalg.norm(seg))
        if dist <= remaining:
            pos = target
            remaining -= dist
            idx = (idx + 1) % len(waypoints)
        else:
            pos = pos + seg * (remaining / dist)
            remaining = 0.0
    return tuple(float(v) for v in pos), idx


def step(state: WorldState, action: int, config: WorldConfig):
    """Apply one control period. Returns (state, collided, applied_v, applied_psi).

    Action 0 flies forward at 1.2 m/s, action 1 climbs at 0.6 m/s, actions
    2..9 fly forward while turning yaw/pitch at pi/6 rad/s toward one of
    eight forward-facing directions. applied_psi is the angular deviation
    of the step (pi/2 for the climb), used by the reward.
    """
    action = int(action)
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action must be in [0, {N_ACTIONS - 1}], got {action}")
    dt = config.control_dt
    heading = state.uav_heading
    pitch = state.uav_pitch
    if action == 0:
        v, psi = FORWARD_SPEED, 0.0
        move_dir = _orientation_vector(heading, pitch)
    elif action == 1:
        v, psi = CLIMB_SPEED, math.pi / 2.0
        move_dir = np.array([0.0, 0.0, 1.0])
    else:
        v, psi = FORWARD_SPEED, TURN_RATE * dt
        sy, sp = _TURNS[action]
        scale = TURN_RATE * dt / math.hypot(sy, sp)
        heading = _wrap_angle(heading + sy * scale)
        pitch = float(np.clip(pitch + sp * scale, -PITCH_LIMIT, PITCH_LIMIT))
        move_dir = _orientation_vector(heading, pitch)
    position = np.asarray(state.uav_position, dtype=np.float64) + v * dt * move_dir
    person, person_idx = _advance_person(state, config)
    collided = _collides(position, config, person)
    new_state = WorldState(
        uav_position=tuple(float(c) for c in position),
        uav_heading=heading,
        uav_pitch=pitch,
        person_position=person,
        person_waypoint_index=person_idx,
        step_count=state.step_count + 1,
    )
    return new_state, collided, v, psi


# ---------------------------------------------------------------------------
# ray casting


def _ray_box_t(origin: np.ndarray, dirs: np.ndarray, bmin, bmax) -> np.ndarray:
    """Smallest t > 0 where each ray crosses the box surface; inf if never.

    Rays starting inside the box hit the surface from inside (exit
    distance), which keeps depths positive after an interpenetration.
    """
    bmin = np.asarray(bmin, dtype=np.float64)
    bmax = np.asarray(bmax, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (bmin - origin) / dirs
        t2 = (bmax - origin) / dirs
    near = np.fmin(t1, t2)
    far = np.fmax(t1, t2)
    tmin = np.fmax(np.fmax(near[:, 0], near[:, 1]), near[:, 2])
    tmax = np.fmin(np.fmin(far[:, 0], far[:, 1]), far[:, 2])
    hit = tmax >= np.maximum(tmin, _EPS)
    t = np.where(tmin > _EPS, tmin, tmax)
    return np.where(hit, t, np.inf)


def _ray_cylinder_t(origin: np.ndarray, dirs: np.ndarray, base, radius, height) -> np.ndarray:
    """Smallest t > 0 hitting a vertical solid cylinder (side or caps)."""
    cx, cy, z0 = float(base[0]), float(base[1]), float(base[2])
    z1 = z0 + height
    px, py = origin[0] - cx, origin[1] - cy
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    a = dx * dx + dy * dy
    b = 2.0 * (px * dx + py * dy)
    c = px * px + py * py - radius * radius
    disc = b * b - 4.0 * a * c
    sq = np.sqrt(np.maximum(disc, 0.0))
    best = np.full(dirs.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for root in ((-b - sq), (-b + sq)):
            t = root / (2.0 * a)
            z = origin[2] + t * dz
            ok = (disc >= 0.0) & (a > _EPS) & (t > _EPS) & (z >= z0) & (z <= z1)
            best = np.where(ok & (t < best), t, best)
        for zc in (z0, z1):
            t = (zc - origin[2]) / dz
            x = origin[0] + t * dx
            y = origin[1] + t * dy
            ok = np.isfinite(t) & (t > _EPS)
            ok &= (x - cx) ** 2 + (y - cy) ** 2 <= radius * radius
            best = np.where(ok & (t < best), t, best)
    return best


def _camera_basis(heading: float, pitch: float):
    fwd = _orientation_vector(heading, pitch)
    right = np.array([math.sin(heading), -math.cos(heading), 0.0])
    up = np.cross(right, fwd)
    return fwd, right, up


def _pixel_directions(state: WorldState, cam: CameraConfig) -> np.ndarray:
    fwd, right, up = _camera_basis(state.uav_heading, state.uav_pitch)
    f = cam.focal_px
    cols = (np.arange(cam.width) + 0.5 - cam.width / 2.0) / f
    rows = (cam.height / 2.0 - (np.arange(cam.height) + 0.5)) / f
    xs, ys = np.meshgrid(cols, rows)  # (H, W)
    dirs = (
        fwd[None, None, :]
        + xs[:, :, None] * right[None, None, :]
        + ys[:, :, None] * up[None, None, :]
    ).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs


def render_depth(state: WorldState, config: WorldConfig) -> DepthImage:
    """One exact ray per pixel; depth is Euclidean distance to the nearest
    solid, clamped to the camera's max range."""
    cam = config.camera
    origin = np.asarray(state.uav_position, dtype=np.float64)
    dirs = _pixel_directions(state, cam)
    t = _ray_box_t(origin, dirs, config.bounds_min, config.bounds_max)
    for bmin, bmax in config.obstacles:
        t = np.minimum(t, _ray_box_t(origin, dirs, bmin, bmax))
    if state.person_position is not None:
        t = np.minimum(
            t,
            _ray_cylinder_t(origin, dirs, state.person_position, PERSON_RADIUS, PERSON_HEIGHT),
        )
    depth = np.minimum(t, cam.max_range)
    depth = np.maximum(depth, _EPS)
    return DepthImage(cam.width, cam.height, depth.reshape(cam.height, cam.width))


def person_bbox(state: WorldState, config: WorldConfig):
    """Project the person's bounding cylinder into the image.

    Returns None when the person is absent, fully outside the frustum, or
    occluded at its center by a nearer obstacle. The box is clipped to the
    image bounds.
    """
    if state.person_position is None:
        return None
    cam = config.camera
    origin = np.asarray(state.uav_position, dtype=np.float64)
    fwd, right, up = _camera_basis(state.uav_heading, state.uav_pitch)
    base = np.asarray(state.person_position, dtype=np.float64)

    angles = np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)
    ring = np.stack(
        [base[0] + PERSON_RADIUS * np.cos(angles), base[1] + PERSON_RADIUS * np.sin(angles)],
        axis=1,
    )
    points = []
    for z in (base[2], base[2] + PERSON_HEIGHT):
        for x, y in ring:
            points.append((x, y, z))
        points.append((base[0], base[1], z))
    points = np.asarray(points) - origin

    depth_fwd = points @ fwd
    visible = depth_fwd > _EPS
    if not np.any(visible):
        return None
    points = points[visible]
    depth_fwd = depth_fwd[visible]
    f = cam.focal_px
    px = cam.width / 2.0 + f * (points @ right) / depth_fwd
    py = cam.height / 2.0 - f * (points @ up) / depth_fwd
    x_min, x_max = float(px.min()), float(px.max())
    y_min, y_max = float(py.min()), float(py.max())
    if x_max <= 0.0 or x_min >= cam.width or y_max <= 0.0 or y_min >= cam.height:
        return None

    # occlusion test along the ray to the person's mid-height center
    center = base + np.array([0.0, 0.0, PERSON_HEIGHT / 2.0])
    to_center = center - origin
    dist = float(np.linalg.norm(to_center))
    if dist > _EPS and config.obstacles:
        ray = (to_center / dist)[None, :]
        for bmin, bmax in config.obstacles:
            t = float(_ray_box_t(origin, ray, bmin, bmax)[0])
            if t < dist - 1e-6:
                return None

    return BBox(
        x_min=max(0.0, x_min),
        y_min=max(0.0, y_min),
        x_max=min(float(cam.width), x_max),
        y_max=min(float(cam.height), y_max),
    )


# ---------------------------------------------------------------------------
# configuration files


def parse_kv_lines(text: str, source: str = "<config>"):
    """Parse 'key = value' lines; '#' starts a comment. Returns a list of
    (line_number, key, value) preserving order and repeated keys."""
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        entries.append((lineno, key, value))
    return entries


def _floats(value: str, n: int, source: str, lineno: int) -> tuple:
    parts = value.split()
    if len(parts) != n:
        raise ConfigError(f"{source}:{lineno}: expected {n} numbers, got {value!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{source}:{lineno}: not numeric: {value!r}") from None


_WORLD_SCALARS = {
    "spawn_heading": float,
    "uav_radius": float,
    "control_dt": float,
    "person_speed": float,
    "camera_width": int,
    "camera_height": int,
    "camera_hfov": float,
    "camera_max_range": float,
}


def world_config_from_entries(entries, source: str = "<config>") -> tuple:
    """Build (WorldConfig, extras) from parsed entries. Keys containing a
    dot are not world keys; they are returned untouched in extras."""
    scalars: dict = {}
    name = ""
    bounds_min = bounds_max = spawn = None
    obstacles = []
    waypoints = []
    extras: dict = {}
    for lineno, key, value in entries:
        if "." in key:
            extras[key] = value
            continue
        if key == "name":
            name = value
        elif key == "bounds_min":
            bounds_min = _floats(value, 3, source, lineno)
        elif key == "bounds_max":
            bounds_max = _floats(value, 3, source, lineno)
        elif key == "spawn_position":
            spawn = _floats(value, 3, source, lineno)
        elif key == "obstacle":
            v = _floats(value, 6, source, lineno)
            obstacles.append((v[:3], v[3:]))
        elif key == "person_waypoint":
            waypoints.append(_floats(value, 3, source, lineno))
        elif key in _WORLD_SCALARS:
            try:
                scalars[key] = _WORLD_SCALARS[key](value)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: not numeric: {value!r}") from None
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    missing = [k for k, v in (("bounds_min", bounds_min), ("bounds_max", bounds_max), ("spawn_position", spawn)) if v is None]
    if missing:
        raise ConfigError(f"{source}: missing required keys: {', '.join(missing)}")
    camera = CameraConfig(
        width=scalars.get("camera_width", 32),
        height=scalars.get("camera_height", 32),
        hfov=scalars.get("camera_hfov", math.pi / 2.0),
        max_range=scalars.get("camera_max_range", 20.0),
    )
    config = WorldConfig(
        bounds_min=bounds_min,
        bounds_max=bounds_max,
        spawn_position=spawn,
        spawn_heading=scalars.get("spawn_heading", 0.0),
        obstacles=tuple(obstacles),
        person_waypoints=tuple(waypoints),
        person_speed=scalars.get("person_speed", 0.0),
        uav_radius=scalars.get("uav_radius", 0.3),
        control_dt=scalars.get("control_dt", 0.5),
        camera=camera,
        name=name,
    )
    validate_config(config)
    return config, extras


def load_world_config(path) -> tuple:
    """Read a world configuration file. Returns (WorldConfig, extras)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    entries = parse_kv_lines(text, source=str(path))
    return world_config_from_entries(entries, source=str(path))


def preset_path(name: str):
    """Path of a shipped preset ('simple', 'complex', 'corridor')."""
    stem = name[:-4] if name.endswith(".cfg") else name
    ref = resources.files("uavx").joinpath(f"presets/{stem}.cfg")
    if not ref.is_file():
        raise ConfigError(f"unknown preset {name!r}")
    return ref

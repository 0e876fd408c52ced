"""Indoor scene geometry, UE trajectories and 2D laser scanning."""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.geometry.polygon import orient

NO_RETURN = -1.0


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Kinematics:
    v_max: float = 2.0
    omega_max: float = math.radians(90.0)
    dt: float = 0.020
    # heading-rate Ornstein-Uhlenbeck process
    turn_tau: float = 2.0
    turn_sigma: float = 0.6
    wall_margin: float = 0.5
    lookahead: float = 2.0
    # steering towards rarely visited cells; gain 0 gives a plain random walk
    explore_gain: float = 2.0
    explore_period: float = 4.0
    explore_cell: float = 1.0
    explore_candidates: int = 12


@dataclass(frozen=True)
class LaserConfig:
    resolution_deg: float = 0.6
    sigma: float = 0.05
    r_max: float = 30.0

    @property
    def n_beams(self):
        return int(math.ceil(360.0 / self.resolution_deg - 1e-9))

    @property
    def angles(self):
        return np.arange(self.n_beams) * math.radians(self.resolution_deg)


@dataclass(frozen=True)
class Scene:
    room_polygon: np.ndarray
    obstacles: tuple
    trp_positions: np.ndarray
    ue_height: float = 1.5
    trp_height: float = 8.0
    baseline_trp_positions: np.ndarray = None

    @property
    def n_trps(self):
        return len(self.trp_positions)

    @property
    def bbox(self):
        lo = self.room_polygon.min(axis=0)
        hi = self.room_polygon.max(axis=0)
        return np.array([lo[0], lo[1], hi[0], hi[1]])

    def segments(self):
        """All wall and obstacle edges as an (S, 2, 2) array."""
        segs = [_ring_segments(self.room_polygon)]
        segs += [_ring_segments(o) for o in self.obstacles]
        return np.concatenate(segs, axis=0)

    def free_space(self, margin=0.0):
        room = Polygon(self.room_polygon)
        free = room.buffer(-margin) if margin > 0 else room
        for obs in self.obstacles:
            poly = Polygon(obs)
            free = free.difference(poly.buffer(margin) if margin > 0 else poly)
        return free

    def contains(self, xy, margin=0.0):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return shapely.contains_xy(self.free_space(margin), xy[:, 0], xy[:, 1])

    def with_trps(self, trp_positions):
        return build_scene(self.room_polygon, trp_positions, obstacles=self.obstacles,
                           ue_height=self.ue_height, trp_height=self.trp_height)


@dataclass
class Trajectory:
    positions: np.ndarray
    headings: np.ndarray
    dt: float = 0.020

    def __len__(self):
        return len(self.positions)


@dataclass
class LaserScan:
    ranges: np.ndarray
    angles: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.ranges)

    def as_array(self):
        return np.stack([self.ranges, self.angles], axis=1)


def _ring_segments(vertices):
    v = np.asarray(vertices, dtype=float)
    return np.stack([v, np.roll(v, -1, axis=0)], axis=1)


def _as_ring(vertices, what):
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise SceneError(f"{what} needs at least 3 (x, y) vertices")
    poly = Polygon(v)
    if not poly.is_valid or not poly.exterior.is_simple or poly.area <= 0:
        raise SceneError(f"{what} is not a simple polygon")
    return np.asarray(orient(poly, sign=1.0).exterior.coords)[:-1]


def _as_trps(points, trp_height):
    trps = []
    for p in np.atleast_2d(np.asarray(points, dtype=float)):
        if p.shape[0] == 2:
            p = np.array([p[0], p[1], trp_height])
        elif p.shape[0] != 3:
            raise SceneError("TRP positions must be (x, y) or (x, y, z)")
        trps.append(p)
    return np.array(trps)


def build_scene(room, trp_positions, obstacles=(), ue_height=1.5, trp_height=8.0,
                baseline_trp_positions=None):
    """Validate a scene description and return a :class:`Scene`.

    Room and obstacle vertex lists are re-oriented counterclockwise. TRPs
    given as (x, y) pairs get ``trp_height`` as their z coordinate.
    """
    if ue_height <= 0 or trp_height <= 0:
        raise SceneError("heights must be positive")
    room = _as_ring(room, "room polygon")
    room_poly = Polygon(room)
    obs = []
    for i, o in enumerate(obstacles):
        ring = _as_ring(o, f"obstacle {i}")
        if not room_poly.contains(Polygon(ring)) or Polygon(ring).touches(room_poly.exterior):
            raise SceneError(f"obstacle {i} is not strictly inside the room")
        obs.append(ring)

    trps = _as_trps(trp_positions, trp_height)
    if len(trps) < 1:
        raise SceneError("at least one TRP is required")
    baseline = None
    if baseline_trp_positions is not None:
        baseline = _as_trps(baseline_trp_positions, trp_height)
    for p in trps if baseline is None else np.vstack([trps, baseline]):
        if not shapely.contains_xy(room_poly, p[0], p[1]):
            raise SceneError(f"TRP at ({p[0]:g}, {p[1]:g}) lies outside the room")
        if p[2] <= 0:
            raise SceneError("TRP height must be positive")
    return Scene(room, tuple(obs), trps, float(ue_height), float(trp_height), baseline)


def default_scene():
    """20 x 15 m hall with two LoS TRPs at 8 m along the north wall.

    A third TRP on the south wall is kept for the 3-anchor TDoA baseline.
    """
    room = [(0.0, 0.0), (20.0, 0.0), (20.0, 15.0), (0.0, 15.0)]
    trps = [(1.0, 14.0, 8.0), (19.0, 14.0, 8.0)]
    baseline = trps + [(10.0, 1.0, 8.0)]
    return build_scene(room, trps, ue_height=1.5, trp_height=8.0,
                       baseline_trp_positions=baseline)


def scene_from_config(cfg):
    return build_scene(
        cfg["room"],
        cfg["trps"],
        obstacles=cfg.get("obstacles", ()),
        ue_height=cfg.get("ue_height", 1.5),
        trp_height=cfg.get("trp_height", 8.0),
        baseline_trp_positions=cfg.get("baseline_trps"),
    )


def load_config(path):
    with open(path) as fh:
        return json.load(fh)


def cast_rays(segments, origin, directions, r_max=math.inf):
    """Distance from ``origin`` along each unit direction to the nearest segment.

    Rays that hit nothing within ``r_max`` get ``NO_RETURN``.
    """
    a = segments[:, 0, :]
    e = segments[:, 1, :] - a
    d = np.atleast_2d(directions)
    w = a[None, :, :] - np.asarray(origin, dtype=float)[None, None, :]
    # solve origin + t*d = a + s*e
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = (w[..., 0] * e[None, :, 1] - w[..., 1] * e[None, :, 0]) / denom
        s = (w[..., 0] * d[:, None, 1] - w[..., 1] * d[:, None, 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0.0) & (s <= 1.0)
    t = np.where(hit, t, np.inf).min(axis=1)
    return np.where(np.isfinite(t) & (t <= r_max), t, NO_RETURN)


def simulate_laser_scan(scene, pose, laser=LaserConfig(), rng=None, seed=None):
    """Body-frame 2D laser scan from ``pose = (x, y, heading)``."""
    x, y, heading = pose
    angles = laser.angles
    world = angles + heading
    dirs = np.stack([np.cos(world), np.sin(world)], axis=1)
    r = cast_rays(scene.segments(), (x, y), dirs, laser.r_max)
    if laser.sigma > 0:
        if rng is None:
            rng = np.random.default_rng(seed)
        valid = r != NO_RETURN
        noisy = r + rng.normal(0.0, laser.sigma, size=r.shape)
        r = np.where(valid, np.maximum(noisy, 1e-3), NO_RETURN)
    return LaserScan(r, angles)


def generate_trajectory(scene, n_steps, seed, kinematics=Kinematics(), max_tries=1000):
    """Constant-speed random walk with an Ornstein-Uhlenbeck turn rate.

    On top of the noise the walker steers (proportional gain
    ``explore_gain``) towards a goal that is re-picked every
    ``explore_period`` seconds as the least visited of a few random free
    points, which spreads a finite walk over the whole room. When the
    look-ahead point leaves the (margin-shrunk) free space the walker turns
    at full rate towards the more open side, and it stops to turn in place
    if even the next step would leave free space.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    k = kinematics
    rng = np.random.default_rng(seed)
    free = scene.free_space(k.wall_margin)
    if free.is_empty:
        raise SceneError("free space too small for the configured wall margin")
    segs = scene.segments()
    xmin, ymin, xmax, ymax = free.bounds

    def draw_point():
        for _ in range(max_tries):
            q = rng.uniform([xmin, ymin], [xmax, ymax])
            if shapely.contains_xy(free, q[0], q[1]):
                return q
        raise SceneError("could not place a point in free space")

    def clearance(p, h):
        return cast_rays(segs, p, np.array([math.cos(h), math.sin(h)]), math.inf)[0]

    step = k.v_max * k.dt
    max_turn = k.omega_max * k.dt
    decay = math.exp(-k.dt / k.turn_tau)
    kick = k.turn_sigma * math.sqrt(1.0 - decay**2)

    cell = k.explore_cell
    visits = np.zeros((int(math.ceil((xmax - xmin) / cell)) + 1,
                       int(math.ceil((ymax - ymin) / cell)) + 1))

    def cell_of(q):
        return int((q[0] - xmin) // cell), int((q[1] - ymin) // cell)

    def pick_goal():
        cands = [draw_point() for _ in range(k.explore_candidates)]
        return min(cands, key=lambda q: visits[cell_of(q)])

    every = max(1, int(round(k.explore_period / k.dt)))
    pos = np.empty((n_steps, 2))
    head = np.empty(n_steps)
    pos[0] = draw_point()
    head[0] = rng.uniform(-math.pi, math.pi)
    omega = 0.0
    goal = None
    for n in range(1, n_steps):
        p, h = pos[n - 1], head[n - 1]
        visits[cell_of(p)] += 1
        if k.explore_gain > 0 and (n - 1) % every == 0:
            goal = pick_goal()
        omega = decay * omega + kick * rng.standard_normal()
        steer = 0.0
        if goal is not None:
            bearing = math.atan2(goal[1] - p[1], goal[0] - p[0])
            steer = k.explore_gain * math.atan2(math.sin(bearing - h), math.cos(bearing - h))
        omega_cmd = float(np.clip(omega + steer, -k.omega_max, k.omega_max))
        ahead = p + k.lookahead * np.array([math.cos(h), math.sin(h)])
        if not shapely.contains_xy(free, ahead[0], ahead[1]):
            left = clearance(p, h + math.pi / 4)
            right = clearance(p, h - math.pi / 4)
            omega_cmd = k.omega_max if left >= right else -k.omega_max
        h_new = h + float(np.clip(omega_cmd * k.dt, -max_turn, max_turn))
        cand = p + step * np.array([math.cos(h_new), math.sin(h_new)])
        pos[n] = cand if shapely.contains_xy(free, cand[0], cand[1]) else p
        head[n] = math.atan2(math.sin(h_new), math.cos(h_new))

    z = np.full((n_steps, 1), scene.ue_height)
    return Trajectory(np.hstack([pos, z]), head, k.dt)

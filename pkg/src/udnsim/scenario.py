"""Static deployment and dynamic ground truth.

The street map is a simplified rectangular grid of square building blocks
(documented constants below) sized to keep typical device-to-access-node
line-of-sight distances in the tens of metres. Access nodes sit on street
edges at regular intervals; devices follow street routes under a
constant-velocity motion model with along-track speed noise, rounded corners
at intersections, and independently drifting clocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .antenna import ArrayGeometry, an_array, ue_array
from .geometry import euler_to_rotmat

# Documented street-grid constants (metres). The default 3x4 grid of 120 m
# blocks with 14 m streets gives a 416 m x 550 m footprint.
BLOCK_SIZE = 120.0
STREET_WIDTH = 14.0
DEFAULT_BLOCKS = (3, 4)

DEFAULT_UE_HEIGHT = 1.5
DEFAULT_UE_MOUNT_PITCH = np.deg2rad(30.0)  # tilted vehicle mounting of the UE array
DEFAULT_TURN_RADIUS = 6.0
DEFAULT_TURN_PROBABILITY = 0.25
DEFAULT_ACCEL_NOISE_STD = 0.5  # m/s^2
TURN_LATERAL_ACCEL = 3.0  # m/s^2, limits cornering speed
BRAKE_ACCEL = 3.0  # m/s^2
DRIVE_ACCEL = 2.0  # m/s^2

SCENARIO_SCHEMA = "udnsim.scenario/1"


class CapacityError(ValueError):
    """More access nodes requested than available street-edge slots."""


@dataclass(frozen=True)
class Numerology:
    carrier_frequency: float = 3.5e9
    subcarrier_spacing: float = 240e3
    tti_duration: float = 200e-6
    n_subcarriers: int = 832
    pilot_period_ttis: int = 500
    rs_bandwidth: float = 9.6e6
    dl_fraction: float = 4.7 / 5.7

    def __post_init__(self):
        if self.subcarrier_spacing <= 0 or self.tti_duration <= 0:
            raise ValueError("subcarrier_spacing and tti_duration must be positive")
        if self.n_subcarriers < 1:
            raise ValueError("need at least one subcarrier")
        if self.rs_bandwidth > self.n_subcarriers * self.subcarrier_spacing:
            raise ValueError("rs_bandwidth exceeds the configured band")
        if not 0.0 < self.dl_fraction < 1.0:
            raise ValueError("dl_fraction must lie in (0, 1)")

    @property
    def rs_subcarriers(self) -> int:
        return max(2, int(round(self.rs_bandwidth / self.subcarrier_spacing)))


@dataclass(frozen=True)
class ClockModel:
    initial_offset_std: float = 1e-6
    drift_std: float = 1e-5
    drift_random_walk_std: float = 1e-9  # per TTI

    def __post_init__(self):
        if min(self.initial_offset_std, self.drift_std, self.drift_random_walk_std) < 0:
            raise ValueError("clock standard deviations must be non-negative")


@dataclass(frozen=True)
class StreetGrid:
    n_blocks_x: int = DEFAULT_BLOCKS[0]
    n_blocks_y: int = DEFAULT_BLOCKS[1]
    block_size: float = BLOCK_SIZE
    street_width: float = STREET_WIDTH

    @property
    def extent(self):
        return (self.n_blocks_x * self.block_size + (self.n_blocks_x + 1) * self.street_width,
                self.n_blocks_y * self.block_size + (self.n_blocks_y + 1) * self.street_width)

    def vertical_centerlines(self):
        pitch = self.block_size + self.street_width
        return self.street_width / 2 + pitch * np.arange(self.n_blocks_x + 1)

    def horizontal_centerlines(self):
        pitch = self.block_size + self.street_width
        return self.street_width / 2 + pitch * np.arange(self.n_blocks_y + 1)

    def street_rects(self):
        """Axis-aligned street rectangles (xmin, ymin, xmax, ymax)."""
        ex, ey = self.extent
        w = self.street_width / 2
        rects = [(x - w, 0.0, x + w, ey) for x in self.vertical_centerlines()]
        rects += [(0.0, y - w, ex, y + w) for y in self.horizontal_centerlines()]
        return rects

    def contains(self, xy) -> np.ndarray:
        """Point-in-street test for an (..., 2) array of positions."""
        xy = np.asarray(xy, dtype=float)
        inside = np.zeros(xy.shape[:-1], dtype=bool)
        for xmin, ymin, xmax, ymax in self.street_rects():
            inside |= ((xy[..., 0] >= xmin - 1e-9) & (xy[..., 0] <= xmax + 1e-9)
                       & (xy[..., 1] >= ymin - 1e-9) & (xy[..., 1] <= ymax + 1e-9))
        return inside

    def street_area(self) -> float:
        """Union area of the street rectangles in square metres (exact)."""
        ex, ey = self.extent
        n_v, n_h = self.n_blocks_x + 1, self.n_blocks_y + 1
        w = self.street_width
        return n_v * w * ey + n_h * w * ex - n_v * n_h * w * w

    def nodes(self):
        """Intersection centers as an (n_v, n_h, 2) array."""
        xs = self.vertical_centerlines()
        ys = self.horizontal_centerlines()
        return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class AnSite:
    id: int
    position: np.ndarray  # (3,)
    array: ArrayGeometry
    orientation: tuple = (0.0, 0.0, 0.0)  # yaw, pitch, roll
    tx_power_dbm: float = 23.0
    clock_offset: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        object.__setattr__(self, "position", pos)
        if pos[2] <= 0:
            raise ValueError("access-node height must be positive")
        if not np.isfinite(self.tx_power_dbm):
            raise ValueError("tx power must be finite")

    def rotation(self) -> np.ndarray:
        return euler_to_rotmat(*self.orientation)


@dataclass(frozen=True)
class Scenario:
    an_list: list
    grid: StreetGrid
    numerology: Numerology
    bounds: tuple  # (x_extent, y_extent)

    def __post_init__(self):
        if not self.an_list:
            raise ValueError("scenario needs at least one access node")
        ids = [an.id for an in self.an_list]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate access-node identifiers")
        for an in self.an_list:
            x, y = an.position[0], an.position[1]
            if not (0 <= x <= self.bounds[0] and 0 <= y <= self.bounds[1]):
                raise ValueError(f"access node {an.id} outside scenario bounds")

    def an_by_id(self, an_id: int) -> AnSite:
        for an in self.an_list:
            if an.id == an_id:
                return an
        raise KeyError(an_id)


@dataclass
class UeTrack:
    id: int
    positions: np.ndarray  # (T, 3)
    velocities: np.ndarray  # (T, 3)
    yaws: np.ndarray  # (T,), vehicle heading
    clock_offset: np.ndarray  # (T,)
    clock_drift: np.ndarray  # (T,)
    array: ArrayGeometry
    mount_pitch: float = DEFAULT_UE_MOUNT_PITCH
    tx_power_dbm: float = 10.0

    @property
    def n_samples(self) -> int:
        return self.positions.shape[0]

    def rotation(self, tti: int) -> np.ndarray:
        """World-from-UE-frame rotation at a sample (heading plus mount tilt)."""
        return euler_to_rotmat(self.yaws[tti], self.mount_pitch, 0.0)


def generate_madrid_scenario(n_an: int, an_height: float, numerology: Numerology,
                             seed: int, grid: StreetGrid | None = None,
                             an_spacing: float = 10.0,
                             an_tx_power_dbm: float = 23.0,
                             an_elements: int = 20) -> Scenario:
    """Place ``n_an`` access nodes at regular intervals along street edges."""
    if n_an < 1:
        raise ValueError("need at least one access node")
    grid = grid or StreetGrid()
    ex, ey = grid.extent
    w = grid.street_width / 2

    slots = []
    for x in grid.vertical_centerlines():
        offsets = np.arange(an_spacing / 2, ey, an_spacing)
        for i, y in enumerate(offsets):
            side = w if i % 2 == 0 else -w
            slots.append((x + side, y))
    for y in grid.horizontal_centerlines():
        offsets = np.arange(an_spacing / 2, ex, an_spacing)
        for i, x in enumerate(offsets):
            side = w if i % 2 == 0 else -w
            slots.append((x, y + side))
    # clamp slots that stick out past the map edge
    slots = [(min(max(x, 0.0), ex), min(max(y, 0.0), ey)) for x, y in slots]

    if n_an > len(slots):
        raise CapacityError(f"{n_an} access nodes requested but only {len(slots)} slots")
    pick = (np.arange(n_an) * len(slots)) // n_an
    array = an_array(numerology.carrier_frequency, n_elements=an_elements)
    an_list = [
        AnSite(id=i, position=np.array([slots[j][0], slots[j][1], an_height]),
               array=array, tx_power_dbm=an_tx_power_dbm)
        for i, j in enumerate(pick)
    ]
    return Scenario(an_list=an_list, grid=grid, numerology=numerology, bounds=(ex, ey))


# ---------------------------------------------------------------------------
# Route construction
# ---------------------------------------------------------------------------

def _right_normal(d):
    return np.array([d[1], -d[0]])


def _build_waypoints(grid: StreetGrid, rng, start_xy, turn_probability, min_length):
    """Street-following waypoint polyline from a start point on a street."""
    nodes = grid.nodes()
    n_v, n_h = nodes.shape[0], nodes.shape[1]
    xs = grid.vertical_centerlines()
    ys = grid.horizontal_centerlines()

    # snap the start to the nearest street centerline and pick a travel direction
    if np.abs(xs - start_xy[0]).min() <= np.abs(ys - start_xy[1]).min():
        k = int(np.abs(xs - start_xy[0]).argmin())
        center = np.array([xs[k], start_xy[1]])
        hi = int(np.searchsorted(ys, start_xy[1]))
        up = rng.random() < 0.5
        if up and hi > n_h - 1:
            up = False
        if not up and hi - 1 < 0:
            up = True
        node = (k, hi if up else hi - 1)
        heading = (0, 1) if up else (0, -1)
    else:
        m = int(np.abs(ys - start_xy[1]).argmin())
        center = np.array([start_xy[0], ys[m]])
        hi = int(np.searchsorted(xs, start_xy[0]))
        right = rng.random() < 0.5
        if right and hi > n_v - 1:
            right = False
        if not right and hi - 1 < 0:
            right = True
        node = (hi if right else hi - 1, m)
        heading = (1, 0) if right else (-1, 0)

    lateral = start_xy - center
    points = [center]
    prev = None
    length = 0.0
    while length < min_length:
        target = nodes[node[0], node[1]]
        if np.linalg.norm(target - points[-1]) > 1e-6:
            length += np.linalg.norm(target - points[-1])
            points.append(target)
        neighbors = []
        for dk, dm in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nk, nm = node[0] + dk, node[1] + dm
            if 0 <= nk < n_v and 0 <= nm < n_h and (nk, nm) != prev:
                neighbors.append((nk, nm))
        if not neighbors:  # dead end: U-turn
            neighbors = [prev]
        straight = (node[0] + heading[0], node[1] + heading[1])
        if straight in neighbors and rng.random() >= turn_probability:
            choice = straight
        else:
            turns = [nb for nb in neighbors if nb != straight] or neighbors
            choice = turns[rng.integers(len(turns))]
        prev, node = node, choice
        heading = (node[0] - prev[0], node[1] - prev[1])
    return points, lateral


class _Path:
    """Arclength-parameterized polyline with rounded corners and lane offset."""

    def __init__(self, waypoints, grid: StreetGrid, lateral, turn_radius=DEFAULT_TURN_RADIUS):
        pts = [np.asarray(p, dtype=float) for p in waypoints]
        # apply a constant signed lateral offset (right of travel) per segment
        dirs = [(pts[i + 1] - pts[i]) / np.linalg.norm(pts[i + 1] - pts[i])
                for i in range(len(pts) - 1)]
        d0 = dirs[0]
        offset = float(lateral @ _right_normal(d0))
        offset = float(np.clip(offset, -(grid.street_width / 2 - 0.5), grid.street_width / 2 - 0.5))
        shifted = []
        for i, d in enumerate(dirs):
            n = _right_normal(d)
            a, b = pts[i] + offset * n, pts[i + 1] + offset * n
            shifted.append((a, b))
        corners = []
        for i in range(len(shifted) - 1):
            a0, a1 = shifted[i]
            b0, b1 = shifted[i + 1]
            da, db = dirs[i], dirs[i + 1]
            mat = np.stack([da, -db], axis=1)
            if abs(np.linalg.det(mat)) < 1e-9:
                corners.append(a1)
            else:
                t = np.linalg.solve(mat, b0 - a0)
                corners.append(a0 + t[0] * da)
        verts = [shifted[0][0]] + corners + [shifted[-1][1]]

        self.segments = []  # ("line", p0, d, length) or ("arc", c, r, a0, sweep)
        cursor = verts[0]
        for i in range(len(dirs) - 1):
            d_in, d_out = dirs[i], dirs[i + 1]
            corner = verts[i + 1]
            ang = np.arccos(np.clip(d_in @ d_out, -1.0, 1.0))
            if ang < 1e-6:
                continue
            r = turn_radius
            for _ in range(5):
                cut = r * np.tan(ang / 2)
                in_len = np.linalg.norm(corner - cursor)
                out_len = np.linalg.norm(verts[i + 2] - corner)
                if cut <= 0.45 * min(in_len, out_len) and self._arc_inside(grid, corner, d_in, d_out, r, cut):
                    break
                r *= 0.5
            cut = r * np.tan(ang / 2)
            p_in = corner - cut * d_in
            if np.linalg.norm(p_in - cursor) > 1e-9:
                self.segments.append(("line", cursor, d_in, float(np.linalg.norm(p_in - cursor))))
            turn_sign = np.sign(d_in[0] * d_out[1] - d_in[1] * d_out[0])
            n_in = turn_sign * np.array([-d_in[1], d_in[0]])
            center = p_in + r * n_in
            a0 = np.arctan2(-n_in[1], -n_in[0])
            self.segments.append(("arc", center, r, a0, turn_sign * ang))
            cursor = corner + cut * d_out
        if np.linalg.norm(verts[-1] - cursor) > 1e-9:
            d_last = dirs[-1]
            self.segments.append(("line", cursor, d_last, float(np.linalg.norm(verts[-1] - cursor))))
        lengths = [s[3] if s[0] == "line" else abs(s[4]) * s[2] for s in self.segments]
        self.cum = np.concatenate([[0.0], np.cumsum(lengths)])
        self.total = float(self.cum[-1])

    @staticmethod
    def _arc_inside(grid, corner, d_in, d_out, r, cut):
        turn_sign = np.sign(d_in[0] * d_out[1] - d_in[1] * d_out[0])
        n_in = turn_sign * np.array([-d_in[1], d_in[0]])
        p_in = corner - cut * d_in
        center = p_in + r * n_in
        a0 = np.arctan2(-n_in[1], -n_in[0])
        ang = np.arccos(np.clip(d_in @ d_out, -1.0, 1.0))
        t = a0 + turn_sign * ang * np.linspace(0, 1, 9)
        pts = center + r * np.stack([np.cos(t), np.sin(t)], axis=-1)
        return bool(np.all(grid.contains(pts)))

    def sample(self, s: np.ndarray):
        """Positions (n, 2), tangents (n, 2), and turn flags at arclengths."""
        s = np.clip(s, 0.0, self.total - 1e-9)
        idx = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.segments) - 1)
        pos = np.empty((len(s), 2))
        tan = np.empty((len(s), 2))
        turning = np.zeros(len(s), dtype=bool)
        for i, seg in enumerate(self.segments):
            mask = idx == i
            if not np.any(mask):
                continue
            ds = s[mask] - self.cum[i]
            if seg[0] == "line":
                _, p0, d, _ = seg
                pos[mask] = p0 + ds[:, None] * d
                tan[mask] = d
            else:
                _, c, r, a0, sweep = seg
                a = a0 + np.sign(sweep) * ds / r
                pos[mask] = c + r * np.stack([np.cos(a), np.sin(a)], axis=-1)
                t = np.sign(sweep) * np.stack([-np.sin(a), np.cos(a)], axis=-1)
                tan[mask] = t
                turning[mask] = True
        return pos, tan, turning


def generate_cv_trajectory(scenario: Scenario, speed_range, duration: float,
                           clock: ClockModel, seed: int, ue_id: int = 0,
                           start_xy=None, ue_height: float = DEFAULT_UE_HEIGHT,
                           accel_noise_std: float = DEFAULT_ACCEL_NOISE_STD,
                           turn_probability: float = DEFAULT_TURN_PROBABILITY,
                           mount_pitch: float = DEFAULT_UE_MOUNT_PITCH,
                           tx_power_dbm: float = 10.0) -> UeTrack:
    """Street-following constant-velocity trajectory with drifting clock."""
    v_lo, v_hi = float(speed_range[0]), float(speed_range[1])
    if not 0 < v_lo <= v_hi:
        raise ValueError("speed_range must satisfy 0 < low <= high")
    dt = scenario.numerology.tti_duration
    if duration < dt:
        raise ValueError("duration must cover at least one TTI")
    grid = scenario.grid
    if not grid.street_rects():
        raise ValueError("scenario has no streets")
    rng = np.random.default_rng(np.random.SeedSequence((seed, ue_id, 0x5EED)))

    if start_xy is None:
        ex, ey = grid.extent
        while True:
            cand = rng.uniform((0, 0), (ex, ey))
            if grid.contains(cand):
                start_xy = cand
                break
    start_xy = np.asarray(start_xy, dtype=float)

    n = int(round(duration / dt))
    cruise = rng.uniform(v_lo, v_hi)
    min_len = v_hi * duration * 1.2 + 4 * grid.block_size
    waypoints, lateral = _build_waypoints(grid, rng, start_xy, turn_probability, min_len)
    path = _Path(waypoints, grid, lateral)
    v_turn = min(cruise, np.sqrt(TURN_LATERAL_ACCEL * DEFAULT_TURN_RADIUS))

    # along-track speed: brake ahead of corners, accelerate out, rate-limited
    seg_is_arc = [seg[0] == "arc" for seg in path.segments]
    arc_starts = [path.cum[i] for i, is_arc in enumerate(seg_is_arc) if is_arc]
    speeds = np.empty(n)
    s_axis = np.empty(n)
    noise = rng.standard_normal(n)
    s = 0.0
    v = cruise
    seg_ptr = 0
    arc_ptr = 0
    sigma_v = accel_noise_std * np.sqrt(dt)
    for t in range(n):
        while seg_ptr < len(path.segments) - 1 and s >= path.cum[seg_ptr + 1]:
            seg_ptr += 1
        while arc_ptr < len(arc_starts) and arc_starts[arc_ptr] + 1e-9 < s:
            arc_ptr += 1
        target = cruise
        if seg_is_arc[seg_ptr]:
            target = v_turn
        elif arc_ptr < len(arc_starts) and v > v_turn:
            brake_dist = (v**2 - v_turn**2) / (2.0 * BRAKE_ACCEL)
            if arc_starts[arc_ptr] - s <= brake_dist:
                target = v_turn
        dv = np.clip(target - v, -BRAKE_ACCEL * dt, DRIVE_ACCEL * dt)
        v = v + dv + sigma_v * noise[t]
        v = min(max(v, 0.2 * v_lo), v_hi)
        speeds[t] = v
        s_axis[t] = s
        s += v * dt

    xy, tangents, turning = path.sample(s_axis)
    positions = np.column_stack([xy, np.full(n, ue_height)])
    velocities = np.column_stack([tangents * speeds[:, None], np.zeros(n)])
    yaws = np.arctan2(tangents[:, 1], tangents[:, 0])

    drift_steps = clock.drift_random_walk_std * rng.standard_normal(n)
    drift0 = clock.drift_std * rng.standard_normal()
    offset0 = clock.initial_offset_std * rng.standard_normal()
    drifts = drift0 + np.concatenate([[0.0], np.cumsum(drift_steps[:-1])])
    offsets = offset0 + np.concatenate([[0.0], np.cumsum(drifts[:-1]) * dt])

    return UeTrack(id=ue_id, positions=positions, velocities=velocities, yaws=yaws,
                   clock_offset=offsets, clock_drift=drifts,
                   array=ue_array(scenario.numerology.carrier_frequency),
                   mount_pitch=mount_pitch, tx_power_dbm=tx_power_dbm)


def drop_users_uniform(scenario: Scenario, density: float, seed: int,
                       speed_range=(30 / 3.6, 50 / 3.6), duration: float = 1.0,
                       clock: ClockModel | None = None, **track_kwargs) -> list:
    """Uniform drop over the street area; one CV trajectory per user."""
    if density <= 0:
        raise ValueError("density must be positive")
    grid = scenario.grid
    area_km2 = grid.street_area() / 1e6
    n_users = int(round(density * area_km2))
    clock = clock or ClockModel()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD0B)))
    ex, ey = grid.extent
    tracks = []
    for uid in range(n_users):
        while True:
            cand = rng.uniform((0, 0), (ex, ey))
            if grid.contains(cand):
                break
        tracks.append(generate_cv_trajectory(
            scenario, speed_range, duration, clock, seed=seed, ue_id=uid,
            start_xy=cand, **track_kwargs))
    return tracks


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def scenario_to_dict(scenario: Scenario, tracks: list | None = None) -> dict:
    doc = {
        "schema": SCENARIO_SCHEMA,
        "grid": {
            "n_blocks_x": scenario.grid.n_blocks_x,
            "n_blocks_y": scenario.grid.n_blocks_y,
            "block_size": scenario.grid.block_size,
            "street_width": scenario.grid.street_width,
        },
        "numerology": {
            "carrier_frequency": scenario.numerology.carrier_frequency,
            "subcarrier_spacing": scenario.numerology.subcarrier_spacing,
            "tti_duration": scenario.numerology.tti_duration,
            "n_subcarriers": scenario.numerology.n_subcarriers,
            "pilot_period_ttis": scenario.numerology.pilot_period_ttis,
            "rs_bandwidth": scenario.numerology.rs_bandwidth,
            "dl_fraction": scenario.numerology.dl_fraction,
        },
        "bounds": list(scenario.bounds),
        "access_nodes": [
            {
                "id": an.id,
                "position": [float(v) for v in an.position],
                "orientation": [float(v) for v in an.orientation],
                "tx_power_dbm": an.tx_power_dbm,
                "clock_offset": an.clock_offset,
                "n_elements": an.array.n_elements,
                "polarization_count": an.array.polarization_count,
            }
            for an in scenario.an_list
        ],
    }
    if tracks is not None:
        doc["tracks"] = [
            {
                "id": tr.id,
                "tx_power_dbm": tr.tx_power_dbm,
                "mount_pitch": tr.mount_pitch,
                "positions": tr.positions.round(6).tolist(),
                "velocities": tr.velocities.round(6).tolist(),
                "yaws": tr.yaws.round(9).tolist(),
                "clock_offset": tr.clock_offset.tolist(),
                "clock_drift": tr.clock_drift.tolist(),
            }
            for tr in tracks
        ]
    return doc


def dump_scenario(path, scenario: Scenario, tracks: list | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario, tracks), fh)

"""Procedural 2-D multi-room world with an equirectangular ray-cast renderer.

Rooms are axis-aligned rectangles in a row, connected by door gaps in
the shared walls. Every wall segment carries its own colour and a stripe
texture, and pixels are shaded by distance, so images carry enough
signal to learn metric structure from. Rendering casts one ray per
column; a column's heading is the pose heading plus the column's share
of the full turn. Column angles are computed from a shared per-bin
table, so two renders whose headings differ by an exact number of
column steps produce bitwise-identical images up to column rotation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = ["Pose", "PanoImage", "Room", "World", "make_world", "render_pano"]

CEILING = 3.0      # metres floor to ceiling; camera sits halfway up
WALL_HALF = CEILING / 2
WALL_MARGIN = 0.05  # collision clearance around wall segments

_CEIL_RGB = np.array([0.84, 0.84, 0.88])
_FLOOR_RGB = np.array([0.40, 0.37, 0.34])
_STRIPE_PERIOD = 0.4
_STRIPE_DIM = 0.55
_SHADE_RATE = 0.25


@dataclass(frozen=True)
class Pose:
    position: np.ndarray  # (x, y) metres
    theta: float          # heading, radians in [0, 2*pi)
    room: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class PanoImage:
    pixels: np.ndarray  # H x W x 3 in [0, 1]
    pose: Pose
    rotation_bin: int


@dataclass(frozen=True)
class Room:
    label: int
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, p):
        return self.x0 <= p[0] < self.x1 and self.y0 <= p[1] < self.y1

    def center(self):
        return np.array([(self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2])


class World:
    """Rooms, wall segments with texture ids, and the colour palette."""

    def __init__(self, rooms, wall_a, wall_b, wall_tex, palette, doors, seed):
        self.rooms = list(rooms)
        self.wall_a = np.asarray(wall_a, dtype=float)   # (S, 2) segment starts
        self.wall_b = np.asarray(wall_b, dtype=float)   # (S, 2) segment ends
        self.wall_tex = np.asarray(wall_tex, dtype=int)
        self.palette = np.asarray(palette, dtype=float)
        self.doors = [(float(x), float(y)) for x, y in doors]  # (x, y-center) per doorway
        self.seed = int(seed)
        self._edges = self.wall_b - self.wall_a

    # -- queries -------------------------------------------------------------

    def room_of(self, p):
        """Label of the room containing p, or None outside every room."""
        for room in self.rooms:
            if room.contains(p):
                return room.label
        return None

    def wall_distance(self, p):
        """Distance from p to the nearest wall segment."""
        ap = np.asarray(p, dtype=float) - self.wall_a
        ee = (self._edges ** 2).sum(axis=1)
        t = np.clip((ap * self._edges).sum(axis=1) / np.maximum(ee, 1e-12), 0.0, 1.0)
        closest = self.wall_a + t[:, None] * self._edges
        return float(np.sqrt(((closest - p) ** 2).sum(axis=1)).min())

    def in_free_space(self, p):
        return self.room_of(p) is not None and self.wall_distance(p) >= WALL_MARGIN

    def raycast(self, origin, angles):
        """First wall hit per angle: (distance, segment index, metres along wall)."""
        o = np.asarray(origin, dtype=float)
        d = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (W, 2)
        ao = self.wall_a - o                                    # (S, 2)
        e = self._edges
        denom = d[:, 0, None] * e[None, :, 1] - d[:, 1, None] * e[None, :, 0]
        t_num = ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]
        s_num = ao[None, :, 0] * d[:, 1, None] - ao[None, :, 1] * d[:, 0, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = t_num / denom
            s = s_num / denom
        valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0.0) & (s <= 1.0)
        t = np.where(valid, t, np.inf)
        seg = t.argmin(axis=1)
        cols = np.arange(len(angles))
        t_hit = t[cols, seg]
        if not np.isfinite(t_hit).all():
            raise ValueError("ray escaped the world; pose outside the floor plan?")
        along = s[cols, seg] * np.sqrt((e[seg] ** 2).sum(axis=1))
        return t_hit, seg, along

    def random_free_position(self, rng, room=None, margin=WALL_MARGIN, attempts=5000):
        rooms = self.rooms if room is None else [r for r in self.rooms if r.label == room]
        if not rooms:
            raise ValueError(f"no such room: {room}")
        for _ in range(attempts):
            r = rooms[int(rng.integers(len(rooms)))]
            p = rng.uniform([r.x0, r.y0], [r.x1, r.y1])
            if self.room_of(p) is not None and self.wall_distance(p) >= margin:
                return p
        raise ValueError("could not sample a free position")

    # -- persistence -----------------------------------------------------------

    def to_dict(self):
        return {
            "seed": self.seed,
            "rooms": [[r.label, r.x0, r.y0, r.x1, r.y1] for r in self.rooms],
            "wall_a": self.wall_a.tolist(),
            "wall_b": self.wall_b.tolist(),
            "wall_tex": self.wall_tex.tolist(),
            "palette": self.palette.tolist(),
            "doors": [list(d) for d in self.doors],
        }

    @classmethod
    def from_dict(cls, d):
        rooms = [Room(int(r[0]), *map(float, r[1:])) for r in d["rooms"]]
        return cls(rooms, d["wall_a"], d["wall_b"], d["wall_tex"], d["palette"],
                   d["doors"], d["seed"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def make_world(n_rooms=3, seed=0) -> World:
    """Rooms in a row with one doorway between each neighbouring pair."""
    if n_rooms < 1:
        raise ValueError("need at least one room")
    rng = np.random.default_rng(seed)
    height = float(rng.uniform(3.6, 4.6))
    widths = rng.uniform(3.4, 4.8, size=n_rooms)
    xs = np.concatenate([[0.0], np.cumsum(widths)])

    rooms = [Room(i, xs[i], 0.0, xs[i + 1], height) for i in range(n_rooms)]
    wall_a, wall_b, doors = [], [], []
    # outer shell, one segment per room span so textures vary along the row
    for i in range(n_rooms):
        wall_a.append([xs[i], 0.0]); wall_b.append([xs[i + 1], 0.0])
        wall_a.append([xs[i], height]); wall_b.append([xs[i + 1], height])
    wall_a.append([0.0, 0.0]); wall_b.append([0.0, height])
    wall_a.append([xs[-1], 0.0]); wall_b.append([xs[-1], height])
    # interior walls with a 1 m door gap
    for i in range(1, n_rooms):
        door_y = float(rng.uniform(1.0, height - 1.0))
        doors.append((xs[i], door_y))
        wall_a.append([xs[i], 0.0]); wall_b.append([xs[i], door_y - 0.5])
        wall_a.append([xs[i], door_y + 0.5]); wall_b.append([xs[i], height])

    n_seg = len(wall_a)
    # independent random colours; distinct segments make rooms tell apart
    palette = rng.uniform(0.2, 1.0, size=(n_seg, 3))
    return World(rooms, wall_a, wall_b, np.arange(n_seg), palette, doors, seed)


def _column_angles(theta, width):
    """Per-column world angles, exact under whole-column heading shifts."""
    step = 2 * np.pi / width
    n = int(np.floor(theta / step + 0.5))
    delta = theta - n * step
    idx = (n + np.arange(width)) % width
    return delta + idx * step


def render_pano(world: World, pose: Pose, height=32, width=64, rotation_bins=None) -> PanoImage:
    """Ray-cast an equirectangular panorama at the given pose.

    Column j looks along theta + 2*pi*j/width; rows span pitch from +90
    to -90 degrees. Walls show their segment colour, striped along the
    wall and shaded by distance; ceiling and floor shade with the radial
    distance of the hit point. Raises if the pose is not in free space.
    """
    p = np.asarray(pose.position, dtype=float)
    if not world.in_free_space(p):
        raise ValueError(f"pose {tuple(p)} is inside a wall or outside the world")
    angles = _column_angles(pose.theta, width)
    t, seg, along = world.raycast(p, angles)

    base = world.palette[world.wall_tex[seg]]                    # (W, 3)
    stripe = (np.floor(along / _STRIPE_PERIOD) % 2).astype(bool)
    wall_rgb = base * np.where(stripe, _STRIPE_DIM, 1.0)[:, None]
    wall_rgb = wall_rgb * (1.0 / (1.0 + _SHADE_RATE * t))[:, None]

    pitch = np.pi / 2 - np.pi * (np.arange(height) + 0.5) / height  # (H,)
    tan_pitch = np.tan(pitch)
    on_wall = np.abs(tan_pitch)[:, None] * t[None, :] <= WALL_HALF  # (H, W)
    # radial distance of the ceiling/floor point seen at each pitch
    with np.errstate(divide="ignore"):
        radial = WALL_HALF / np.abs(tan_pitch)
    flat_shade = 1.0 / (1.0 + _SHADE_RATE * radial)                 # (H,)
    ceil_rgb = _CEIL_RGB[None, :] * flat_shade[:, None]             # (H, 3)
    floor_rgb = _FLOOR_RGB[None, :] * flat_shade[:, None]

    above = (pitch > 0)[:, None] & ~on_wall
    below = (pitch <= 0)[:, None] & ~on_wall
    img = np.empty((height, width, 3))
    img[:] = wall_rgb[None, :, :]
    img[above] = np.broadcast_to(ceil_rgb[:, None, :], (height, width, 3))[above]
    img[below] = np.broadcast_to(floor_rgb[:, None, :], (height, width, 3))[below]

    if rotation_bins is None:
        rbin = 0
    else:
        rbin = int(np.floor(pose.theta / (2 * np.pi) * rotation_bins + 0.5)) % rotation_bins
    return PanoImage(pixels=img, pose=pose, rotation_bin=rbin)

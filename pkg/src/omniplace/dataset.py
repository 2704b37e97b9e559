"""Dataset generation and the on-disk sample format.

A dataset directory holds a line-delimited ``manifest`` (one JSON record
per sample, preceded by a metadata record) and one raw pixel file per
sample: 16-byte header (magic, H, W, C as little-endian u32) followed by
float32 pixels. Generation follows the exemplar-sampling protocol: each
seeded exemplar gets nine nearby samples inside a disc plus four
far-but-same-room samples, all at random heading bins, with in-wall
positions rejected and redrawn.

Captured pixels pass through a sensor model (per-sample illumination
gain and Gaussian noise, drawn from the dataset seed) so that raw pixel
proximity alone does not solve retrieval; disable with pixel_noise=0
and gain_range=(1, 1).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .world import Pose, World, render_pano

__all__ = [
    "Sample",
    "SensorModel",
    "generate_dataset",
    "sample_map_and_queries",
    "save_dataset",
    "load_dataset",
    "write_pixels",
    "read_pixels",
]

PIXEL_MAGIC = b"OPIX"
MANIFEST_NAME = "manifest"
DATASET_VERSION = 1

NEAR_RADIUS = 0.5   # metres: "close" samples live in this disc
N_NEAR = 9
N_FAR = 4
_ATTEMPTS = 5000

PIXEL_NOISE = 0.06            # sensor noise sigma
GAIN_RANGE = (0.6, 1.3)       # per-sample illumination scale


@dataclass(frozen=True)
class SensorModel:
    """Per-capture illumination gain and Gaussian pixel noise."""

    pixel_noise: float = PIXEL_NOISE
    gain_range: tuple = GAIN_RANGE

    def apply(self, pixels, rng):
        out = pixels * rng.uniform(*self.gain_range)
        if self.pixel_noise > 0:
            out = out + rng.normal(0.0, self.pixel_noise, pixels.shape)
        return np.clip(out, 0.0, 1.0)


@dataclass
class Sample:
    """One labelled panorama; ``extra`` carries query ground truth fields."""

    image_id: int
    room: int
    position: np.ndarray
    theta: float
    rotation_bin: int
    pixels: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def _bin_theta(rng, bins, width):
    """Random heading snapped to a rotation bin (exact column multiple)."""
    b = int(rng.integers(bins))
    return b * (2 * np.pi / bins), b


def _render_sample(world, image_id, position, theta, height, width, bins,
                   rng=None, pixel_noise=PIXEL_NOISE, gain_range=GAIN_RANGE):
    room = world.room_of(position)
    pose = Pose(position=position, theta=theta, room=room)
    pano = render_pano(world, pose, height, width, rotation_bins=bins)
    pixels = pano.pixels
    if rng is not None and (pixel_noise > 0 or tuple(gain_range) != (1, 1)):
        pixels = SensorModel(pixel_noise, tuple(gain_range)).apply(pixels, rng)
    return Sample(
        image_id=image_id,
        room=room,
        position=np.asarray(position, float),
        theta=float(theta),
        rotation_bin=pano.rotation_bin,
        pixels=pixels.astype(np.float32),
    )


def _near_position(world, rng, center, radius):
    for _ in range(_ATTEMPTS):
        ang = rng.uniform(0, 2 * np.pi)
        rad = radius * np.sqrt(rng.uniform())
        p = np.asarray(center) + rad * np.array([np.cos(ang), np.sin(ang)])
        if world.in_free_space(p):
            return p
    raise ValueError(f"no free position within {radius} m of {tuple(center)}")


def _far_position(world, rng, center, room, min_dist):
    for _ in range(_ATTEMPTS):
        p = world.random_free_position(rng, room=room)
        if np.hypot(*(p - center)) > min_dist:
            return p
    raise ValueError(
        f"room {room} too small to place samples farther than {min_dist} m apart"
    )


def generate_dataset(world: World, n_exemplars, seed, height=32, width=64, bins=16,
                     near_radius=NEAR_RADIUS, pixel_noise=PIXEL_NOISE,
                     gain_range=GAIN_RANGE):
    """Exemplar-centred training samples: 1 + 9 near + 4 far per exemplar."""
    if n_exemplars < 1:
        raise ValueError("need at least one exemplar")
    rng = np.random.default_rng(seed)
    samples = []
    image_id = 0
    labels = [r.label for r in world.rooms]
    for e in range(n_exemplars):
        room = labels[e % len(labels)]
        center = world.random_free_position(rng, room=room)
        positions = [center]
        positions += [_near_position(world, rng, center, near_radius) for _ in range(N_NEAR)]
        positions += [
            _far_position(world, rng, center, room, 2 * near_radius) for _ in range(N_FAR)
        ]
        for p in positions:
            theta, _ = _bin_theta(rng, bins, width)
            samples.append(_render_sample(world, image_id, p, theta, height, width, bins,
                                          rng=rng, pixel_noise=pixel_noise,
                                          gain_range=gain_range))
            image_id += 1
    return samples


def _serpentine(room, inset, lane_gap):
    """Lane polyline sweeping a room; endpoints stay inset from the walls."""
    x0, x1 = room.x0 + inset, room.x1 - inset
    y0, y1 = room.y0 + inset, room.y1 - inset
    n_lanes = max(2, int(np.ceil((x1 - x0) / lane_gap)) + 1)
    pts = []
    for i, x in enumerate(np.linspace(x0, x1, n_lanes)):
        if i % 2 == 0:
            pts += [(x, y0), (x, y1)]
        else:
            pts += [(x, y1), (x, y0)]
    return pts


def _tour_polyline(world, inset=0.45, lane_gap=0.8):
    """Room-covering tour; crosses each doorway through its centre."""
    pts = []
    for i, room in enumerate(world.rooms):
        lane = _serpentine(room, inset, lane_gap)
        if i > 0:
            door_x, door_y = world.doors[i - 1]
            pts += [(door_x - 0.3, door_y), (door_x + 0.3, door_y)]
        pts += lane
    return np.asarray(pts, dtype=float)


def _resample_polyline(pts, spacing):
    deltas = np.diff(pts, axis=0)
    seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    stations = np.arange(0.0, cum[-1], spacing)
    x = np.interp(stations, cum, pts[:, 0])
    y = np.interp(stations, cum, pts[:, 1])
    return np.stack([x, y], axis=1)


def sample_map_and_queries(world: World, map_density, n_queries, seed,
                           height=32, width=64, bins=16, pixel_noise=PIXEL_NOISE,
                           gain_range=GAIN_RANGE):
    """Map exemplars along a covering tour plus uniformly sampled queries.

    Every query record carries the id of and distance to its physically
    closest map exemplar (exhaustive search).
    """
    if map_density <= 0:
        raise ValueError("map density must be positive")
    rng = np.random.default_rng(seed)
    stations = _resample_polyline(_tour_polyline(world), map_density)
    stations = [p for p in stations if world.in_free_space(p)]

    map_samples = []
    for i, p in enumerate(stations):
        theta, _ = _bin_theta(rng, bins, width)
        map_samples.append(_render_sample(world, i, p, theta, height, width, bins,
                                          rng=rng, pixel_noise=pixel_noise,
                                          gain_range=gain_range))

    positions = np.array([s.position for s in map_samples])
    queries = []
    for q in range(n_queries):
        p = world.random_free_position(rng)
        theta = float(rng.uniform(0, 2 * np.pi))
        sample = _render_sample(world, q, p, theta, height, width, bins,
                                rng=rng, pixel_noise=pixel_noise, gain_range=gain_range)
        dists = np.hypot(*(positions - p).T)
        gt = int(dists.argmin())
        sample.extra = {"gt_id": map_samples[gt].image_id, "gt_dist": float(dists[gt])}
        queries.append(sample)
    return map_samples, queries


# -- pixel files -----------------------------------------------------------------


def write_pixels(path, pixels):
    arr = np.ascontiguousarray(pixels, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"pixels must be H x W x C, got shape {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(PIXEL_MAGIC + struct.pack("<III", h, w, c))
        fh.write(arr.tobytes())


def read_pixels(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != PIXEL_MAGIC:
            raise ValueError(f"{path}: not a pixel file")
        h, w, c = struct.unpack("<III", head[4:])
        body = fh.read()
    if len(body) != 4 * h * w * c:
        raise ValueError(f"{path}: pixel payload truncated")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, c).copy()


# -- dataset directories -----------------------------------------------------------


def save_dataset(directory, samples, kind, seed, config_hash=""):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    h, w, c = samples[0].pixels.shape
    meta = {
        "format": "omniplace-dataset",
        "version": DATASET_VERSION,
        "kind": kind,
        "seed": seed,
        "config_hash": config_hash,
        "height": int(h),
        "width": int(w),
        "channels": int(c),
        "count": len(samples),
    }
    lines = [json.dumps(meta, sort_keys=True)]
    for s in samples:
        name = f"{s.image_id:06d}.opix"
        write_pixels(directory / name, s.pixels)
        rec = {
            "id": s.image_id,
            "room": s.room,
            "x": float(s.position[0]),
            "y": float(s.position[1]),
            "theta": s.theta,
            "rotation_bin": s.rotation_bin,
            "file": name,
        }
        rec.update(s.extra)
        lines.append(json.dumps(rec, sort_keys=True))
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def load_dataset(directory, with_pixels=True):
    """Returns (meta dict, list of Samples)."""
    directory = Path(directory)
    text = (directory / MANIFEST_NAME).read_text().splitlines()
    if not text:
        raise ValueError(f"{directory}: empty manifest")
    meta = json.loads(text[0])
    if meta.get("format") != "omniplace-dataset":
        raise ValueError(f"{directory}: not a dataset manifest")
    if meta.get("version") != DATASET_VERSION:
        raise ValueError(f"{directory}: unsupported dataset version {meta.get('version')}")
    samples = []
    for line in text[1:]:
        rec = json.loads(line)
        pixels = read_pixels(directory / rec["file"]) if with_pixels else None
        known = {"id", "room", "x", "y", "theta", "rotation_bin", "file"}
        samples.append(
            Sample(
                image_id=rec["id"],
                room=rec["room"],
                position=np.array([rec["x"], rec["y"]]),
                theta=rec["theta"],
                rotation_bin=rec["rotation_bin"],
                pixels=pixels,
                extra={k: v for k, v in rec.items() if k not in known},
            )
        )
    if len(samples) != meta["count"]:
        raise ValueError(f"{directory}: manifest count {meta['count']} != {len(samples)} records")
    return meta, samples

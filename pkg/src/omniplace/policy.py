"""Local search navigation over the feature-distance potential field.

The agent first orients itself to the target's capture heading using the
relative-rotation estimate, then repeats: evaluate the feature distance
to the target at every free cell of a square grid centred on itself,
and move to the cell with the smallest distance. Success is reaching
the target position within tolerance inside the step budget; selecting
the current cell twice in a row counts as stuck.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .omni import rolling_distance
from .world import Pose, render_pano

__all__ = ["PolicyConfig", "Episode", "orient", "local_search", "navigate", "sample_episode"]


@dataclass(frozen=True)
class PolicyConfig:
    grid: int = 9             # odd; cells per side
    spacing: float = 0.25     # metres between cells
    tolerance: float = 0.3    # success radius, metres
    budget: int = 100         # movement steps
    orient: bool = True

    def __post_init__(self):
        if self.grid % 2 == 0 or self.grid < 1:
            raise ValueError(f"grid size must be odd and positive, got {self.grid}")
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")


@dataclass
class Episode:
    start: Pose
    target_id: int
    trajectory: list = field(default_factory=list)
    feature_evals: int = 0
    steps: int = 0
    success: bool = False
    final_distance: float = float("inf")


def _feature_of(model, world, position, heading, sensor=None, sensor_rng=None):
    room = world.room_of(position)
    pano = render_pano(world, Pose(np.asarray(position, float), heading, room),
                       model.config.input_h, model.config.input_w)
    pixels = pano.pixels
    if sensor is not None:
        pixels = sensor.apply(pixels, sensor_rng)
    return model.extract(pixels).values


def orient(heading, current_feature, target_feature, width=None):
    """Rotate the heading by the estimated relative rotation to the target."""
    w = current_feature.shape[-2] if width is None else width
    rd = rolling_distance(current_feature, target_feature)
    return float((heading + rd.r_hat * (2 * np.pi / w)) % (2 * np.pi)), rd.r_hat


def local_search(world, model, pose, target_feature, config, distance_fn=None,
                 sensor=None, sensor_rng=None):
    """Potential field on the grid around ``pose``: (positions, D values).

    In-wall cells are skipped (NaN in the value grid). ``distance_fn``
    replaces the render-and-compare pipeline when supplied (used to
    inject oracle distances in tests). ``sensor`` applies the capture
    noise model to the live renders.
    """
    g = config.grid
    half = g // 2
    values = np.full((g, g), np.nan)
    positions = np.zeros((g, g, 2))
    evals = 0
    for i in range(g):
        for j in range(g):
            cell = np.asarray(pose.position, float) + np.array(
                [(j - half) * config.spacing, (i - half) * config.spacing]
            )
            positions[i, j] = cell
            if not world.in_free_space(cell):
                continue
            if distance_fn is not None:
                values[i, j] = float(distance_fn(cell))
            else:
                feat = _feature_of(model, world, cell, pose.theta, sensor, sensor_rng)
                if model.config.roll:
                    values[i, j] = rolling_distance(feat, target_feature).d_min
                else:
                    values[i, j] = float(np.sqrt(((feat - target_feature) ** 2).sum()))
            evals += 1
    if np.isnan(values).all():
        raise ValueError(f"no reachable grid cell around {tuple(pose.position)}")
    return positions, values, evals


def _select_cell(values, rng):
    if rng is None:  # greedy: smallest D, ties to the first cell row-major
        flat = np.where(np.isnan(values), np.inf, values)
        return np.unravel_index(int(flat.argmin()), values.shape)
    free = np.argwhere(~np.isnan(values))
    return tuple(free[int(rng.integers(len(free)))])


def navigate(world, model, map_index, start_pose, target_id, config=None,
             rng=None, distance_fn=None, log_path=None, sensor=None,
             sensor_seed=0) -> Episode:
    """Run one episode toward a stored exemplar; returns the Episode record.

    ``rng`` switches the uniform-random-move baseline on (it picks any
    free grid cell each step instead of descending the potential field).
    ``sensor`` applies the capture noise model to live renders, seeded
    by ``sensor_seed`` so episodes stay reproducible.
    """
    config = config or PolicyConfig()
    target = map_index.record(target_id)  # KeyError for unknown ids
    episode = Episode(start=start_pose, target_id=target_id, trajectory=[start_pose])
    position = np.asarray(start_pose.position, float)
    heading = float(start_pose.theta)
    sensor_rng = np.random.default_rng(sensor_seed) if sensor is not None else None

    def judge():
        return float(np.hypot(*(position - target.position)))

    log_lines = []
    episode.final_distance = judge()
    if episode.final_distance <= config.tolerance:
        episode.success = True
        _write_log(log_path, log_lines)
        return episode

    if config.orient and distance_fn is None:
        feat = _feature_of(model, world, position, heading, sensor, sensor_rng)
        episode.feature_evals += 1
        heading, _ = orient(heading, feat, target.feature)

    stalled = 0
    while episode.steps < config.budget:
        pose = Pose(position, heading, world.room_of(position))
        positions, values, evals = local_search(
            world, model, pose, target.feature, config, distance_fn=distance_fn,
            sensor=sensor, sensor_rng=sensor_rng,
        )
        episode.feature_evals += evals
        cell = _select_cell(values, rng)
        chosen = positions[cell]
        if np.allclose(chosen, position):
            stalled += 1
            if stalled >= 2:
                break  # stuck on a local minimum
        else:
            stalled = 0
        position = chosen
        episode.steps += 1
        episode.trajectory.append(Pose(position.copy(), heading, world.room_of(position)))
        log_lines.append(
            json.dumps(
                {
                    "step": episode.steps,
                    "x": float(position[0]),
                    "y": float(position[1]),
                    "heading": heading,
                    "d": float(values[cell]),
                },
                sort_keys=True,
            )
        )
        episode.final_distance = judge()
        if episode.final_distance <= config.tolerance:
            episode.success = True
            break
    _write_log(log_path, log_lines)
    return episode


def _write_log(log_path, lines):
    if log_path is None:
        return
    with open(log_path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def sample_episode(world, map_index, rng, min_dist=1.0, max_dist=3.0, attempts=5000):
    """Pick a target exemplar and a free start pose between the two radii."""
    ids = [r.id for r in map_index.records]
    for _ in range(attempts):
        target = map_index.record(ids[int(rng.integers(len(ids)))])
        p = world.random_free_position(rng)
        d = float(np.hypot(*(p - target.position)))
        if min_dist <= d <= max_dist:
            theta = float(rng.integers(16)) * (2 * np.pi / 16)
            return Pose(p, theta, world.room_of(p)), target.id
    raise ValueError("could not sample an episode start within the distance band")

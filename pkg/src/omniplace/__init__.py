"""Rotation-invariant panorama place recognition on a synthetic world.

Pipeline: a ray-cast simulator renders equirectangular panoramas of a
procedural multi-room world; a small convolutional encoder with
wrap-around padding turns them into rotation-indexed descriptors; a
position-driven lifted embedding loss makes descriptor distance track
physical distance; an exemplar map retrieves the closest stored place;
and a local-search policy navigates toward it.
"""

from .kernels import BACKEND as kernel_backend
from .model import FeatureMap, ModelConfig, OmniEncoder, load_weights, save_weights, train
from .mapstore import MapIndex, build_map, load_map, save_map
from .omni import PadMode, gaussian_rotation_mask, roll_branch, rolling_distance
from .policy import Episode, PolicyConfig, navigate
from .tensor import Tensor, conv2d, finite_diff_check
from .world import Pose, World, make_world, render_pano

__version__ = "0.1.0"

__all__ = [
    "kernel_backend",
    "FeatureMap",
    "ModelConfig",
    "OmniEncoder",
    "load_weights",
    "save_weights",
    "train",
    "MapIndex",
    "build_map",
    "load_map",
    "save_map",
    "PadMode",
    "gaussian_rotation_mask",
    "roll_branch",
    "rolling_distance",
    "Episode",
    "PolicyConfig",
    "navigate",
    "Tensor",
    "conv2d",
    "finite_diff_check",
    "Pose",
    "World",
    "make_world",
    "render_pano",
    "__version__",
]

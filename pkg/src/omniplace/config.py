"""Run configuration: INI file schema, seed fan-out, and config hashing.

One global seed reproduces a whole pipeline: every stage derives its own
sub-seed as the first 8 bytes of sha256("<seed>/<stage label>"), so
world generation, dataset sampling, training and evaluation stay
independent yet fully determined by the single number.

Config files are INI ("#" comments allowed). All keys are optional and
fall back to the defaults below; command-line flags override file
values. Schema:

    [run]     seed, out_dir
    [world]   rooms
    [render]  height, width
    [model]   convs (e.g. "k3c16p2,k3c32p2,k3c32"), width, depth,
              vertical_pad (pole_wrap|zero), circular, roll, continuous,
              normalize, sigma, alpha
    [train]   learning_rate, momentum, iterations, batch_size
    [policy]  grid, spacing, tolerance, budget, orient
    [eval]    tolerances ("start:stop:step"), exemplars, map_density,
              queries, episodes
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .model import ConvSpec, ModelConfig
from .policy import PolicyConfig

__all__ = ["RunConfig", "derive_seed", "load_config", "parse_convs"]


def derive_seed(root, label) -> int:
    """Documented fan-out: first 8 bytes of sha256('<root>/<label>')."""
    digest = hashlib.sha256(f"{root}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def parse_convs(text):
    """Parse "k3c16p2,k3c32s1" into ConvSpecs (k=kernel, c=channels, s=stride, p=pool)."""
    specs = []
    for chunk in text.split(","):
        chunk = chunk.strip().lower()
        if not chunk:
            continue
        vals = {"k": 3, "s": 1, "p": 1}
        key, num = None, ""

        def flush():
            if key is not None:
                if not num:
                    raise ValueError(f"bad conv spec {chunk!r}")
                vals[key] = int(num)

        for ch in chunk:
            if ch.isdigit():
                num += ch
            elif ch in "kcsp":
                flush()
                key, num = ch, ""
            else:
                raise ValueError(f"bad conv spec {chunk!r}")
        flush()
        if "c" not in vals:
            raise ValueError(f"conv spec {chunk!r} is missing channels (c)")
        specs.append(ConvSpec(kernel=vals["k"], channels=vals["c"],
                              stride=vals["s"], pool=vals["p"]))
    if not specs:
        raise ValueError("empty conv stack")
    return tuple(specs)


def _convs_to_text(convs):
    out = []
    for c in convs:
        s = f"k{c.kernel}c{c.channels}"
        if c.stride != 1:
            s += f"s{c.stride}"
        if c.pool != 1:
            s += f"p{c.pool}"
        out.append(s)
    return ",".join(out)


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    rooms: int = 3
    height: int = 32
    width: int = 64
    convs: str = "k3c16p2,k3c32p2,k3c32"
    feature_width: int = 16
    feature_depth: int = 32
    vertical_pad: str = "pole_wrap"
    circular: bool = True
    roll: bool = True
    continuous: bool = True
    normalize: bool = False
    sigma: float = 1.0
    alpha: float = 1.0
    learning_rate: float = 1e-3
    momentum: float = 0.9
    iterations: int = 2000
    batch_size: int = 8
    grid: int = 9
    spacing: float = 0.25
    tolerance: float = 0.3
    budget: int = 100
    orient: bool = True
    tolerances: str = "0:1:0.1"
    exemplars: int = 12
    map_density: float = 0.5
    queries: int = 200
    episodes: int = 50

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]

    def model_config(self, seed=None) -> ModelConfig:
        return ModelConfig(
            input_h=self.height,
            input_w=self.width,
            input_c=3,
            convs=parse_convs(self.convs),
            width=self.feature_width,
            depth=self.feature_depth,
            vertical_pad=self.vertical_pad,
            circular=self.circular,
            roll=self.roll,
            continuous=self.continuous,
            normalize=self.normalize,
            sigma=self.sigma,
            alpha=self.alpha,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            iterations=self.iterations,
            batch_size=self.batch_size,
            seed=self.seed if seed is None else seed,
        )

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(grid=self.grid, spacing=self.spacing,
                            tolerance=self.tolerance, budget=self.budget,
                            orient=self.orient)

    def tolerance_grid(self):
        parts = self.tolerances.split(":")
        if len(parts) != 3:
            raise ValueError(f"tolerances must be start:stop:step, got {self.tolerances!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"bad tolerance grid {self.tolerances!r}")
        return tuple(np.round(np.arange(start, stop + 1e-9, step), 6))


_SECTIONS = {
    "run": ("seed", "out_dir"),
    "world": ("rooms",),
    "render": ("height", "width"),
    "model": ("convs", "feature_width", "feature_depth", "vertical_pad", "circular",
              "roll", "continuous", "normalize", "sigma", "alpha"),
    "train": ("learning_rate", "momentum", "iterations", "batch_size"),
    "policy": ("grid", "spacing", "tolerance", "budget", "orient"),
    "eval": ("tolerances", "exemplars", "map_density", "queries", "episodes"),
}

# accept width/depth as aliases inside [model]
_ALIASES = {("model", "width"): "feature_width", ("model", "depth"): "feature_depth"}


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the INI file, then explicit overrides."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        read = parser.read(path)
        if not read:
            raise ValueError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ValueError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                field_name = _ALIASES.get((section, key), key)
                if field_name not in _SECTIONS[section]:
                    raise ValueError(f"unknown config key {key!r} in [{section}]")
                _assign(cfg, field_name, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if not hasattr(cfg, key):
            raise ValueError(f"unknown config field {key!r}")
        setattr(cfg, key, value)
    return cfg


def _assign(cfg, name, raw):
    current = getattr(cfg, name)
    if isinstance(current, bool):
        lowered = str(raw).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            value = True
        elif lowered in ("0", "false", "no", "off"):
            value = False
        else:
            raise ValueError(f"config field {name!r}: not a boolean: {raw!r}")
    elif isinstance(current, int):
        value = int(raw)
    elif isinstance(current, float):
        value = float(raw)
    else:
        value = str(raw)
    setattr(cfg, name, value)

"""Panorama encoder: a small conv stack with wrap-around padding.

Every convolution pads circularly in the horizontal direction (the two
image edges are physically adjacent), so a horizontal rotation of the
input permutes the output columns instead of distorting them. The stack
ends by averaging the remaining rows, producing a ``width x depth``
descriptor whose column axis indexes discretised headings.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .loss import FeatureBatch, batch_builder, mine_pairs, continuous_lifted_loss, original_lifted_loss
from .omni import PadMode
from .tensor import Tensor

log = logging.getLogger(__name__)

__all__ = [
    "ConvSpec",
    "ModelConfig",
    "FeatureMap",
    "OmniEncoder",
    "TrainingDiverged",
    "train",
    "save_weights",
    "load_weights",
    "desk_config",
    "paper_scale_config",
]

WEIGHTS_MAGIC = b"OCNN"
WEIGHTS_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    """One block: conv (odd kernel) -> bias -> relu -> optional max pool."""

    kernel: int = 3
    channels: int = 16
    stride: int = 1
    pool: int = 1


@dataclass
class ModelConfig:
    input_h: int = 32
    input_w: int = 64
    input_c: int = 3
    convs: tuple = (ConvSpec(3, 16, 1, 2), ConvSpec(3, 32, 1, 2), ConvSpec(3, 32, 1, 1))
    width: int = 16
    depth: int = 32
    vertical_pad: str = "pole_wrap"
    circular: bool = True      # circular padding on/off (off = zero padding)
    roll: bool = True          # rotation-searched distance at retrieval time
    continuous: bool = True    # pseudo-negative mining + rotation mask in the loss
    normalize: bool = False    # L2-normalise feature maps before distances
    sigma: float = 1.0
    alpha: float = 1.0
    learning_rate: float = 1e-3
    momentum: float = 0.9
    iterations: int = 2000
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.convs, list):
            self.convs = tuple(
                c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in self.convs
            )
        stride = self.total_stride()
        if any(c.stride < 1 or c.pool < 1 for c in self.convs):
            raise ValueError("conv strides and pools must be >= 1")
        if self.input_w % stride:
            raise ValueError(f"width {self.input_w} not divisible by total stride {stride}")
        if self.input_w // stride != self.width:
            raise ValueError(
                f"feature width {self.width} inconsistent with input {self.input_w} / stride {stride}"
            )
        if self.convs[-1].channels != self.depth:
            raise ValueError(
                f"feature depth {self.depth} != last conv channels {self.convs[-1].channels}"
            )

    def total_stride(self):
        s = 1
        for c in self.convs:
            s *= c.stride * c.pool
        return s

    def to_dict(self):
        d = asdict(self)
        d["convs"] = [asdict(c) for c in self.convs]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["convs"] = tuple(ConvSpec(**c) for c in d["convs"])
        return cls(**d)


def desk_config(**overrides) -> ModelConfig:
    """Small configuration trainable on a laptop core: 32x64x3 -> 16x32."""
    return ModelConfig(**overrides)


def paper_scale_config() -> ModelConfig:
    """Full-size preset (384x640 input, 20 heading bins); shape-validated only."""
    return ModelConfig(
        input_h=384,
        input_w=640,
        input_c=3,
        convs=(
            ConvSpec(3, 8, 1, 2),
            ConvSpec(3, 16, 1, 2),
            ConvSpec(3, 32, 1, 2),
            ConvSpec(3, 64, 1, 2),
            ConvSpec(3, 64, 1, 2),
        ),
        width=20,
        depth=64,
    )


@dataclass(frozen=True)
class FeatureMap:
    """width x depth descriptor plus the hash of the model that made it."""

    values: np.ndarray
    model_hash: str

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise ValueError("feature map contains non-finite values")


class OmniEncoder:
    """The conv stack; owns its parameters and the forward pass."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = []
        self._names = []
        rng = np.random.default_rng(config.seed)
        cin = config.input_c
        for li, spec in enumerate(config.convs):
            fan_in = spec.kernel * spec.kernel * cin
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(spec.kernel, spec.kernel, cin, spec.channels))
            b = np.zeros(spec.channels)
            self.params.append(Tensor(w, requires_grad=True, dtype=self.dtype))
            self._names.append(f"conv{li}.weight")
            self.params.append(Tensor(b, requires_grad=True, dtype=self.dtype))
            self._names.append(f"conv{li}.bias")
            cin = spec.channels

    # -- forward --------------------------------------------------------------

    def forward_tensor(self, x: Tensor) -> Tensor:
        """Image tensor (H x W x C) -> feature tensor (width x depth)."""
        cfg = self.config
        if x.shape != (cfg.input_h, cfg.input_w, cfg.input_c):
            raise ValueError(
                f"input {x.shape} does not match configured size "
                f"{(cfg.input_h, cfg.input_w, cfg.input_c)}"
            )
        if cfg.circular:
            pad = PadMode(vertical=cfg.vertical_pad)
        else:
            pad = "zero"
        h = x
        for li, spec in enumerate(cfg.convs):
            w, b = self.params[2 * li], self.params[2 * li + 1]
            h = T.conv2d(h, w, (spec.stride, spec.stride), pad)
            h = T.bias_add(h, b)
            h = T.relu(h)
            if spec.pool > 1:
                h = T.maxpool2d(h, (spec.pool, spec.pool))
        feat = T.mean_axis0(h)  # collapse remaining height -> (width, depth)
        if cfg.normalize:
            norm = T.sqrt(T.add(T.tsum(T.square(feat)), 1e-12))
            feat = T.mul(feat, T.reciprocal(norm))
        return feat

    def extract(self, pixels) -> FeatureMap:
        """Forward pass on raw pixels; returns a detached FeatureMap."""
        arr = np.asarray(pixels, dtype=self.dtype)
        feat = self.forward_tensor(Tensor(arr))
        return FeatureMap(values=feat.data.copy(), model_hash=self.model_hash())

    # -- identity ---------------------------------------------------------------

    def model_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        for p in self.params:
            h.update(np.ascontiguousarray(p.data, dtype=np.float32).tobytes())
        return h.hexdigest()[:16]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self):
        return [p.data for p in self.params]

    def load_arrays(self, arrays):
        if len(arrays) != len(self.params):
            raise ValueError("parameter count mismatch")
        for p, a in zip(self.params, arrays):
            if p.shape != a.shape:
                raise ValueError(f"parameter shape mismatch: {p.shape} vs {a.shape}")
            p.data = a.astype(self.dtype)


class SGD:
    """Plain momentum SGD over a parameter list."""

    def __init__(self, params, lr, momentum=0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data - (p.dtype.type(self.lr) * v).astype(p.dtype)


def train(model: OmniEncoder, dataset, iterations=None, log_every=100, on_step=None):
    """Metric-learning loop; returns the per-iteration loss curve.

    Each step samples a batch, runs the encoder on every image, mines
    pairs from the pose labels and descends the configured loss. Batches
    are derived deterministically from the model seed and step index.
    """
    cfg = model.config
    iters = cfg.iterations if iterations is None else iterations
    opt = SGD(model.params, cfg.learning_rate, cfg.momentum)
    curve = []
    for step in range(iters):
        batch = batch_builder(dataset, cfg.batch_size, seed=(cfg.seed, step))
        feats = [model.forward_tensor(Tensor(s.pixels, dtype=model.dtype)) for s in batch]
        if any(not np.isfinite(f.data).all() for f in feats):
            raise TrainingDiverged(f"non-finite features at iteration {step}")
        fb = FeatureBatch(feats, [s.rotation_bin for s in batch])
        samples = [_as_labeled(s, i) for i, s in enumerate(batch)]
        pairs = mine_pairs(samples, seed=(cfg.seed, step, 1))
        if cfg.continuous:
            loss = continuous_lifted_loss(pairs, fb, alpha=cfg.alpha, sigma=cfg.sigma)
        elif cfg.roll:
            pairs.pseudo_negatives = {p: ([], []) for p in pairs.positives}
            loss = continuous_lifted_loss(pairs, fb, alpha=cfg.alpha, sigma=cfg.sigma)
        else:
            loss = original_lifted_loss(pairs, fb, alpha=cfg.alpha)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at iteration {step}")
        curve.append(value)
        model.zero_grad()
        loss.backward()
        opt.step()
        if log_every and step % log_every == 0:
            log.info("iter %5d  loss %.5f", step, value)
        if on_step is not None:
            on_step(step, value)
    return curve


def _as_labeled(sample, index):
    from .loss import LabeledSample

    return LabeledSample(
        image_id=getattr(sample, "image_id", index),
        room=sample.room,
        position=np.asarray(sample.position, dtype=float),
        rotation_bin=sample.rotation_bin,
    )


# -- persistence -----------------------------------------------------------------


def _checksum(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()[:8]


def save_weights(model: OmniEncoder, path, config_hash=""):
    """Magic, version, config echo, float32 blobs in declaration order, checksum."""
    header = {
        "model": model.config.to_dict(),
        "config_hash": config_hash,
        "seed": model.config.seed,
    }
    config_blob = json.dumps(header, sort_keys=True).encode()
    body = bytearray()
    body += WEIGHTS_MAGIC
    body += struct.pack("<I", WEIGHTS_VERSION)
    body += struct.pack("<I", len(config_blob))
    body += config_blob
    for p in model.params:
        body += np.ascontiguousarray(p.data, dtype="<f4").tobytes()
    body += _checksum(bytes(body))
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_weights(path, expected_config: ModelConfig | None = None) -> OmniEncoder:
    """Rebuild a model from a weight file; refuses corrupt or mismatched files."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 24 or blob[:4] != WEIGHTS_MAGIC:
        raise ValueError(f"{path}: not a weight file (bad magic)")
    if _checksum(blob[:-8]) != blob[-8:]:
        raise ValueError(f"{path}: checksum mismatch (file corrupt or truncated)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != WEIGHTS_VERSION:
        raise ValueError(f"{path}: unsupported weight format version {version}")
    n = struct.unpack("<I", blob[8:12])[0]
    header = json.loads(blob[12 : 12 + n].decode())
    config = ModelConfig.from_dict(header["model"])
    if expected_config is not None and config.to_dict() != expected_config.to_dict():
        raise ValueError(f"{path}: stored config does not match the requested model config")
    model = OmniEncoder(config)
    offset = 12 + n
    arrays = []
    for p in model.params:
        count = p.data.size
        end = offset + 4 * count
        arrays.append(np.frombuffer(blob[offset:end], dtype="<f4").reshape(p.shape).copy())
        offset = end
    if offset != len(blob) - 8:
        raise ValueError(f"{path}: unexpected trailing bytes")
    model.load_arrays(arrays)
    return model

"""Exemplar map: stored descriptors with poses, and closest-place retrieval.

Retrieval is an exhaustive scan: the query descriptor is compared to
every stored descriptor with the rotation-searched distance, and the
record with the minimal distance is the predicted closest place. Maps
remember the hash of the model that produced their features; queries
from a different model are refused rather than silently mixed.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .model import FeatureMap
from .omni import rolling_distance

__all__ = ["ExemplarRecord", "MapIndex", "QueryResult", "build_map", "save_map", "load_map"]

MAP_MAGIC = b"OMAP"
MAP_VERSION = 1


@dataclass(frozen=True)
class ExemplarRecord:
    id: int
    room: int
    position: np.ndarray
    rotation_bin: int
    feature: np.ndarray  # (w, d) float32


@dataclass(frozen=True)
class QueryResult:
    best_id: int
    distance: float
    r_hat: int
    ranking: list  # (id, distance, r_hat) sorted by distance, ties by id


class MapIndex:
    def __init__(self, records, model_hash, config_hash="", seed=0):
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate exemplar ids in map")
        shapes = {r.feature.shape for r in records}
        if len(shapes) > 1:
            raise ValueError(f"inconsistent feature shapes in map: {sorted(shapes)}")
        self.records = list(records)
        self.model_hash = model_hash
        self.config_hash = config_hash
        self.seed = seed

    def __len__(self):
        return len(self.records)

    def record(self, exemplar_id) -> ExemplarRecord:
        for r in self.records:
            if r.id == exemplar_id:
                return r
        raise KeyError(f"no exemplar with id {exemplar_id}")

    def query(self, feature: FeatureMap | np.ndarray, use_roll=True) -> QueryResult:
        """Closest stored exemplar by (rolling) feature distance.

        With ``use_roll`` off only the unshifted alignment is compared,
        matching models trained without roll branching.
        """
        if not self.records:
            raise ValueError("query against an empty map")
        if isinstance(feature, FeatureMap):
            if feature.model_hash != self.model_hash:
                raise ValueError(
                    f"model hash mismatch: query {feature.model_hash} vs map {self.model_hash}"
                )
            values = feature.values
        else:
            values = np.asarray(feature)
        ranking = []
        for r in self.records:
            if use_roll:
                rd = rolling_distance(values, r.feature)
                ranking.append((r.id, rd.d_min, rd.r_hat))
            else:
                d = float(np.sqrt(((values - r.feature) ** 2).sum()))
                ranking.append((r.id, d, 0))
        ranking.sort(key=lambda t: (t[1], t[0]))
        best = ranking[0]
        return QueryResult(best_id=best[0], distance=best[1], r_hat=best[2], ranking=ranking)


def build_map(model, samples, config_hash="", seed=0) -> MapIndex:
    """One forward pass per exemplar sample; keeps poses alongside features."""
    if not samples:
        raise ValueError("cannot build a map from zero exemplars")
    records = []
    for s in samples:
        feat = model.extract(s.pixels)
        records.append(
            ExemplarRecord(
                id=s.image_id,
                room=s.room,
                position=np.asarray(s.position, float),
                rotation_bin=s.rotation_bin,
                feature=feat.values.astype(np.float32),
            )
        )
    return MapIndex(records, model.model_hash(), config_hash=config_hash, seed=seed)


# -- persistence ---------------------------------------------------------------


def _checksum(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()[:8]


def save_map(index: MapIndex, path):
    body = bytearray()
    body += MAP_MAGIC
    body += struct.pack("<I", MAP_VERSION)
    hash_blob = index.model_hash.encode()
    body += struct.pack("<I", len(hash_blob))
    body += hash_blob
    meta = json.dumps({"config_hash": index.config_hash, "seed": index.seed},
                      sort_keys=True).encode()
    body += struct.pack("<I", len(meta))
    body += meta
    body += struct.pack("<I", len(index.records))
    for r in index.records:
        head = json.dumps(
            {
                "id": r.id,
                "room": r.room,
                "x": float(r.position[0]),
                "y": float(r.position[1]),
                "rotation_bin": r.rotation_bin,
                "w": int(r.feature.shape[0]),
                "d": int(r.feature.shape[1]),
            },
            sort_keys=True,
        ).encode()
        body += struct.pack("<I", len(head))
        body += head
        body += np.ascontiguousarray(r.feature, dtype="<f4").tobytes()
    body += _checksum(bytes(body))
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_map(path) -> MapIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20 or blob[:4] != MAP_MAGIC:
        raise ValueError(f"{path}: not a map file (bad magic)")
    if _checksum(blob[:-8]) != blob[-8:]:
        raise ValueError(f"{path}: checksum mismatch (file corrupt or truncated)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != MAP_VERSION:
        raise ValueError(f"{path}: unsupported map version {version}")
    off = 8
    n = struct.unpack("<I", blob[off : off + 4])[0]
    off += 4
    model_hash = blob[off : off + n].decode()
    off += n
    n = struct.unpack("<I", blob[off : off + 4])[0]
    off += 4
    meta = json.loads(blob[off : off + n].decode())
    off += n
    count = struct.unpack("<I", blob[off : off + 4])[0]
    off += 4
    records = []
    for _ in range(count):
        n = struct.unpack("<I", blob[off : off + 4])[0]
        off += 4
        head = json.loads(blob[off : off + n].decode())
        off += n
        size = head["w"] * head["d"]
        feat = np.frombuffer(blob[off : off + 4 * size], dtype="<f4")
        feat = feat.reshape(head["w"], head["d"]).copy()
        off += 4 * size
        records.append(
            ExemplarRecord(
                id=head["id"],
                room=head["room"],
                position=np.array([head["x"], head["y"]]),
                rotation_bin=head["rotation_bin"],
                feature=feat,
            )
        )
    if off != len(blob) - 8:
        raise ValueError(f"{path}: unexpected trailing bytes")
    return MapIndex(records, model_hash, config_hash=meta.get("config_hash", ""),
                    seed=meta.get("seed", 0))

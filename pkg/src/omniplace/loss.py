"""Metric-embedding losses driven by physical distance.

The training signal pairs panoramas by room and position. Same-room
pairs are contracted; cross-room pairs are pushed apart; and, in the
continuous variant, same-room pairs farther apart than the current
positive ("pseudo-negatives") are pushed apart as well, so that feature
distance learns to rank real-world distance instead of only separating
rooms. The positive term is rotation-aware: all cyclic shifts of one
feature map are compared against the other and weighted by a circular
Gaussian centred on the ground-truth relative rotation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .omni import gaussian_rotation_mask, rolling_l2
from .tensor import Tensor

log = logging.getLogger(__name__)

__all__ = [
    "LabeledSample",
    "PairSets",
    "mine_pairs",
    "continuous_lifted_loss",
    "original_lifted_loss",
    "batch_builder",
]


@dataclass
class LabeledSample:
    """One training sample: identity, pose labels and (optionally) its feature."""

    image_id: int
    room: int
    position: np.ndarray  # (x, y) metres
    rotation_bin: int
    feature: Tensor | None = None


@dataclass
class PairSets:
    """Mined index pairs for one batch.

    ``pseudo_negatives[(i, j)]`` holds, for the positive pair (i, j), the
    same-room partners of each endpoint whose physical separation is at
    least the positive pair's own.
    """

    positives: list = field(default_factory=list)
    negatives: list = field(default_factory=list)
    pseudo_negatives: dict = field(default_factory=dict)


def _position_distance(a, b):
    return float(np.hypot(*(np.asarray(a.position, dtype=float) - np.asarray(b.position, dtype=float))))


def mine_pairs(batch, n_positives=None, seed=0) -> PairSets:
    """Build positive, negative and pseudo-negative pair sets for a batch.

    Negatives are all cross-room index pairs. Positives are sampled
    uniformly among same-room pairs: by default one per sample that has a
    same-room partner. For a positive (i, j) with separation d_ij, the
    pseudo-negatives of endpoint i are the pairs (i, k) with k in the same
    room, k not an endpoint, and d_ik >= d_ij.
    """
    n = len(batch)
    rooms = [s.room for s in batch]
    same_room = [
        (i, j) for i in range(n) for j in range(i + 1, n) if rooms[i] == rooms[j]
    ]
    if not same_room:
        raise ValueError("batch has no same-room pair; fix the batch builder")
    negatives = [
        (i, j) for i in range(n) for j in range(i + 1, n) if rooms[i] != rooms[j]
    ]

    rng = np.random.default_rng(seed)
    if n_positives is None:
        positives = []
        seen = set()
        for i in range(n):
            partners = [j for j in range(n) if j != i and rooms[j] == rooms[i]]
            if not partners:
                continue
            j = int(rng.choice(partners))
            pair = (min(i, j), max(i, j))
            if pair not in seen:
                seen.add(pair)
                positives.append(pair)
    else:
        take = min(n_positives, len(same_room))
        idx = rng.choice(len(same_room), size=take, replace=False)
        positives = [same_room[int(t)] for t in sorted(idx)]

    pseudo = {}
    for (i, j) in positives:
        d_ij = _position_distance(batch[i], batch[j])
        pn_i = [
            (i, k)
            for k in range(n)
            if k not in (i, j) and rooms[k] == rooms[i]
            and _position_distance(batch[i], batch[k]) >= d_ij
        ]
        pn_j = [
            (j, l)
            for l in range(n)
            if l not in (i, j) and rooms[l] == rooms[j]
            and _position_distance(batch[j], batch[l]) >= d_ij
        ]
        pseudo[(i, j)] = (pn_i, pn_j)
    return PairSets(positives=positives, negatives=negatives, pseudo_negatives=pseudo)


def _partners_in(negatives, endpoint):
    """Indices paired with ``endpoint`` in an (unordered) pair list."""
    out = []
    for a, b in negatives:
        if a == endpoint:
            out.append(b)
        elif b == endpoint:
            out.append(a)
    return out


def _endpoint_terms_rolling(features, endpoint, neg_partners, pn_pairs, alpha):
    """exp-args (alpha - D) over all branch distances of every pushed pair."""
    terms = []
    for k in neg_partners:
        terms.append(T.sub(T.scale(rolling_l2(features[endpoint], features[k]), -1.0), -alpha))
    for (_, k) in pn_pairs:
        terms.append(T.sub(T.scale(rolling_l2(features[endpoint], features[k]), -1.0), -alpha))
    return terms


def continuous_lifted_loss(pairs: PairSets, features, alpha=1.0, sigma=1.0) -> Tensor:
    """Rotation-aware lifted loss over positions (the continuous variant).

    For every sampled positive (i, j): the pulled-apart set is the
    negatives plus pseudo-negatives of both endpoints, each contributing
    exp(alpha - D) for all w branch distances; the pulled-together term is
    the branch distances of (i, j) weighted by a circular Gaussian centred
    on the ground-truth relative rotation. Hinge-squared and averaged over
    2 |positives|.
    """
    if alpha <= 0:
        raise ValueError(f"margin must be positive, got {alpha}")
    if not pairs.positives:
        raise ValueError("continuous lifted loss needs at least one positive pair")
    _check_features(pairs, features)

    w = features[pairs.positives[0][0]].shape[-2]
    dtype = features[pairs.positives[0][0]].dtype
    per_pair = []
    for (i, j) in pairs.positives:
        r_ij = (features.rotation(j) - features.rotation(i)) % w
        mask = gaussian_rotation_mask(r_ij, w, sigma).astype(dtype)
        pos = T.tsum(T.scale(rolling_l2(features[i], features[j]), mask))

        pn_i, pn_j = pairs.pseudo_negatives.get((i, j), ([], []))
        args = _endpoint_terms_rolling(features, i, _partners_in(pairs.negatives, i), pn_i, alpha)
        args += _endpoint_terms_rolling(features, j, _partners_in(pairs.negatives, j), pn_j, alpha)
        if args:
            j_ij = T.add(T.logsumexp(T.concat(args)), pos)
        else:
            log.warning("positive pair (%d, %d) has no negatives or pseudo-negatives; "
                        "using its positive term only", i, j)
            j_ij = pos
        per_pair.append(T.square(T.relu(j_ij)))

    total = per_pair[0]
    for term in per_pair[1:]:
        total = T.add(total, term)
    return T.scale(total, 1.0 / (2 * len(pairs.positives)))


def original_lifted_loss(pairs: PairSets, features, alpha=1.0) -> Tensor:
    """Classic lifted structured loss on single-branch (unrolled) distances."""
    if alpha <= 0:
        raise ValueError(f"margin must be positive, got {alpha}")
    if not pairs.positives:
        raise ValueError("lifted loss needs at least one positive pair")
    _check_features(pairs, features)

    per_pair = []
    for (i, j) in pairs.positives:
        pos = T.l2_distance(features[i], features[j])
        args = []
        for endpoint in (i, j):
            for k in _partners_in(pairs.negatives, endpoint):
                args.append(T.sub(T.scale(T.l2_distance(features[endpoint], features[k]), -1.0), -alpha))
        if args:
            j_ij = T.add(T.logsumexp(T.stack_scalars(args)), pos)
        else:
            log.warning("positive pair (%d, %d) has no negatives; "
                        "using its positive term only", i, j)
            j_ij = pos
        per_pair.append(T.square(T.relu(j_ij)))

    total = per_pair[0]
    for term in per_pair[1:]:
        total = T.add(total, term)
    return T.scale(total, 1.0 / (2 * len(pairs.positives)))


class FeatureBatch:
    """Features plus rotation labels for the samples of one batch."""

    def __init__(self, features, rotation_bins):
        if len(features) != len(rotation_bins):
            raise ValueError("features and rotation labels differ in length")
        self._features = list(features)
        self._rotations = [int(r) for r in rotation_bins]

    @classmethod
    def from_samples(cls, samples):
        return cls([s.feature for s in samples], [s.rotation_bin for s in samples])

    def __len__(self):
        return len(self._features)

    def __getitem__(self, i) -> Tensor:
        return self._features[i]

    def rotation(self, i) -> int:
        return self._rotations[i]


def _check_features(pairs, features):
    shapes = {features[i].shape for pair in pairs.positives for i in pair}
    shapes |= {features[i].shape for pair in pairs.negatives for i in pair}
    if len(shapes) > 1:
        raise ValueError(f"features disagree in shape: {sorted(shapes)}")


def batch_builder(dataset, batch_size, seed):
    """Deterministically sample a batch usable by the pair miner.

    Guarantees at least two rooms represented and at least three samples
    from each represented room, whenever the dataset allows it.
    """
    if batch_size < 2:
        raise ValueError("batch size must be at least 2")
    rng = np.random.default_rng(seed)
    by_room = {}
    for idx, s in enumerate(dataset):
        by_room.setdefault(s.room, []).append(idx)

    per_room = 3 if batch_size >= 6 else batch_size // 2
    eligible = [r for r, members in by_room.items() if len(members) >= per_room]
    rooms = sorted(by_room)
    if len(eligible) >= 2:
        n_rooms = max(2, min(len(eligible), batch_size // per_room))
        chosen = rng.choice(sorted(eligible), size=n_rooms, replace=False)
    else:
        chosen = rooms  # tiny datasets: take whatever exists

    picked = []
    for room in chosen:
        members = by_room[room]
        take = min(len(members), per_room)
        picked.extend(int(m) for m in rng.choice(members, size=take, replace=False))
    # fill from the represented rooms so every room in the batch keeps >= 3
    pool = [i for r in chosen for i in by_room[r] if i not in set(picked)]
    fill = batch_size - len(picked)
    if fill > 0 and pool:
        picked.extend(int(m) for m in rng.choice(pool, size=min(fill, len(pool)), replace=False))
    picked = picked[:batch_size]
    return [dataset[i] for i in picked]

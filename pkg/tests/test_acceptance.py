"""Acceptance suite: one test per criterion, one printed line each.

The seed-pinned learning checks share a single session-scoped training
run. Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
"""

import math
import time

import numpy as np
import pytest

from omniplace import dataset as D
from omniplace import loss as L
from omniplace import mapstore as MS
from omniplace import metrics as ME
from omniplace import policy as P
from omniplace import tensor as T
from omniplace.config import derive_seed
from omniplace.dataset import SensorModel
from omniplace.kernels import available_backends
from omniplace.loss import FeatureBatch, LabeledSample
from omniplace.model import (ConvSpec, ModelConfig, OmniEncoder, desk_config,
                             load_weights, save_weights, train)
from omniplace.omni import rolling_distance, rolling_l2
from omniplace.policy import PolicyConfig
from omniplace.tensor import Tensor
from omniplace.world import Room, World, make_world

SEED = 0


def report(criterion, name, detail):
    print(f"\nACCEPTANCE {criterion} [{name}]: PASS ({detail})")


@pytest.fixture(scope="session")
def desk_run():
    """World, datasets, and the 2k-iteration trained desk model (criteria 5-7)."""
    t0 = time.time()
    world = make_world(3, seed=derive_seed(SEED, "world"))
    data = D.generate_dataset(world, 12, seed=derive_seed(SEED, "data"),
                              height=32, width=64, bins=16)
    maps, queries = D.sample_map_and_queries(world, 0.5, 200,
                                             seed=derive_seed(SEED, "eval"),
                                             height=32, width=64, bins=16)
    config = ModelConfig(seed=derive_seed(SEED, "train") % 2 ** 31)
    model = OmniEncoder(config)
    curve = train(model, data, iterations=2000, log_every=0)
    return {
        "world": world,
        "data": data,
        "maps": maps,
        "queries": queries,
        "config": config,
        "model": model,
        "curve": curve,
        "train_time": time.time() - t0,
    }


# -- criterion 1: equivariance suite ------------------------------------------------


def test_1_equivariance_all_rotations():
    t0 = time.time()
    model = OmniEncoder(desk_config(seed=11))
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, size=(32, 64, 3)).astype(np.float32)
    base = model.forward_tensor(Tensor(img)).data
    stride = model.config.total_stride()
    assert stride == 4 and model.config.width == 16
    worst_dev, worst_d = 0.0, 0.0
    for k in range(16):
        rolled = model.forward_tensor(Tensor(np.roll(img, -k * stride, axis=1))).data
        dev = float(np.abs(rolled - np.roll(base, -k, axis=0)).max())
        rd = rolling_distance(base, rolled)
        worst_dev = max(worst_dev, dev)
        worst_d = max(worst_d, rd.d_min)
        assert dev <= 1e-5
        assert rd.d_min <= 1e-5
        assert rd.r_hat == k
    elapsed = time.time() - t0
    assert elapsed < 10.0
    report(1, "equivariance", f"16 shifts, max dev {worst_dev:.1e}, max D {worst_d:.1e}, {elapsed:.1f}s")


# -- criterion 2: oracle equivalence --------------------------------------------------


def brute_rolling(zi, zj):
    w = zi.shape[-2]
    out = []
    for k in range(w):
        shifted = np.concatenate([zi[..., k:, :], zi[..., :k, :]], axis=-2)
        out.append(math.sqrt(float(((shifted - zj) ** 2).sum())))
    return np.array(out)


def naive_conv2d(xp, kernel, sh, sw):
    kh, kw, cin, cout = kernel.shape
    hp, wp, _ = xp.shape
    ho, wo = (hp - kh) // sh + 1, (wp - kw) // sw + 1
    out = np.zeros((ho, wo, cout))
    for h in range(ho):
        for w in range(wo):
            for o in range(cout):
                acc = 0.0
                for u in range(kh):
                    for v in range(kw):
                        for c in range(cin):
                            acc += xp[h * sh + u, w * sw + v, c] * kernel[u, v, c, o]
                out[h, w, o] = acc
    return out


def test_2_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        zi = rng.normal(size=(16, 32))
        zj = rng.normal(size=(16, 32))
        rd = rolling_distance(zi, zj)
        worst = max(worst, float(np.abs(rd.distances - brute_rolling(zi, zj)).max()))
    assert worst <= 1e-6

    conv_worst = 0.0
    backends = available_backends()
    for case in range(50):
        sh, sw = (1, 1) if case % 2 else (2, 2)
        xp = rng.normal(size=(8, 16, 2))
        k = rng.normal(size=(3, 3, 2, 3))
        want = naive_conv2d(xp, k, sh, sw)
        for mod in backends.values():
            got = mod.conv2d_forward(xp, k, sh, sw)
            conv_worst = max(conv_worst, float(np.abs(got - want).max()))
    assert conv_worst <= 1e-6
    elapsed = time.time() - t0
    assert elapsed < 30.0
    report(2, "oracles", f"rolling dev {worst:.1e}, conv dev {conv_worst:.1e} "
                         f"({'+'.join(backends)}), {elapsed:.1f}s")


# -- criterion 3: loss reduction to the classic lifted loss ---------------------------


def reference_lifted(samples, positives, alpha):
    """Independent direct-formula classic lifted loss (hinge-squared mean)."""
    feats = [s.feature.data for s in samples]
    rooms = [s.room for s in samples]

    def dist(a, b):
        return math.sqrt(float(((feats[a] - feats[b]) ** 2).sum()))

    total = 0.0
    for (i, j) in positives:
        acc = 0.0
        for endpoint in (i, j):
            for k in range(len(samples)):
                if rooms[k] != rooms[endpoint]:
                    acc += math.exp(alpha - dist(endpoint, k))
        total += max(0.0, math.log(acc) + dist(i, j)) ** 2
    return total / (2 * len(positives))


def test_3_continuous_loss_reduces_to_original():
    worst = 0.0
    for trial in range(50):
        rng = np.random.default_rng(3000 + trial)
        rooms = ["A", "A", "B", "B", "C", "A"]
        batch = []
        for i, room in enumerate(rooms):
            batch.append(LabeledSample(
                image_id=i, room=room, position=rng.uniform(0, 5, 2),
                rotation_bin=0,
                feature=Tensor(rng.normal(size=(1, 6)), dtype=np.float64),
            ))
        pairs = L.mine_pairs(batch, seed=trial)
        pairs.pseudo_negatives = {p: ([], []) for p in pairs.positives}
        fb = FeatureBatch.from_samples(batch)
        cont = L.continuous_lifted_loss(pairs, fb, alpha=1.0, sigma=0.0).item()
        want = reference_lifted(batch, pairs.positives, alpha=1.0)
        worst = max(worst, abs(cont - want))
    assert worst <= 1e-9
    report(3, "loss reduction", f"50 batches, max |diff| {worst:.2e}")


# -- criterion 4: gradient checks ------------------------------------------------------


def _slice_sample(p, i):
    out = T._node(p.data[i], (p,))

    def backward():
        g = np.zeros_like(p.data)
        g[i] = out.grad
        T._accum(p, g)

    out._backward = backward
    return out


def test_4_gradient_checks():
    t0 = time.time()
    rng = np.random.default_rng(4)
    rooms = ["A", "A", "A", "B", "B", "B"]
    positions = [rng.uniform(0, 4, 2) for _ in rooms]
    rotations = [int(rng.integers(4)) for _ in rooms]

    # losses on free feature tensors
    batch = [LabeledSample(i, r, positions[i], rotations[i],
                           Tensor(rng.normal(size=(4, 3)), dtype=np.float64))
             for i, r in enumerate(rooms)]
    pairs = L.mine_pairs(batch, seed=9)
    packed = Tensor(np.stack([s.feature.data for s in batch]), dtype=np.float64)

    def cont_loss(p):
        fb = FeatureBatch([_slice_sample(p, i) for i in range(6)], rotations)
        return L.continuous_lifted_loss(pairs, fb, alpha=1.0, sigma=0.8)

    def orig_loss(p):
        fb = FeatureBatch([_slice_sample(p, i) for i in range(6)], rotations)
        return L.original_lifted_loss(pairs, fb, alpha=1.0)

    err_cont = T.finite_diff_check(cont_loss, packed)
    err_orig = T.finite_diff_check(orig_loss, packed)
    assert err_cont <= 1e-4
    assert err_orig <= 1e-4

    # full composite: images -> encoder -> mined pairs -> continuous loss
    cfg = ModelConfig(
        input_h=8, input_w=16, input_c=2,
        convs=(ConvSpec(3, 4, 1, 2), ConvSpec(3, 4, 1, 2)),
        width=4, depth=4, seed=5,
    )
    enc = OmniEncoder(cfg, dtype=np.float64)
    images = [rng.uniform(0, 1, size=(8, 16, 2)) for _ in rooms]

    def composite_for(param_index):
        def f(p):
            enc.params[param_index] = p
            feats = [enc.forward_tensor(Tensor(img, dtype=np.float64)) for img in images]
            fb = FeatureBatch(feats, rotations)
            return L.continuous_lifted_loss(pairs, fb, alpha=1.0, sigma=1.0)

        return f

    err_model = 0.0
    for pi in range(len(enc.params)):
        probe = Tensor(enc.params[pi].data.copy(), dtype=np.float64)
        err_model = max(err_model, T.finite_diff_check(composite_for(pi), probe))
        enc.params[pi] = probe
    assert err_model <= 1e-4
    elapsed = time.time() - t0
    assert elapsed < 120.0
    report(4, "gradients", f"cont {err_cont:.1e}, orig {err_orig:.1e}, "
                           f"model {err_model:.1e}, {elapsed:.1f}s")


# -- criterion 5: desk-scale learning ---------------------------------------------------


def test_5_desk_scale_learning(desk_run):
    t0 = time.time()
    world, model, config = desk_run["world"], desk_run["model"], desk_run["config"]

    held = D.generate_dataset(world, 9, seed=derive_seed(SEED, "heldout"),
                              height=32, width=64, bins=16)
    feats = [model.extract(s.pixels).values for s in held]
    rng = np.random.default_rng(derive_seed(SEED, "pairs"))
    pairs = []
    while len(pairs) < 500:
        i, j = int(rng.integers(len(held))), int(rng.integers(len(held)))
        if i != j and held[i].room == held[j].room:
            pairs.append((i, j))
    fd = [rolling_distance(feats[i], feats[j]).d_min for i, j in pairs]
    pd = [float(np.hypot(*(held[i].position - held[j].position))) for i, j in pairs]
    rho = ME.spearman(fd, pd)
    assert rho >= 0.6

    index = MS.build_map(model, desk_run["maps"])
    _, rep = ME.evaluate_retrieval(model, index, desk_run["queries"])
    baseline = OmniEncoder(config)
    _, base_rep = ME.evaluate_retrieval(baseline, MS.build_map(baseline, desk_run["maps"]),
                                        desk_run["queries"])
    trained_half = dict(rep.recall_tolerance)[0.5]
    base_half = dict(base_rep.recall_tolerance)[0.5]
    gain = trained_half - base_half
    assert gain >= 0.20

    recalls = [r for _, r in rep.recall_tolerance]
    assert all(b >= a - 1e-12 for a, b in zip(recalls, recalls[1:]))

    total = desk_run["train_time"] + (time.time() - t0)
    assert total < 15 * 60
    report(5, "desk learning", f"spearman {rho:.3f}, recall@0.5 {trained_half:.3f} "
                               f"vs baseline {base_half:.3f} (+{100 * gain:.0f} pts), "
                               f"monotone curve, {total / 60:.1f} min")


# -- criterion 6: ablation ordering (soft) ------------------------------------------------


def test_6_ablation_ordering(desk_run):
    res = ME.run_matrix(desk_run["data"], desk_run["maps"], desk_run["queries"],
                        desk_run["config"], seeds=[0, 1, 2],
                        variants=("LC", "LCR", "CLCR"), iterations=800,
                        include_random_baseline=False)
    means = {v: ME.mean_recall_at(res[v], 0.5) for v in ("LC", "LCR", "CLCR")}
    slack = 0.02  # report-only band for small inversions
    notes = []
    for hi, lo in (("CLCR", "LCR"), ("LCR", "LC")):
        if means[hi] < means[lo]:
            notes.append(f"{hi} ({means[hi]:.3f}) below {lo} ({means[lo]:.3f})")
        assert means[hi] >= means[lo] - slack, (
            f"ordering inverted by more than {slack:.0%}: {means}"
        )
    detail = ", ".join(f"{v} {means[v]:.3f}" for v in ("LC", "LCR", "CLCR"))
    if notes:
        detail += "; soft inversions: " + "; ".join(notes)
    report(6, "ablation ordering", detail)


# -- criterion 7: navigation ---------------------------------------------------------------


def test_7_navigation(desk_run):
    t0 = time.time()
    world, model = desk_run["world"], desk_run["model"]
    index = MS.build_map(model, desk_run["maps"])
    pc = PolicyConfig()
    sensor = SensorModel()

    rng = np.random.default_rng(derive_seed(SEED, "nav"))
    greedy, random_eps = [], []
    for e in range(50):
        start, target_id = P.sample_episode(world, index, rng, 1.0, 3.0)
        greedy.append(P.navigate(world, model, index, start, target_id, pc,
                                 sensor=sensor, sensor_seed=derive_seed(SEED, f"live/{e}")))
        random_eps.append(P.navigate(world, model, index, start, target_id, pc,
                                     rng=np.random.default_rng(derive_seed(SEED, f"rand/{e}")),
                                     distance_fn=lambda cell: 0.0))
    rate, avg = ME.nav_stats(greedy)
    rand_rate, _ = ME.nav_stats(random_eps)
    assert rate >= 2 * rand_rate, f"greedy {rate} vs random {rand_rate}"

    # injected oracle distances reach every target in a convex room
    side = 5.0
    rooms = [Room(0, 0.0, 0.0, side, side)]
    wall_a = [[0, 0], [side, 0], [side, side], [0, side]]
    wall_b = [[side, 0], [side, side], [0, side], [0, 0]]
    convex = World(rooms, wall_a, wall_b, [0, 1, 2, 3],
                   np.random.default_rng(0).uniform(0.3, 1, (4, 3)), [], seed=0)
    cmaps, _ = D.sample_map_and_queries(convex, 0.9, 1, seed=7, height=8, width=16, bins=4)
    tiny = OmniEncoder(ModelConfig(input_h=8, input_w=16, input_c=3,
                                   convs=(ConvSpec(3, 4, 1, 2), ConvSpec(3, 6, 1, 2)),
                                   width=4, depth=6, seed=1))
    cindex = MS.build_map(tiny, cmaps)
    orng = np.random.default_rng(derive_seed(SEED, "oracle-nav"))
    oracle_successes = 0
    for _ in range(20):
        start, tid = P.sample_episode(convex, cindex, orng, 1.0, 3.0)
        target = cindex.record(tid)
        ep = P.navigate(convex, None, cindex, start, tid, pc,
                        distance_fn=lambda cell, t=target: float(np.hypot(*(cell - t.position))))
        oracle_successes += ep.success
    assert oracle_successes == 20
    elapsed = time.time() - t0
    assert elapsed < 10 * 60
    report(7, "navigation", f"greedy {rate:.2f} (avg {avg:.1f} steps) vs random "
                            f"{rand_rate:.2f}, oracle 20/20 convex, {elapsed / 60:.1f} min")


# -- criterion 8: metric recount ----------------------------------------------------------


def test_8_metric_recount():
    rng = np.random.default_rng(800)
    preds = []
    for q in range(200):
        gt = int(rng.integers(60))
        exact = rng.uniform() < 0.35
        preds.append(ME.Prediction(
            query_id=q,
            predicted_id=gt if exact else int(rng.integers(60)),
            gt_id=gt,
            error=0.0 if exact else float(rng.uniform(0, 1.8)),
            query_distance=float(rng.uniform(0, 2.2)),
        ))
    curve = ME.recall_tolerance(preds, ME.DEFAULT_TOLERANCES)
    for e, r in curve:
        if e == 0:
            want = sum(p.predicted_id == p.gt_id for p in preds) / 200
        else:
            want = sum(p.error <= e for p in preds) / 200
        assert r == want
    for (lo, hi), r in ME.recall_distance(preds):
        members = [p for p in preds if lo < p.query_distance <= hi]
        if not members:
            assert r is None
        else:
            assert r == sum(p.error <= 0.5 for p in members) / len(members)

    episodes = []
    for _ in range(20):
        ep = P.Episode(start=None, target_id=0)
        ep.success = bool(rng.uniform() < 0.5)
        ep.steps = int(rng.integers(1, 100))
        episodes.append(ep)
    rate, avg = ME.nav_stats(episodes)
    wins = [e.steps for e in episodes if e.success]
    assert rate == len(wins) / 20
    assert avg == sum(wins) / len(wins)
    report(8, "metric recount", "recall_tolerance, recall_distance, nav_stats exact on "
                                "200-prediction and 20-episode fixtures")


# -- criterion 9: persistence ----------------------------------------------------------------


def test_9_persistence(tmp_path):
    rng = np.random.default_rng(9)
    world = make_world(2, seed=90)

    # weights
    cfg = ModelConfig(input_h=8, input_w=16, input_c=3,
                      convs=(ConvSpec(3, 4, 1, 2), ConvSpec(3, 6, 1, 2)),
                      width=4, depth=6, seed=3)
    model = OmniEncoder(cfg)
    wpath = tmp_path / "w.ocnn"
    save_weights(model, wpath, config_hash="deadbeef")
    loaded = load_weights(wpath)
    img = rng.uniform(0, 1, (8, 16, 3)).astype(np.float32)
    assert np.array_equal(model.extract(img).values, loaded.extract(img).values)
    corrupt = bytearray(wpath.read_bytes())
    corrupt[25] ^= 1
    wpath.write_bytes(bytes(corrupt))
    with pytest.raises(ValueError):
        load_weights(wpath)

    # datasets
    samples = D.generate_dataset(world, 1, seed=5, height=8, width=16, bins=4)
    d1, d2 = tmp_path / "d1", tmp_path / "d2"
    D.save_dataset(d1, samples, kind="train", seed=5, config_hash="deadbeef")
    D.save_dataset(d2, D.generate_dataset(world, 1, seed=5, height=8, width=16, bins=4),
                   kind="train", seed=5, config_hash="deadbeef")
    for f in sorted(d1.iterdir()):
        assert f.read_bytes() == (d2 / f.name).read_bytes()
    _, back = D.load_dataset(d1)
    assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(samples, back))
    pix = d1 / "000000.opix"
    pix.write_bytes(pix.read_bytes()[:-8])
    with pytest.raises(ValueError):
        D.load_dataset(d1)

    # maps
    index = MS.build_map(model, samples, config_hash="deadbeef", seed=5)
    mpath = tmp_path / "m.omap"
    MS.save_map(index, mpath)
    mloaded = MS.load_map(mpath)
    assert mloaded.model_hash == index.model_hash
    assert mloaded.config_hash == "deadbeef" and mloaded.seed == 5
    assert all(np.array_equal(a.feature, b.feature)
               for a, b in zip(index.records, mloaded.records))
    blob = bytearray(mpath.read_bytes())
    blob[-3] ^= 0xFF
    mpath.write_bytes(bytes(blob))
    with pytest.raises(ValueError):
        MS.load_map(mpath)
    other = OmniEncoder(ModelConfig(input_h=8, input_w=16, input_c=3,
                                    convs=(ConvSpec(3, 4, 1, 2), ConvSpec(3, 6, 1, 2)),
                                    width=4, depth=6, seed=99))
    with pytest.raises(ValueError, match="hash mismatch"):
        index.query(other.extract(img))

    # reports
    rep = ME.MetricReport(recall_tolerance=[(0.0, 0.5), (0.5, 0.75)],
                          recall_distance=[((0.0, 0.5), 1.0)], nav=(0.9, 12.0),
                          variant="CLCR", seed=5, config_hash="deadbeef")
    rpath = tmp_path / "r.report"
    rpath.write_text(rep.to_jsonl())
    back = ME.MetricReport.from_jsonl(rpath.read_text())
    assert back.to_jsonl() == rep.to_jsonl()
    report(9, "persistence", "weights, datasets, maps, reports round-trip; "
                             "corruption and hash mismatches refused")

"""Command-line pipelines: world and data generation, training, mapping,
querying, navigation and evaluation.

Every subcommand reads an optional INI config (see config.py for the
schema) plus flag overrides, and stamps its outputs with the resolved
config hash and seed so any artifact's provenance can be reconstructed
from the files alone.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as D
from . import mapstore as MS
from . import metrics as ME
from . import policy as P
from .config import RunConfig, derive_seed, load_config
from .model import OmniEncoder, load_weights, save_weights, train
from .world import Pose, World, make_world

log = logging.getLogger("omniplace")


def _common(sub):
    sub.add_argument("--config", help="INI config file")
    sub.add_argument("--seed", type=int, help="global seed override")


def _resolve(args, **extra) -> RunConfig:
    overrides = {"seed": getattr(args, "seed", None)}
    overrides.update(extra)
    return load_config(getattr(args, "config", None), overrides)


def _load_model(path):
    model = load_weights(path)
    log.info("loaded model %s from %s", model.model_hash(), path)
    return model


def build_parser():
    parser = argparse.ArgumentParser(
        prog="omniplace",
        description="Rotation-invariant panorama place recognition on a synthetic world "
                    f"(dataset v{D.DATASET_VERSION}, weights v1, maps v1)",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("gen-world", help="generate a floor plan")
    _common(s)
    s.add_argument("--rooms", type=int)
    s.add_argument("--out", required=True)

    s = subs.add_parser("gen-data", help="render a dataset from a world")
    _common(s)
    s.add_argument("--world", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kind", choices=["train", "eval"], default="train",
                   help="train: exemplar-centred samples; eval: map tour + queries")
    s.add_argument("--exemplars", type=int)

    s = subs.add_parser("train", help="train the encoder on a dataset")
    _common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iterations", type=int)

    s = subs.add_parser("build-map", help="encode map exemplars into a map file")
    _common(s)
    s.add_argument("--weights", required=True)
    s.add_argument("--data", required=True, help="dataset directory with map exemplars")
    s.add_argument("--out", required=True)

    s = subs.add_parser("query", help="retrieve the closest exemplar for one image")
    _common(s)
    s.add_argument("--weights", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--image", required=True, help="pixel file (.opix)")
    s.add_argument("--top", type=int, default=5)

    s = subs.add_parser("navigate", help="run one navigation episode")
    _common(s)
    s.add_argument("--weights", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--world", required=True)
    s.add_argument("--target", type=int, required=True)
    s.add_argument("--start", help="x,y,theta (random if omitted)")
    s.add_argument("--log", help="episode log path (JSON lines)")

    s = subs.add_parser("eval-recall", help="recall metrics over a query set")
    _common(s)
    s.add_argument("--weights", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--out")
    s.add_argument("--format", choices=["jsonl", "table"], default="table")

    s = subs.add_parser("eval-nav", help="navigation statistics over many episodes")
    _common(s)
    s.add_argument("--weights", required=True)
    s.add_argument("--map", required=True)
    s.add_argument("--world", required=True)
    s.add_argument("--episodes", type=int)
    s.add_argument("--policy", choices=["greedy", "random"], default="greedy")
    s.add_argument("--out")
    s.add_argument("--format", choices=["jsonl", "table"], default="table")

    s = subs.add_parser("ablation", help="train and evaluate the variant matrix")
    _common(s)
    s.add_argument("--world", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    s.add_argument("--iterations", type=int)
    s.add_argument("--format", choices=["jsonl", "table"], default="table")
    return parser


# -- subcommand bodies ---------------------------------------------------------


def cmd_gen_world(args):
    cfg = _resolve(args, rooms=getattr(args, "rooms", None))
    world = make_world(cfg.rooms, seed=derive_seed(cfg.seed, "world"))
    world.save(args.out)
    print(f"world with {cfg.rooms} rooms -> {args.out}")
    return 0


def cmd_gen_data(args):
    cfg = _resolve(args, exemplars=getattr(args, "exemplars", None))
    world = World.load(args.world)
    if args.kind == "train":
        samples = D.generate_dataset(
            world, cfg.exemplars, seed=derive_seed(cfg.seed, "data/train"),
            height=cfg.height, width=cfg.width, bins=cfg.feature_width,
        )
        D.save_dataset(args.out, samples, kind="train", seed=cfg.seed,
                       config_hash=cfg.config_hash())
        print(f"{len(samples)} training samples -> {args.out}")
    else:
        maps, queries = D.sample_map_and_queries(
            world, cfg.map_density, cfg.queries, seed=derive_seed(cfg.seed, "data/eval"),
            height=cfg.height, width=cfg.width, bins=cfg.feature_width,
        )
        out = Path(args.out)
        D.save_dataset(out / "map", maps, kind="map", seed=cfg.seed,
                       config_hash=cfg.config_hash())
        D.save_dataset(out / "queries", queries, kind="queries", seed=cfg.seed,
                       config_hash=cfg.config_hash())
        print(f"{len(maps)} map exemplars and {len(queries)} queries -> {out}")
    return 0


def cmd_train(args):
    cfg = _resolve(args, iterations=getattr(args, "iterations", None))
    _, samples = D.load_dataset(args.data)
    model = OmniEncoder(cfg.model_config(seed=derive_seed(cfg.seed, "train")))
    curve = train(model, samples)
    save_weights(model, args.out, config_hash=cfg.config_hash())
    final = float(np.mean(curve[-50:])) if curve else float("nan")
    print(f"trained {len(curve)} iterations (final smoothed loss {final:.4f}) -> {args.out}")
    return 0


def cmd_build_map(args):
    cfg = _resolve(args)
    model = _load_model(args.weights)
    _, samples = D.load_dataset(args.data)
    index = MS.build_map(model, samples, config_hash=cfg.config_hash(), seed=cfg.seed)
    MS.save_map(index, args.out)
    print(f"map with {len(index)} exemplars (model {index.model_hash}) -> {args.out}")
    return 0


def cmd_query(args):
    model = _load_model(args.weights)
    index = MS.load_map(args.map)
    pixels = D.read_pixels(args.image)
    feat = model.extract(pixels)
    res = index.query(feat, use_roll=model.config.roll)
    print(f"best exemplar {res.best_id}  distance {res.distance:.4f}  rotation bin {res.r_hat}")
    for rank, (rid, dist, r_hat) in enumerate(res.ranking[: args.top], start=1):
        print(f"  #{rank}  id {rid:5d}  D {dist:.4f}  r_hat {r_hat}")
    return 0


def cmd_navigate(args):
    cfg = _resolve(args)
    model = _load_model(args.weights)
    index = MS.load_map(args.map)
    world = World.load(args.world)
    if args.start:
        x, y, theta = (float(v) for v in args.start.split(","))
        start = Pose(np.array([x, y]), theta, world.room_of((x, y)))
    else:
        rng = np.random.default_rng(derive_seed(cfg.seed, "navigate"))
        start, _ = P.sample_episode(world, index, rng)
    ep = P.navigate(world, model, index, start, args.target,
                    cfg.policy_config(), log_path=args.log,
                    sensor=D.SensorModel(), sensor_seed=derive_seed(cfg.seed, "sensor"))
    status = "success" if ep.success else "failure"
    print(f"{status}: {ep.steps} steps, final distance {ep.final_distance:.3f} m, "
          f"{ep.feature_evals} feature evaluations")
    return 0


def _emit_report(report, fmt, out):
    text = report.to_jsonl() if fmt == "jsonl" else report.to_table()
    if out:
        Path(out).write_text(text)
        print(f"report -> {out}")
    else:
        print(text, end="")


def cmd_eval_recall(args):
    cfg = _resolve(args)
    model = _load_model(args.weights)
    index = MS.load_map(args.map)
    _, queries = D.load_dataset(args.queries)
    _, report = ME.evaluate_retrieval(model, index, queries, cfg.tolerance_grid())
    report.variant = "trained"
    report.seed = cfg.seed
    report.config_hash = cfg.config_hash()
    _emit_report(report, args.format, args.out)
    return 0


def cmd_eval_nav(args):
    cfg = _resolve(args, episodes=getattr(args, "episodes", None))
    model = _load_model(args.weights)
    index = MS.load_map(args.map)
    world = World.load(args.world)
    rng = np.random.default_rng(derive_seed(cfg.seed, "eval-nav"))
    episodes = []
    for e in range(cfg.episodes):
        start, target_id = P.sample_episode(world, index, rng)
        move_rng = np.random.default_rng(derive_seed(cfg.seed, f"episode/{e}")) \
            if args.policy == "random" else None
        episodes.append(P.navigate(world, model, index, start, target_id,
                                   cfg.policy_config(), rng=move_rng,
                                   sensor=D.SensorModel(),
                                   sensor_seed=derive_seed(cfg.seed, f"sensor/{e}")))
    rate, avg = ME.nav_stats(episodes)
    report = ME.MetricReport(nav=(rate, avg), variant=f"nav-{args.policy}",
                             seed=cfg.seed, config_hash=cfg.config_hash())
    _emit_report(report, args.format, args.out)
    return 0


def cmd_ablation(args):
    cfg = _resolve(args, iterations=getattr(args, "iterations", None))
    world = World.load(args.world)
    data_seed = derive_seed(cfg.seed, "data/train")
    eval_seed = derive_seed(cfg.seed, "data/eval")
    samples = D.generate_dataset(world, cfg.exemplars, seed=data_seed,
                                 height=cfg.height, width=cfg.width, bins=cfg.feature_width)
    maps, queries = D.sample_map_and_queries(world, cfg.map_density, cfg.queries,
                                             seed=eval_seed, height=cfg.height,
                                             width=cfg.width, bins=cfg.feature_width)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(variant, seed, report):
        at_half = [r for e, r in report.recall_tolerance if abs(e - 0.5) < 1e-9]
        log.info("variant %-6s seed %d  recall@0.5 %.3f", variant, seed,
                 at_half[0] if at_half else float("nan"))

    results = ME.run_matrix(samples, maps, queries, cfg.model_config(), seeds,
                            iterations=cfg.iterations, tolerances=cfg.tolerance_grid(),
                            progress=progress)
    for variant, reports in results.items():
        for rep in reports:
            rep.config_hash = cfg.config_hash()
            path = out / f"{variant}-seed{rep.seed}.report"
            path.write_text(rep.to_jsonl() if args.format == "jsonl" else rep.to_table())
        mean = ME.mean_recall_at(reports, 0.5)
        print(f"{variant:7s} mean recall @ <=0.5 m over seeds: {mean:.3f}")
    return 0


_COMMANDS = {
    "gen-world": cmd_gen_world,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "build-map": cmd_build_map,
    "query": cmd_query,
    "navigate": cmd_navigate,
    "eval-recall": cmd_eval_recall,
    "eval-nav": cmd_eval_nav,
    "ablation": cmd_ablation,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

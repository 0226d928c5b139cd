"""Command-line entry point: extract, graph, train, predict, evaluate, model-info."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import tomli

from . import evaluation, training
from .clustering import kmeans, write_cluster_csv
from .config import PipelineConfig, load_config
from .errors import ConfigError, PcqaError, PipelineError
from .features import extract_features, write_feature_csv
from .graph import CLUSTER_SPACES, clustering_space, point_feature_matrix, write_graph
from .model import GafGatModel
from .pipeline import GraphCache, graph_for_file
from .pointcloud_io import load_manifest, read_ply

log = logging.getLogger("pcwgat")

CONFIG_ECHO = "config.toml"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parse_value(text):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _overrides(args):
    out = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        out.setdefault(section, {})[name] = _parse_value(value.strip())
    if getattr(args, "seed", None) is not None:
        out.setdefault("training", {})["seed"] = args.seed
    if getattr(args, "cluster_space", None) is not None:
        out.setdefault("clustering", {})["cluster_space"] = args.cluster_space
    return out


def effective_config(args) -> PipelineConfig:
    """Defaults < --config file < flags."""
    return load_config(args.config, _overrides(args))


def _cache(args):
    return GraphCache(args.cache_dir) if args.cache_dir else GraphCache()


def _echo_config(cfg: PipelineConfig, directory):
    Path(directory).mkdir(parents=True, exist_ok=True)
    (Path(directory) / CONFIG_ECHO).write_text(cfg.to_toml())


def _clouds(args):
    if args.cloud:
        return [Path(p) for p in args.cloud]
    manifest = load_manifest(args.manifest, allow_degenerate=True)
    return [manifest.resolve(e) for e in manifest.entries]


def cmd_extract(args):
    cfg = effective_config(args)
    out = Path(args.out)
    for path in _clouds(args):
        try:
            cloud = read_ply(path)
            feats = extract_features(cloud, cfg.feature, threads=args.threads)
            pf = point_feature_matrix(feats, cloud)
            space = clustering_space(pf, cfg.clustering.cluster_space, cfg.clustering.spatial_weight)
            clusters = kmeans(space, cfg.clustering.k, cfg.clustering.seed, cfg.clustering.max_iter)
        except PcqaError as exc:
            raise PipelineError(path, exc) from exc
        except OSError as exc:
            raise PipelineError(path, f"cannot read file ({exc.strerror or exc})") from None
        target = out / path.stem
        target.mkdir(parents=True, exist_ok=True)
        with open(target / "features.csv", "w", newline="") as fp:
            write_feature_csv(feats, fp)
        with open(target / "clusters.csv", "w", newline="") as fp:
            write_cluster_csv(clusters, fp)
        _echo_config(cfg, target)
        print(f"{path}\t{target}")
    return 0


def cmd_graph(args):
    cfg = effective_config(args)
    cache = _cache(args)
    for path in _clouds(args):
        graph = graph_for_file(path, cfg, cache, threads=args.threads)
        if args.out:
            target = Path(args.out) / path.stem
            write_graph(graph, target)
            _echo_config(cfg, target)
            print(f"{path}\t{target}")
        else:
            print(f"{path}\tk={graph.k}")
    return 0


def cmd_train(args):
    cfg = effective_config(args)
    manifest = load_manifest(args.manifest)
    report = training.train(manifest, cfg, args.out, _cache(args), threads=args.threads)
    _echo_config(cfg, args.out)
    last = report.epochs[report.best_epoch] if report.epochs else {}
    metric = report.selection_metric
    print(f"checkpoint={Path(args.out) / report.checkpoint}")
    print(f"best_epoch={report.best_epoch} {metric}={last.get(metric, float('nan')):.6g}")
    return 0


def cmd_predict(args):
    cfg = load_config(args.config, _overrides(args)) if (args.config or args.set or args.cluster_space) else None
    score = training.predict(args.checkpoint, args.cloud, cfg, _cache(args), threads=args.threads)
    print(f"score={score!r}")
    return 0


def cmd_evaluate(args):
    loaded = training.load_checkpoint(args.checkpoint)
    report, preds, mos = evaluation.evaluate_model(loaded, args.manifest, args.split, _cache(args),
                                                   threads=args.threads)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.json").write_text(report.to_json())
        with open(out / "scatter.csv", "w", newline="") as fp:
            evaluation.write_scatter_csv(preds, mos, report.logistic, fp)
        _echo_config(loaded.config, out)
    sys.stdout.write(report.to_json() if args.json else report.table())
    return 0


def cmd_model_info(args):
    if args.checkpoint:
        loaded = training.load_checkpoint(args.checkpoint)
        cfg, model = loaded.config, loaded.model
    else:
        cfg = effective_config(args)
        model = GafGatModel.initialize(cfg.model, cfg.training.seed)
    rows = model.architecture()
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value}")
    print()
    sys.stdout.write(cfg.to_toml())
    return 0


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config file; flags override it")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--cluster-space", choices=CLUSTER_SPACES,
                        help="what k-means clusters on (clustering.cluster_space)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (1 = serial)")
    common.add_argument("--cache-dir", help="graph cache directory (default: $PCQA_CACHE_DIR)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="pcwgat", description="No-reference point cloud quality assessment.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    s = sub.add_parser("extract", parents=[common], help="per-point features and cluster labels")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--cloud", nargs="+", help="PLY file(s)")
    src.add_argument("--manifest", help="dataset manifest CSV")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("graph", parents=[common], help="build cluster graphs (fills the cache)")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--cloud", nargs="+", help="PLY file(s)")
    src.add_argument("--manifest", help="dataset manifest CSV")
    s.add_argument("--out", help="also dump each graph as CSV under this directory")
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("train", parents=[common], help="train on a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="output directory for checkpoint and report")
    s.add_argument("--seed", type=int, help="training seed (split, init, shuffling, dropout)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="score one cloud")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--cloud", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="correlations on a split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=evaluation.SPLITS)
    s.add_argument("--out", help="write eval_report.json and scatter.csv here")
    s.add_argument("--json", action="store_true", help="print JSON instead of a table")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("model-info", parents=[common], help="architecture table and defaults")
    s.add_argument("--checkpoint", help="describe a saved model instead of the config")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_model_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("pcwgat: error: a command is required")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pcwgat: error: {exc}", file=sys.stderr)
        return 1
    except (PcqaError, ConfigError, OSError, ValueError, KeyError) as exc:
        print(f"pcwgat: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

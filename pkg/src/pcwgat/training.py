"""Reference-disjoint splitting, MSE training with Adam, checkpoints, prediction."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import PipelineConfig, TrainingConfig
from .errors import ConfigMismatch, LengthMismatch, PipelineError, TooFewReferences
from .evaluation import pearson
from .model import GafGatModel, ModelConfig
from .nn import checkpoint as ckpt
from .nn.optim import Adam
from .pipeline import GraphCache, graph_for_file
from .pointcloud_io import DatasetManifest, load_manifest

log = logging.getLogger(__name__)

SPLIT_RATIOS = (0.8, 0.1, 0.1)
CHECKPOINT_NAME = "model.ckpt"
REPORT_NAME = "train_report.json"


# ---------------------------------------------------------------------------
# splitting and loss
# ---------------------------------------------------------------------------

@dataclass
class SplitPlan:
    train: list
    val: list
    test: list
    seed: int
    ratios: tuple = SPLIT_RATIOS

    def to_dict(self):
        return {"train": self.train, "val": self.val, "test": self.test, "seed": self.seed,
                "ratios": list(self.ratios)}


def split_dataset(manifest: DatasetManifest, seed: int = 0) -> SplitPlan:
    """Shuffle reference ids, then fill val and test up to 10% of entries each; the rest train.

    Every reference lands in exactly one split and each split gets at least
    one reference.
    """
    refs = sorted({e.reference_id for e in manifest.entries})
    if len(refs) < 3:
        raise TooFewReferences(f"need at least 3 distinct reference ids, got {len(refs)}")
    rng = np.random.default_rng(seed)
    order = [refs[i] for i in rng.permutation(len(refs))]
    size = {r: 0 for r in refs}
    for e in manifest.entries:
        size[e.reference_id] += 1
    total = len(manifest.entries)
    targets = [SPLIT_RATIOS[0] * total, SPLIT_RATIOS[1] * total, SPLIT_RATIOS[2] * total]

    buckets = {0: [], 1: [], 2: []}
    filled = [0, 0, 0]
    # seed val and test with one reference each, then greedily fill by largest remaining deficit
    for b, ref in zip((1, 2), order[:2]):
        buckets[b].append(ref)
        filled[b] += size[ref]
    rest = order[2:]
    buckets[0].append(rest[0])
    filled[0] += size[rest[0]]
    for ref in rest[1:]:
        deficits = [targets[b] - filled[b] - size[ref] / 2.0 for b in range(3)]
        b = int(np.argmax(deficits))
        buckets[b].append(ref)
        filled[b] += size[ref]

    where = {ref: b for b, rs in buckets.items() for ref in rs}
    idx = {0: [], 1: [], 2: []}
    for i, e in enumerate(manifest.entries):
        idx[where[e.reference_id]].append(i)
    return SplitPlan(idx[0], idx[1], idx[2], seed)


def mse_loss(preds, targets) -> float:
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size != t.size or p.size == 0:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} targets")
    d = p - t
    return float(np.mean(d * d))


def normalize_mos(mos, lo, hi):
    return (np.asarray(mos, dtype=np.float64) - lo) / (hi - lo)


def denormalize(score, lo, hi):
    return score * (hi - lo) + lo


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, val_plcc
    best_epoch: int = -1
    checkpoint: str = ""
    selection_metric: str = "val_plcc"
    wall_clock_seconds: float = 0.0

    def to_dict(self):
        # wall-clock time is left out so that reports are reproducible byte-for-byte
        return {"epochs": self.epochs, "best_epoch": self.best_epoch, "checkpoint": self.checkpoint,
                "selection_metric": self.selection_metric}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


@dataclass
class FitResult:
    model: GafGatModel
    optimizer: Adam
    report: TrainReport


def _batch_grads(model, graphs, targets, seeds, threads):
    def one(i):
        return model.loss_and_grads(graphs[i], targets[i], "train", int(seeds[i]))

    idx = range(len(graphs))
    if threads > 1 and len(graphs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, idx))
    else:
        results = [one(i) for i in idx]
    # fixed-order reduction keeps the sum independent of scheduling
    n = len(results)
    loss = sum(r[0] for r in results) / n
    grads = {name: sum(r[1][name] for r in results) / n for name in model.params}
    return loss, grads


def predict_graphs(model, graphs):
    return np.array([model.predict(g) for g in graphs])


def fit(graphs, targets, model_config: ModelConfig = ModelConfig(),
        training: TrainingConfig = TrainingConfig(), val_graphs=(), val_targets=(),
        threads=1, epoch_callback=None) -> FitResult:
    """Train on normalised targets; keep the parameters of the best validation epoch.

    With at least two validation samples the selection metric is validation
    PLCC, otherwise the lowest training MSE measured in inference mode.
    ``epoch_callback(row)`` may return True to stop after that epoch.
    """
    targets = np.asarray(targets, dtype=np.float64)
    val_targets = np.asarray(val_targets, dtype=np.float64)
    if len(graphs) != targets.size or len(val_graphs) != val_targets.size:
        raise LengthMismatch("graphs and targets differ in length")
    if not graphs:
        raise LengthMismatch("no training graphs")
    model = GafGatModel.initialize(model_config, training.seed)
    opt = Adam(training.lr)
    use_val = len(val_graphs) >= 2
    report = TrainReport(selection_metric="val_plcc" if use_val else "train_mse")
    best_score, best_params, best_state, stale = -np.inf, None, None, 0
    start = time.perf_counter()

    for epoch in range(training.epochs):
        rng = np.random.default_rng([training.seed, epoch])
        order = rng.permutation(len(graphs))
        seeds = rng.integers(0, 2 ** 63 - 1, size=len(graphs))
        losses = []
        for s in range(0, len(order), training.batch_size):
            b = order[s:s + training.batch_size]
            loss, grads = _batch_grads(model, [graphs[i] for i in b], targets[b], seeds[b], threads)
            opt.step(model.params, grads)
            losses.append((loss, len(b)))
        train_loss = sum(l * n for l, n in losses) / len(graphs)
        row = {"epoch": epoch, "train_loss": train_loss}
        if use_val:
            vp = predict_graphs(model, val_graphs)
            row["val_loss"] = mse_loss(vp, val_targets)
            plcc = pearson(vp, val_targets)
            row["val_plcc"] = 0.0 if plcc is None else plcc
            score = row["val_plcc"]
        else:
            row["train_mse"] = mse_loss(predict_graphs(model, graphs), targets)
            score = -row["train_mse"]
        report.epochs.append(row)
        log.info("epoch %d %s", epoch, " ".join(f"{k}={v:.6g}" for k, v in row.items() if k != "epoch"))
        halt = bool(epoch_callback(row)) if epoch_callback is not None else False
        if score > best_score:
            best_score, stale = score, 0
            report.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            best_state = (opt.state_tensors(), opt.t)
            best_state = ({k: v.copy() for k, v in best_state[0].items()}, best_state[1])
        else:
            stale += 1
            if training.patience and use_val and stale >= training.patience:
                log.info("early stop after epoch %d (best %d)", epoch, report.best_epoch)
                break
        if halt:
            break

    model.params = best_params
    opt.load_state(*best_state)
    report.wall_clock_seconds = time.perf_counter() - start
    return FitResult(model, opt, report)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: GafGatModel, optimizer: Adam, config: PipelineConfig,
                    mos_min: float, mos_max: float, extra: dict | None = None) -> None:
    tensors = dict(model.params)
    tensors.update(optimizer.state_tensors())
    meta = {
        "format": "pcwgat-checkpoint",
        "version": ckpt.VERSION,
        "config": config.to_dict(),
        "pipeline_hash": config.pipeline_hash(),
        "parameter_names": list(model.params),
        "optimizer": optimizer.hyperparameters(),
        "target_normalization": {"mos_min": mos_min, "mos_max": mos_max},
    }
    if extra:
        meta.update(extra)
    ckpt.save(path, tensors, meta)


@dataclass
class LoadedCheckpoint:
    model: GafGatModel
    optimizer: Adam
    config: PipelineConfig
    mos_min: float
    mos_max: float
    meta: dict


def load_checkpoint(path) -> LoadedCheckpoint:
    tensors, meta = ckpt.load(path)
    config = cfgmod.from_dict(meta["config"])
    names = meta["parameter_names"]
    model = GafGatModel(config.model, {n: tensors[n] for n in names})
    opt_meta = meta["optimizer"]
    opt = Adam(opt_meta["lr"], opt_meta["beta1"], opt_meta["beta2"], opt_meta["eps"])
    opt.load_state({k: v for k, v in tensors.items() if k.startswith("adam.")}, opt_meta["t"])
    norm = meta["target_normalization"]
    return LoadedCheckpoint(model, opt, config, norm["mos_min"], norm["mos_max"], meta)


# ---------------------------------------------------------------------------
# manifest-level entry points
# ---------------------------------------------------------------------------

def build_graphs(manifest: DatasetManifest, indices, config: PipelineConfig, cache=None, threads=1):
    cache = cache if cache is not None else GraphCache()
    paths = [manifest.resolve(manifest.entries[i]) for i in indices]
    if threads > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda p: graph_for_file(p, config, cache), paths))
    return [graph_for_file(p, config, cache) for p in paths]


def train(manifest, config: PipelineConfig = PipelineConfig(), out_dir=".", cache=None,
          threads=1, seed=None) -> TrainReport:
    """Split, build graphs, fit, and write ``model.ckpt`` (+ sidecar) and the report JSON."""
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    if seed is not None:
        config = config.replace(training=dataclasses.replace(config.training, seed=seed))
    seed = config.training.seed
    # fail before any expensive work when the manifest points at missing files
    for entry in manifest.entries:
        path = manifest.resolve(entry)
        if not path.is_file():
            raise PipelineError(path, "file not found")
    plan = split_dataset(manifest, seed)
    lo, hi = manifest.mos_min, manifest.mos_max
    mos = np.array([e.mos for e in manifest.entries])
    train_graphs = build_graphs(manifest, plan.train, config, cache, threads)
    val_graphs = build_graphs(manifest, plan.val, config, cache, threads)
    result = fit(train_graphs, normalize_mos(mos[plan.train], lo, hi), config.model, config.training,
                 val_graphs, normalize_mos(mos[plan.val], lo, hi), threads=threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.report.checkpoint = CHECKPOINT_NAME
    save_checkpoint(out / CHECKPOINT_NAME, result.model, result.optimizer, config, lo, hi,
                    extra={"split": plan.to_dict(), "best_epoch": result.report.best_epoch})
    (out / REPORT_NAME).write_text(result.report.to_json())
    return result.report


def predict(checkpoint, cloud_path, pipeline_config: PipelineConfig | None = None,
            cache=None, threads=1) -> float:
    """Score one cloud in MOS units."""
    loaded = checkpoint if isinstance(checkpoint, LoadedCheckpoint) else load_checkpoint(checkpoint)
    if pipeline_config is not None and pipeline_config.pipeline_dict() != loaded.config.pipeline_dict():
        diffs = [f"{s}.{k}" for s, sec in pipeline_config.pipeline_dict().items()
                 for k, v in sec.items() if loaded.config.pipeline_dict()[s].get(k) != v]
        raise ConfigMismatch(f"pipeline config differs from the checkpoint in: {', '.join(diffs)}")
    graph = graph_for_file(cloud_path, loaded.config, cache, threads=threads)
    return float(denormalize(loaded.model.predict(graph), loaded.mos_min, loaded.mos_max))

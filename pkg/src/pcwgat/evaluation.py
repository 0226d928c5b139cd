"""Five-parameter logistic mapping and PLCC / SRCC / KRCC / RMSE."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .errors import ConstantTarget, LengthMismatch, TooFewSamples


@dataclass
class LogisticParams:
    beta: np.ndarray  # (5,)
    residual: float   # sum of squared errors on the fitting data
    linear_only: bool = False

    def __call__(self, y):
        return logistic5(y, self.beta)


@dataclass
class EvalReport:
    n: int
    plcc: float
    srcc: float
    krcc: float
    rmse: float
    rmse_raw: float
    logistic: LogisticParams
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {
            "n": self.n,
            "plcc": self.plcc,
            "srcc": self.srcc,
            "krcc": self.krcc,
            "rmse": self.rmse,
            "rmse_raw": self.rmse_raw,
            "beta": [float(b) for b in self.logistic.beta],
            "flags": list(self.flags),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def table(self):
        rows = [("n", f"{self.n}"), ("PLCC", f"{self.plcc:.4f}"), ("SRCC", f"{self.srcc:.4f}"),
                ("KRCC", f"{self.krcc:.4f}"), ("RMSE", f"{self.rmse:.4f}"), ("RMSE (raw)", f"{self.rmse_raw:.4f}")]
        if self.flags:
            rows.append(("flags", ", ".join(self.flags)))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows) + "\n"


def logistic5(y, beta):
    b1, b2, b3, b4, b5 = beta
    y = np.asarray(y, dtype=np.float64)
    # 1 / (1 + exp(z)) == expit(-z), without overflow
    return b1 * (0.5 - special.expit(-b2 * (y - b3))) + b4 * y + b5


def _pair(pred, mos):
    p = np.asarray(pred, dtype=np.float64).ravel()
    m = np.asarray(mos, dtype=np.float64).ravel()
    if p.shape != m.shape:
        raise LengthMismatch(f"{p.size} predictions vs {m.size} scores")
    return p, m


def _sse(beta, p, m):
    r = logistic5(p, beta) - m
    return float(r @ r)


def _refit_linear_part(beta, p, m):
    """Given beta2, beta3, solve beta1, beta4, beta5 by least squares."""
    basis = np.column_stack([0.5 - special.expit(-beta[1] * (p - beta[2])), p, np.ones_like(p)])
    coef, *_ = np.linalg.lstsq(basis, m, rcond=None)
    return np.array([coef[0], beta[1], beta[2], coef[1], coef[2]])


def fit_logistic(pred, mos, max_iter=2000) -> LogisticParams:
    """Nelder-Mead fit of the logistic mapping, never worse than the best straight line."""
    p, m = _pair(pred, mos)
    if p.size < 5:
        raise TooFewSamples(f"logistic fit needs at least 5 samples, got {p.size}")
    if np.ptp(m) == 0:
        raise ConstantTarget("subjective scores are constant")

    slope, intercept = np.polyfit(p, m, 1) if np.ptp(p) > 0 else (0.0, float(m.mean()))
    linear = np.array([0.0, 0.0, 0.0, slope, intercept])
    best, best_sse, linear_only = linear, _sse(linear, p, m), True

    sd = p.std()
    if sd > 0:
        x0 = np.array([m.max() - m.min(), 1.0 / sd, p.mean(), 0.0, m.mean()])
        res = optimize.minimize(_sse, x0, args=(p, m), method="Nelder-Mead",
                                options={"maxiter": max_iter, "maxfev": 4 * max_iter,
                                         "xatol": 1e-10, "fatol": 1e-10, "adaptive": True})
        cand = _refit_linear_part(res.x, p, m)
        cand_sse = _sse(cand, p, m)
        if not cand_sse <= _sse(res.x, p, m):
            cand, cand_sse = res.x, _sse(res.x, p, m)
        if np.all(np.isfinite(cand)) and cand_sse < best_sse:
            best, best_sse, linear_only = cand, cand_sse, False
    return LogisticParams(best, best_sse, linear_only)


def pearson(x, y) -> float | None:
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    den = np.sqrt((dx @ dx) * (dy @ dy))
    if den == 0:
        return None
    return float(np.clip((dx @ dy) / den, -1.0, 1.0))


def spearman(x, y) -> float | None:
    x, y = _pair(x, y)
    return pearson(stats.rankdata(x), stats.rankdata(y))


def kendall_tau_b(x, y) -> float | None:
    x, y = _pair(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    tau = stats.kendalltau(x, y, variant="b").statistic
    return float(tau)


def correlations(pred, mos) -> EvalReport:
    p, m = _pair(pred, mos)
    n = p.size
    if n < 3:
        raise TooFewSamples(f"need at least 3 samples, got {n}")
    flags = []
    if np.ptp(m) == 0:
        raise ConstantTarget("subjective scores are constant")
    if n >= 5:
        fit = fit_logistic(p, m)
    else:
        slope, intercept = np.polyfit(p, m, 1) if np.ptp(p) > 0 else (0.0, float(m.mean()))
        beta = np.array([0.0, 0.0, 0.0, slope, intercept])
        fit = LogisticParams(beta, _sse(beta, p, m), True)
        flags.append("LinearMappingOnly")
    mapped = fit(p)

    def guard(value, name):
        if value is None:
            if "ConstantInput" not in flags:
                flags.append("ConstantInput")
            return 0.0
        return value

    plcc = guard(pearson(mapped, m), "plcc")
    srcc = guard(spearman(p, m), "srcc")
    krcc = guard(kendall_tau_b(p, m), "krcc")
    rmse = float(np.sqrt(np.mean((mapped - m) ** 2)))
    rmse_raw = float(np.sqrt(np.mean((p - m) ** 2)))
    return EvalReport(n, plcc, srcc, krcc, rmse, rmse_raw, fit, flags)


def write_scatter_csv(pred, mos, fit: LogisticParams, fp) -> None:
    p, m = _pair(pred, mos)
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["pred", "mapped_pred", "mos"])
    for a, b, c in zip(p, fit(p), m):
        w.writerow([f"{a:.9g}", f"{b:.9g}", f"{c:.9g}"])


SPLITS = ("train", "val", "test", "all")


def evaluate_model(checkpoint, manifest, split="test", cache=None, threads=1):
    """Predict every entry of a split and score against MOS.

    Returns ``(report, predictions, mos)`` with predictions in MOS units.
    The split is recomputed from the seed stored in the checkpoint.
    """
    from .pointcloud_io import DatasetManifest, load_manifest
    from .training import LoadedCheckpoint, build_graphs, denormalize, load_checkpoint, split_dataset

    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    loaded = checkpoint if isinstance(checkpoint, LoadedCheckpoint) else load_checkpoint(checkpoint)
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest, allow_degenerate=True)
    if split == "all":
        indices = list(range(len(manifest)))
    else:
        plan = split_dataset(manifest, loaded.config.training.seed)
        indices = getattr(plan, split)
    if not indices:
        raise TooFewSamples(f"split {split!r} is empty")
    graphs = build_graphs(manifest, indices, loaded.config, cache, threads)
    raw = np.array([loaded.model.predict(g) for g in graphs])
    preds = denormalize(raw, loaded.mos_min, loaded.mos_max)
    mos = np.array([manifest.entries[i].mos for i in indices])
    return correlations(preds, mos), preds, mos

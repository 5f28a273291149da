"""Latitude-weighted forecast verification.

Score arrays are laid out ``[D, ..., H, W]`` with the init times ``D``
first; every score averages per-init values over ``D``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .model import ModelConfig, forward_step


@dataclass
class ClimatologyField:
    mean: np.ndarray
    source: str = ""


def compute_climatology(states: np.ndarray, source: str = "") -> ClimatologyField:
    """Per-cell time mean of ``[T, C, H, W]`` states."""
    states = np.asarray(states)
    if states.ndim < 3 or states.shape[0] == 0:
        raise ConfigError("compute_climatology: empty dataset")
    return ClimatologyField(states.mean(axis=0), source)


def _check_pair(forecasts, truths, weights):
    f, t = np.asarray(forecasts, dtype=np.float64), np.asarray(truths, dtype=np.float64)
    if f.shape != t.shape:
        raise ShapeError(f"forecast shape {f.shape} differs from truth {t.shape}")
    if f.ndim < 3 or f.shape[0] == 0:
        raise ShapeError(f"expected [D, ..., H, W] with D > 0, got {f.shape}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (f.shape[-2],):
        raise ShapeError(f"{w.size} latitude weights for {f.shape[-2]} rows")
    return f, t, w[:, None]


def rmse(forecasts, truths, weights) -> np.ndarray | float:
    """Mean over init times of the weighted spatial RMS error."""
    f, t, w = _check_pair(forecasts, truths, weights)
    per_init = np.sqrt((w * (f - t) ** 2).mean(axis=(-2, -1)))
    out = per_init.mean(axis=0)
    return float(out) if np.ndim(out) == 0 else out


def acc_with_skips(forecasts, truths, climatology, weights):
    """ACC and the number of init times skipped for a zero-norm anomaly."""
    f, t, w = _check_pair(forecasts, truths, weights)
    clim = np.asarray(climatology, dtype=np.float64)
    fa, ta = f - clim, t - clim
    num = (w * fa * ta).sum(axis=(-2, -1))
    den = np.sqrt((w * fa * fa).sum(axis=(-2, -1)) * (w * ta * ta).sum(axis=(-2, -1)))
    ok = den > 0
    skipped = (~ok).sum(axis=0)
    corr = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    kept = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(kept > 0, corr.sum(axis=0) / np.maximum(kept, 1), np.nan)
    out = np.clip(out, -1.0, 1.0)
    if np.ndim(out) == 0:
        return float(out), int(skipped)
    return out, skipped


def acc(forecasts, truths, climatology, weights):
    value, skipped = acc_with_skips(forecasts, truths, climatology, weights)
    if np.any(skipped):
        warnings.warn(f"ACC skipped {int(np.sum(skipped))} init time(s) with a zero-norm anomaly")
    return value


def normalized_diff(metric_a: float, metric_b: float, kind: str) -> float:
    """Skill of A relative to baseline B; negative rmse / positive acc means A is better."""
    if kind == "rmse":
        if not metric_b > 0:
            raise ConfigError(f"normalized rmse difference needs a positive baseline, got {metric_b}")
        return (metric_a - metric_b) / metric_b
    if kind == "acc":
        if metric_b == 1:
            raise ConfigError("normalized acc difference undefined for a perfect baseline")
        return (metric_a - metric_b) / (1 - metric_b)
    raise ConfigError(f"kind must be rmse or acc, got {kind!r}")


class LeadTime(NamedTuple):
    days: float
    censored: bool


def skillful_lead_time(leads: Sequence[float], accs: Sequence[float], threshold: float = 0.6) -> LeadTime:
    """Lead (days) where ACC first falls below ``threshold``, linearly interpolated."""
    leads = np.asarray(leads, dtype=np.float64)
    accs = np.asarray(accs, dtype=np.float64)
    if leads.size < 2 or leads.shape != accs.shape:
        raise ConfigError("skillful_lead_time needs at least two (lead, acc) points")
    if np.any(np.diff(leads) <= 0):
        raise ConfigError("leads must be strictly increasing")
    below = np.nonzero(accs < threshold)[0]
    if below.size == 0:
        return LeadTime(float(leads[-1]), True)
    i = int(below[0])
    if i == 0:
        return LeadTime(0.0, False)
    a0, a1 = accs[i - 1], accs[i]
    frac = (a0 - threshold) / (a0 - a1)
    return LeadTime(float(leads[i - 1] + frac * (leads[i] - leads[i - 1])), False)


@dataclass
class MetricRow:
    variable: str
    lead_hours: int
    rmse: float
    acc: float


@dataclass
class MetricsTable:
    rows: list[MetricRow] = field(default_factory=list)
    n_samples: int = 0
    skipped: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "lead_hours", "rmse", "acc"])
            for r in self.rows:
                w.writerow([r.variable, r.lead_hours, repr(float(r.rmse)), repr(float(r.acc))])

    @classmethod
    def from_csv(cls, path) -> "MetricsTable":
        with open(path, newline="") as fh:
            rows = [MetricRow(d["variable"], int(d["lead_hours"]), float(d["rmse"]), float(d["acc"]))
                    for d in csv.DictReader(fh)]
        return cls(rows)

    def series(self, variable: str, metric: str) -> tuple[np.ndarray, np.ndarray]:
        rows = sorted((r for r in self.rows if r.variable == variable), key=lambda r: r.lead_hours)
        return (np.array([r.lead_hours for r in rows]), np.array([getattr(r, metric) for r in rows]))

    def variables(self) -> list[str]:
        return list(dict.fromkeys(r.variable for r in self.rows))

    def lookup(self, variable: str, lead_hours: int) -> MetricRow:
        for r in self.rows:
            if r.variable == variable and r.lead_hours == lead_hours:
                return r
        raise KeyError((variable, lead_hours))


def normalized_diff_table(model: MetricsTable, baseline: MetricsTable, baseline_name: str) -> list[dict]:
    out = []
    for r in model.rows:
        b = baseline.lookup(r.variable, r.lead_hours)
        out.append({"variable": r.variable, "lead_hours": r.lead_hours, "baseline": baseline_name,
                    "rmse_diff": normalized_diff(r.rmse, b.rmse, "rmse"),
                    "acc_diff": normalized_diff(r.acc, b.acc, "acc")})
    return out


def write_diff_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["variable", "lead_hours", "baseline", "rmse_diff", "acc_diff"],
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "rmse_diff": repr(float(r["rmse_diff"])), "acc_diff": repr(float(r["acc_diff"]))})


def rollout_forecasts(params, cfg: ModelConfig, norm_states: np.ndarray, inits: Sequence[int],
                      n_steps: int, batch: int = 64) -> np.ndarray:
    """``[len(inits), n_steps, C, H, W]`` normalised forecasts.

    Init ``t0`` uses states ``t0 - 1`` and ``t0``; step ``s`` forecasts ``t0 + s + 1``.
    """
    inits = np.asarray(inits, dtype=np.int64)
    dtype = np.dtype(cfg.precision)
    out = np.empty((len(inits), n_steps) + norm_states.shape[1:])
    with ad.no_grad():
        for s in range(0, len(inits), batch):
            idx = inits[s:s + batch]
            a = Tensor(norm_states[idx - 1].astype(dtype))
            b = Tensor(norm_states[idx].astype(dtype))
            for k in range(n_steps):
                y = forward_step(params, cfg, a, b)
                out[s:s + len(idx), k] = y.data
                a, b = b, y
    return out


def score_forecasts(forecasts: np.ndarray, truths: np.ndarray, climatology: np.ndarray, weights,
                    lead_steps: Sequence[int], step_hours: int, names: Sequence[str]) -> MetricsTable:
    """Table from physical-unit ``[D, n_steps, C, H, W]`` forecasts and truths."""
    table = MetricsTable(n_samples=forecasts.shape[0])
    for lead in lead_steps:
        f, t = forecasts[:, lead - 1], truths[:, lead - 1]
        r = rmse(f, t, weights)
        a, skipped = acc_with_skips(f, t, climatology, weights)
        table.skipped += int(np.sum(skipped))
        for c, name in enumerate(names):
            table.rows.append(MetricRow(name, int(lead * step_hours), float(r[c]), float(a[c])))
    return table


def evaluate(params, cfg: ModelConfig, dataset, lead_steps: Sequence[int],
             climatology: ClimatologyField | None = None, split: str = "val",
             max_inits: int | None = None, persistence: bool = False) -> MetricsTable:
    """RMSE/ACC per variable and lead over every valid init time of ``split``."""
    lead_steps = sorted(int(s) for s in lead_steps)
    if not lead_steps or lead_steps[0] < 1:
        raise ConfigError("lead steps must be positive")
    if climatology is None:
        climatology = compute_climatology(dataset.split("train"), "train split")
    offset = dataset.train_steps if split == "val" else 0
    n_total = dataset.split(split).shape[0]
    horizon = lead_steps[-1]
    inits = np.arange(offset + 1, offset + n_total - horizon)
    if max_inits is not None:
        inits = inits[:max_inits]
    if inits.size == 0:
        raise ConfigError(f"split {split!r} too short for lead {horizon}")
    norm = dataset.normalize(dataset.states)
    if persistence:
        fc = np.repeat(dataset.states[inits][:, None], horizon, axis=1)
    else:
        fc = rollout_forecasts(params, cfg, norm, inits, horizon)
        fc = fc * dataset.std[None, None, :, None, None] + dataset.mean[None, None, :, None, None]
    truth = np.stack([dataset.states[inits + s + 1] for s in range(horizon)], axis=1)
    return score_forecasts(fc, truth, climatology.mean, dataset.grid.weights(), lead_steps,
                           dataset.step_hours, dataset.channel_names)

"""
Effect sizes, Monte-Carlo baselines and report figures for training runs.

Effect sizes follow Cohen's d with the standard pooled standard deviation
(``n − 1`` weights for both groups). The sign is positive when the
uniform-initialised group has the larger loss, i.e. when RF initialisation
helps.
"""
import csv
import glob
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from strf import prng  # noqa: E402
from strf.exceptions import DatasetError, DomainError, FormatError, UndefinedEffectSize  # noqa: E402
from strf.trainer import RunStats  # noqa: E402
from strf.validators import validate_non_negative  # noqa: E402

log = logging.getLogger(__name__)

MIN_BASELINE_SAMPLES = 10_000
INITS = ("rf", "uniform")
EFFECT_SIZE_COLUMNS = (
    "family",
    "activation",
    "n_rf",
    "n_uniform",
    "mean_rf",
    "mean_uniform",
    "sd_rf",
    "sd_uniform",
    "pooled_sd",
    "cohens_d",
)


@dataclass(frozen=True)
class GroupSummary:
    n: int
    mean: float
    sd: float

    def __post_init__(self):
        if self.n < 2:
            raise DomainError(f"a group summary needs at least two samples, got {self.n}")
        validate_non_negative("sd", self.sd)

    @classmethod
    def from_values(cls, values):
        values = np.asarray(values, dtype=float)
        if len(values) < 2:
            raise DomainError(f"a group summary needs at least two samples, got {len(values)}")
        return cls(n=len(values), mean=float(values.mean()), sd=float(values.std(ddof=1)))


def pooled_sd(g1, g2):
    """
    √(((n₁ − 1)s₁² + (n₂ − 1)s₂²) / (n₁ + n₂ − 2)); zero when both groups have zero spread.
    """
    dof = g1.n + g2.n - 2
    if dof <= 0:
        raise DomainError("pooled sd needs n1 + n2 > 2")
    return math.sqrt(((g1.n - 1) * g1.sd**2 + (g2.n - 1) * g2.sd**2) / dof)


def cohens_d(uniform, rf):
    """
    (mean_uniform − mean_rf) / pooled sd.

    Raises UndefinedEffectSize when the pooled sd is zero.
    """
    pooled = pooled_sd(uniform, rf)
    if pooled == 0.0:
        raise UndefinedEffectSize("effect size is undefined for a zero pooled standard deviation")
    return (uniform.mean - rf.mean) / pooled


def _baseline_shard(rng, side, fixed_center, n):
    first = rng.uniform(0.0, side, (n, 2))
    if fixed_center:
        second = np.full((n, 2), side / 2.0)
    else:
        second = rng.uniform(0.0, side, (n, 2))
    return float(np.sum(np.hypot(*(first - second).T)))


def random_baseline(side, fixed_center=False, n=100_000, seed=0, shards=4, workers=1):
    """
    Monte-Carlo mean distance between random points in a ``side`` × ``side`` square.

    With ``fixed_center`` one of the points is pinned to the centre. Shards use
    independent streams and are summed in shard order, so ``workers`` does not
    change the result.
    """
    validate_non_negative("side", side)
    if n < MIN_BASELINE_SAMPLES:
        raise DomainError(f"random_baseline needs at least {MIN_BASELINE_SAMPLES} samples, got {n}")
    if side == 0:
        return 0.0
    streams = prng.shard_streams(seed, shards, role="baseline")
    sizes = [n // shards + (1 if shard < n % shards else 0) for shard in range(shards)]
    jobs = list(zip(streams, sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sums = list(pool.map(lambda job: _baseline_shard(job[0], side, fixed_center, job[1]), jobs))
    else:
        sums = [_baseline_shard(rng, side, fixed_center, size) for rng, size in jobs]
    return math.fsum(sums) / n


def load_runs(runs_dir):
    """
    Read every RunStats JSON summary directly inside ``runs_dir``.
    """
    paths = sorted(glob.glob(os.path.join(runs_dir, "*.json")))
    runs = []
    for path in paths:
        if os.path.basename(path) == "config.json":
            continue
        try:
            with open(path) as stream:
                runs.append(RunStats.from_dict(json.load(stream)))
        except OSError as exc:
            raise DatasetError(f"{path}: {exc}") from exc
        except (json.JSONDecodeError, TypeError) as exc:
            raise FormatError(f"{path}: not a run summary: {exc}") from exc
    log.info("Loaded %d runs from %s", len(runs), runs_dir)
    return runs


def _groups(runs):
    groups = {}
    for run in runs:
        groups.setdefault((run.family, run.activation), {}).setdefault(run.init, []).append(run)
    return groups


def effect_size_table(runs, metric="best_val_loss"):
    """
    One row per (family, activation) comparing RF against uniform initialisation on ``metric``.

    Rows whose groups are too small or have zero spread carry ``None`` as effect size.
    """
    rows = []
    for (family, activation), by_init in sorted(_groups(runs).items()):
        rf = [getattr(run, metric) for run in by_init.get("rf", [])]
        uniform = [getattr(run, metric) for run in by_init.get("uniform", [])]
        row = dict(family=family, activation=activation, n_rf=len(rf), n_uniform=len(uniform))
        row.update(mean_rf=_mean(rf), mean_uniform=_mean(uniform), sd_rf=None, sd_uniform=None)
        row.update(pooled_sd=None, cohens_d=None)
        if len(rf) >= 2 and len(uniform) >= 2:
            g_rf, g_uniform = GroupSummary.from_values(rf), GroupSummary.from_values(uniform)
            row.update(sd_rf=g_rf.sd, sd_uniform=g_uniform.sd, pooled_sd=pooled_sd(g_uniform, g_rf))
            try:
                row["cohens_d"] = cohens_d(g_uniform, g_rf)
            except UndefinedEffectSize:
                log.warning("Effect size undefined for %s/%s: both groups have zero spread", family, activation)
        else:
            log.warning("Not enough runs to compare initialisations for %s/%s", family, activation)
        rows.append(row)
    return rows


def _mean(values):
    return float(np.mean(values)) if values else None


def write_effect_sizes_csv(rows, path):
    with open(path, "w", newline="") as stream:
        writer = csv.DictWriter(stream, fieldnames=EFFECT_SIZE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: "undefined" if row[key] is None else row[key] for key in EFFECT_SIZE_COLUMNS})


def _save(figure, path):
    figure.tight_layout()
    figure.savefig(path, format="svg")
    plt.close(figure)
    log.debug("Wrote %s", path)
    return path


def plot_effect_sizes(runs, path, metric="best_val_loss"):
    """
    Strip plot of the final losses per activation, RF and uniform side by side.
    """
    groups = _groups(runs)
    figure, ax = plt.subplots(figsize=(max(4, 1.5 * len(groups)), 4))
    labels = []
    for position, ((family, activation), by_init) in enumerate(sorted(groups.items())):
        labels.append(f"{family}\n{activation}" if family else activation)
        for offset, (init, color) in zip((-0.15, 0.15), (("rf", "tab:blue"), ("uniform", "tab:orange"))):
            values = [getattr(run, metric) for run in by_init.get(init, [])]
            label = init if position == 0 else None
            ax.scatter(np.full(len(values), position + offset), values, color=color, label=label)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_ylabel("validation loss (px)")
    if labels:
        ax.legend()
    return _save(figure, path)


def plot_per_bin(runs, path):
    """
    Mean loss per scale or velocity bin, one bar group per (activation, init).
    """
    groups = {}
    for run in runs:
        groups.setdefault(f"{run.activation}/{run.init}", []).append(run.per_bin_loss)
    bins = sorted({key for per_run in groups.values() for losses in per_run for key in losses}, key=int)
    figure, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(1, len(groups))
    for index, (label, per_run) in enumerate(sorted(groups.items())):
        means = [np.mean([losses[b] for losses in per_run if b in losses]) for b in bins]
        ax.bar(np.arange(len(bins)) + index * width, means, width=width, label=label)
    ax.set_xticks(np.arange(len(bins)) + 0.4 - width / 2)
    ax.set_xticklabels([f"bin {b}" for b in bins])
    ax.set_ylabel("validation loss (px)")
    if groups:
        ax.legend(fontsize="small")
    return _save(figure, path)


def plot_mu_trajectories(runs, path):
    """
    Relative μ variance against epoch for every run.
    """
    figure, ax = plt.subplots(figsize=(6, 4))
    for run in sorted(runs, key=lambda run: run.name):
        color = "tab:blue" if run.init == "rf" else "tab:orange"
        ax.plot(range(len(run.mu_relative_variance)), run.mu_relative_variance, color=color, alpha=0.7, label=run.name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("relative variance of μ")
    return _save(figure, path)


def plot_mu_channels(runs, path):
    """
    μ of every temporal channel against epoch; one panel per trained block and init.
    """
    runs = sorted((run for run in runs if run.mu_channels), key=lambda run: run.name)
    n_blocks = max((len(run.mu_channels[0]) for run in runs), default=1)
    figure, axes = plt.subplots(n_blocks, 2, figsize=(8, 3 * n_blocks), squeeze=False, sharex=True)
    for column, init in enumerate(INITS):
        axes[0, column].set_title(init)
        for run in (run for run in runs if run.init == init):
            trajectory = np.asarray(run.mu_channels)
            for block in range(trajectory.shape[1]):
                axes[block, column].plot(trajectory[:, block, :], alpha=0.6)
        for block in range(n_blocks):
            axes[block, column].set_ylabel(f"block {block + 1} μ")
        axes[-1, column].set_xlabel("epoch")
    return _save(figure, path)


def plot_bank(bank, path, columns=12):
    """
    Grid of every kernel of a KernelBank.
    """
    weights = bank.weights()
    rows = int(math.ceil(len(weights) / columns))
    figure, axes = plt.subplots(rows, columns, figsize=(columns, rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, kernel in zip(axes.flat, weights):
        limit = float(np.abs(kernel).max()) or 1.0
        ax.imshow(kernel, cmap="RdBu_r", vmin=-limit, vmax=limit)
    return _save(figure, path)


def write_report(runs_dir, out_dir, resolution=None, seed=0):
    """
    Effect-size CSV, baseline JSON and SVG figures for the runs in ``runs_dir``.
    """
    runs = load_runs(runs_dir)
    if not runs:
        raise DatasetError(f"{runs_dir}: no run summaries found")
    os.makedirs(out_dir, exist_ok=True)
    rows = effect_size_table(runs)
    outputs = {"effect_sizes": os.path.join(out_dir, "effect_sizes.csv")}
    write_effect_sizes_csv(rows, outputs["effect_sizes"])
    if resolution:
        baseline = {
            "side": resolution,
            "free": random_baseline(resolution, seed=seed),
            "fixed_center": random_baseline(resolution, fixed_center=True, seed=seed),
        }
        outputs["baseline"] = os.path.join(out_dir, "baseline.json")
        with open(outputs["baseline"], "w") as stream:
            json.dump(baseline, stream, sort_keys=True, indent=2)
    outputs["effect_size_plot"] = plot_effect_sizes(runs, os.path.join(out_dir, "effect_sizes.svg"))
    outputs["per_bin_plot"] = plot_per_bin(runs, os.path.join(out_dir, "per_bin.svg"))
    outputs["mu_plot"] = plot_mu_trajectories(runs, os.path.join(out_dir, "mu_trajectories.svg"))
    if any(run.mu_channels for run in runs):
        outputs["mu_channel_plot"] = plot_mu_channels(runs, os.path.join(out_dir, "mu_channels.svg"))
    log.info("Report for %d runs written to %s", len(runs), out_dir)
    return rows, outputs

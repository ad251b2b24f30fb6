"""Run metrics: append-only CSV logs, summary statistics, accuracy plots.

CSV columns: step,l_l,l_p,l_s,mask_rate,lr,wall_time_s,eval_error,ema
Rows are persisted atomically (write to a temp file, then rename), steps
strictly increasing within a file. Two reporting conventions are computed
per run: the minimum evaluation error over the whole run ("min") and the
median of the last 20 evaluations ("last 20").
"""

import math
import os
import statistics
from dataclasses import dataclass

COLUMNS = ("step", "l_l", "l_p", "l_s", "mask_rate", "lr", "wall_time_s", "eval_error", "ema")
LAST_K_EVALS = 20

# Benchmark-scale reference results (CIFAR-100, 10,000 labels, 352k steps) in
# percent test error, mean±std over folds. Documentation context only: desk
# runs are not expected to reproduce them.
FULL_SCALE_REFERENCE = {"last20": "21.69±0.26", "min": "21.22±0.17"}


@dataclass
class MetricRow:
    step: int
    l_l: float
    l_p: float
    l_s: float
    mask_rate: float
    lr: float
    wall_time_s: float
    eval_error: float = None  # None for non-evaluation rows
    ema: bool = True          # whether eval_error used the EMA shadow


def _format_row(row):
    vals = [str(row.step)]
    for v in (row.l_l, row.l_p, row.l_s, row.mask_rate, row.lr, row.wall_time_s):
        vals.append(repr(float(v)))
    vals.append("" if row.eval_error is None else repr(float(row.eval_error)))
    vals.append("1" if row.ema else "0")
    return ",".join(vals)


class MetricLog:
    """Single-writer per-run CSV log."""

    def __init__(self, path):
        self.path = path
        self.rows = []

    def append_row(self, row):
        if self.rows and row.step <= self.rows[-1].step:
            raise ValueError("step regression: %d after %d" % (row.step, self.rows[-1].step))
        self.rows.append(row)
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(",".join(COLUMNS) + "\n")
            for r in self.rows:
                fh.write(_format_row(r) + "\n")
        os.replace(tmp, self.path)
        return self

    @property
    def eval_errors(self):
        return [r.eval_error for r in self.rows if r.eval_error is not None]

    @staticmethod
    def load(path):
        log = MetricLog(path)
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != ",".join(COLUMNS):
                raise ValueError("unexpected CSV header in %s" % path)
            for line in fh:
                parts = line.rstrip("\n").split(",")
                if len(parts) != len(COLUMNS):
                    continue  # tolerate a partially written final line
                try:
                    row = MetricRow(
                        step=int(parts[0]), l_l=float(parts[1]), l_p=float(parts[2]),
                        l_s=float(parts[3]), mask_rate=float(parts[4]), lr=float(parts[5]),
                        wall_time_s=float(parts[6]),
                        eval_error=float(parts[7]) if parts[7] else None,
                        ema=parts[8] == "1")
                except ValueError:
                    continue
                log.rows.append(row)
        return log


@dataclass
class RunStats:
    min_error: float
    last20_median: float
    n_evals: int
    short_window: bool  # fewer than LAST_K_EVALS evaluations available


def run_stats(log):
    errs = log.eval_errors
    if not errs:
        raise ValueError("no evaluation data in %s" % getattr(log, "path", "<log>"))
    window = errs[-LAST_K_EVALS:]
    return RunStats(min(errs), statistics.median(window), len(errs),
                    short_window=len(errs) < LAST_K_EVALS)


def format_mean_std(mean, std):
    return "%.2f±%.2f" % (mean, std)


@dataclass
class Summary:
    min_mean: float
    min_std: float
    last20_mean: float
    last20_std: float
    n_runs: int
    any_short_window: bool

    @property
    def min_formatted(self):
        return format_mean_std(self.min_mean, self.min_std)

    @property
    def last20_formatted(self):
        return format_mean_std(self.last20_mean, self.last20_std)


def summarize(logs):
    """Mean and std of min-error and last-20-median error across fold runs."""
    if not logs:
        raise ValueError("summarize needs at least one run log")
    stats = [run_stats(log) for log in logs]
    mins = [s.min_error for s in stats]
    meds = [s.last20_median for s in stats]
    std = lambda xs: statistics.pstdev(xs) if len(xs) > 1 else 0.0
    return Summary(statistics.fmean(mins), std(mins), statistics.fmean(meds), std(meds),
                   len(stats), any(s.short_window for s in stats))


def plot_accuracy_curves(panels, out_path):
    """Accuracy-vs-step line chart; one panel per dataset, one curve per method.

    panels: mapping dataset-name -> mapping method-name -> list of MetricLog.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not panels:
        raise ValueError("no panels to plot")
    fig, axes = plt.subplots(len(panels), 1, figsize=(6, 3.2 * len(panels)), squeeze=False)
    for ax, (dataset, groups) in zip(axes[:, 0], sorted(panels.items())):
        if not groups:
            raise ValueError("empty method group for panel %r" % dataset)
        for method, logs in sorted(groups.items()):
            for i, log in enumerate(logs):
                pts = [(r.step, 100.0 * (1.0 - r.eval_error)) for r in log.rows
                       if r.eval_error is not None and math.isfinite(r.eval_error)]
                if not pts:
                    raise ValueError("no evaluation data for method %r" % method)
                pts.sort()
                xs, ys = zip(*pts)
                ax.plot(xs, ys, label=method if i == 0 else None)
        ax.set_title(dataset)
        ax.set_xlabel("Training step")
        ax.set_ylabel("Accuracy (%)")
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path

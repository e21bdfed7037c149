"""Artifacts written by the CLI: CSV tables, verdict JSON, .dat columns and PNG figures.

Every text file starts with ``#`` lines naming the tool version and config
hash.  Numbers go out with 17 significant digits so reruns compare byte for
byte; figures are rendered with the Agg backend and without the software
stamp for the same reason.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .sim.io import header_lines  # noqa: E402

PNG_META = {"Software": None}


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


@dataclass
class Report:
    """Collects the files of one run under ``out_dir``."""

    out_dir: Path
    config_hash: str
    command: str
    figures: bool = True
    written: list = field(default_factory=list)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.written.append(p)
        return p

    def table(self, name: str, columns: Sequence[str], rows: Iterable[Sequence], **extra) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            for line in header_lines(self.config_hash, command=self.command, **extra):
                fh.write(line + "\n")
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(fmt(v) for v in row) + "\n")
        return p

    def dat(self, name: str, columns: Sequence[str], data: np.ndarray) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            for line in header_lines(self.config_hash, command=self.command):
                fh.write(line + "\n")
            fh.write("# " + " ".join(columns) + "\n")
            for row in np.atleast_2d(data):
                fh.write(" ".join(fmt(float(v)) for v in row) + "\n")
        return p

    def verdict(self, checks, **extra) -> Path:
        p = self.path("verdict.json")
        body = {
            "tool": "membrane-lab",
            "version": __version__,
            "config_hash": self.config_hash,
            "command": self.command,
            "passed": all(c.passed for c in checks),
            "checks": [{"name": c.name, "passed": bool(c.passed), "detail": c.detail} for c in checks],
        }
        body.update(extra)
        p.write_text(json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n",
                     encoding="utf-8")
        return p

    def log(self, lines: Sequence[str]) -> Path:
        p = self.path("run.log")
        text = header_lines(self.config_hash, command=self.command) + list(lines)
        p.write_text("\n".join(text) + "\n", encoding="utf-8")
        return p

    def figure(self, name: str, fig) -> Path | None:
        if not self.figures:
            plt.close(fig)
            return None
        p = self.path(name)
        fig.savefig(p, dpi=110, metadata=PNG_META)
        plt.close(fig)
        return p


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def fig_exit_stats(rows: Sequence[tuple[str, float, float, float]]):
    """Bars of estimate/theory with CI whiskers, one panel per statistic."""
    fig, axes = plt.subplots(1, len(rows), figsize=(3.0 * len(rows), 3.0))
    for ax, (label, est, hw, theory) in zip(np.atleast_1d(axes), rows):
        ax.bar([0], [est], yerr=[hw], color="0.7", capsize=4, label="Monte Carlo")
        ax.axhline(theory, color="C3", lw=1.5, label="theory")
        ax.set_xticks([])
        ax.set_title(label, fontsize=9)
    np.atleast_1d(axes)[0].legend(fontsize=7, frameon=False)
    fig.tight_layout()
    return fig


def fig_paths(times, x, terminal, title: str, n_show: int = 20):
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    for row in x[:n_show]:
        ax0.plot(times, row, lw=0.6)
    ax0.set_xlabel("t")
    ax0.set_ylabel("X")
    ax0.set_title(title, fontsize=9)
    ax1.hist(terminal, bins=60, density=True, color="0.6")
    ax1.set_xlabel("X at the horizon")
    fig.tight_layout()
    return fig


def fig_convergence(table, prelimit: dict, limit_samples=None, cdf=None):
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    eps = table.epsilons
    ax0.loglog(eps, np.maximum(table.distances, 1e-12), "o-")
    if table.noise_floor > 0:
        ax0.axhline(table.noise_floor, color="0.5", ls="--", lw=1, label="95% null level")
        ax0.legend(fontsize=7, frameon=False)
    ax0.set_xlabel("eps")
    ax0.set_ylabel(table.statistic)
    ax0.set_title(table.scenario, fontsize=9)
    smallest = min(prelimit)
    xs = np.sort(prelimit[smallest])
    ax1.step(xs, np.arange(1, xs.size + 1) / xs.size, where="post", label=f"prelimit eps={smallest:g}")
    if limit_samples is not None:
        ls = np.sort(limit_samples)
        ax1.step(ls, np.arange(1, ls.size + 1) / ls.size, where="post", label="limit solver")
    if cdf is not None:
        grid = np.linspace(xs[0], xs[-1], 300)
        ax1.plot(grid, cdf(grid), "k--", lw=1, label="exact law")
    ax1.legend(fontsize=7, frameon=False)
    ax1.set_xlabel("X")
    fig.tight_layout()
    return fig


def fig_local_time(times, scaled, limit, eps_list, mean_sups):
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    for s, l in zip(scaled[:10], limit[:10]):
        ax0.plot(times, s, lw=0.6)
        ax0.plot(times, l, "k:", lw=0.6)
    ax0.set_xlabel("t")
    ax0.set_ylabel("scaled local-time sum")
    ax1.loglog(eps_list, mean_sups, "o-")
    ax1.set_xlabel("eps")
    ax1.set_ylabel("mean sup discrepancy")
    fig.tight_layout()
    return fig


def fig_ode(times, x, title: str):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(times, x)
    ax.set_xlabel("t")
    ax.set_ylabel("X")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return fig

"""Machine-readable reports, run manifests, and rendered figures.

Every CLI command writes line-delimited JSON reports (header line first)
plus a manifest sufficient to re-run it bit-identically. The report path
also renders matplotlib figures next to the delimited output; figures are a
convenience view, so the determinism contract and the manifest hash list
cover the delimited artifacts and checkpoints, while volatile artifacts
(timings, figures) are listed without participating in reproducibility
checks.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = [
    "REPORT_VERSION",
    "sha256_file",
    "write_report",
    "read_report",
    "RunManifest",
    "render_eval_figure",
    "render_sweep_figure",
    "render_bench_figure",
    "render_training_figure",
    "render_ablation_figure",
]

REPORT_VERSION = 1

METRIC_KEYS = ("nmi", "ami", "ri", "ari", "f1")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_report(path, schema: str, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": schema, "version": REPORT_VERSION}, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_report(path) -> tuple[dict, list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "schema" not in lines[0]:
        raise ValueError(f"{path}: missing report header")
    return lines[0], lines[1:]


@dataclass
class RunManifest:
    """Everything needed to re-run a command and check its outputs.

    `outputs` maps artifact paths to sha256 digests; `volatile_outputs` lists
    artifacts whose bytes legitimately vary between runs (timings, rendered
    figures) and are therefore outside the reproducibility contract.
    """

    command: str
    argv: list[str]
    config: dict
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    volatile_outputs: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0
    created_unix: float = field(default_factory=time.time)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def add_volatile(self, path) -> None:
        self.volatile_outputs.append(str(path))

    def write(self, path) -> None:
        record = {
            "schema": "cactus-kit/manifest",
            "version": REPORT_VERSION,
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "volatile_outputs": self.volatile_outputs,
            "wall_clock_s": self.wall_clock_s,
            "created_unix": self.created_unix,
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# figures


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_eval_figure(means: dict[str, float], per_set_rows: list[dict], path) -> None:
    """Corpus means as bars plus the per-set AMI distribution."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    keys = [k for k in METRIC_KEYS if k in means]
    ax1.bar(range(len(keys)), [means[k] for k in keys], color="#4878d0")
    ax1.set_xticks(range(len(keys)), [k.upper() for k in keys])
    ax1.set_ylim(0, 1.05)
    ax1.set_title("corpus means")
    amis = [row["ami"] for row in per_set_rows if "ami" in row]
    if amis:
        ax2.hist(amis, bins=20, color="#6acc64", edgecolor="black", linewidth=0.4)
    ax2.set_xlabel("per-set AMI")
    ax2.set_title("AMI distribution")
    _save(fig, path)


def render_sweep_figure(rows: list[dict], best_theta: float, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    thetas = [row["theta"] for row in rows]
    for key in METRIC_KEYS:
        if key in rows[0]:
            ax.plot(thetas, [row[key] for row in rows], marker=".", label=key.upper())
    ax.axvline(best_theta, color="gray", linestyle="--", linewidth=1, label=f"best={best_theta}")
    ax.set_xlabel("stopping threshold")
    ax.set_ylabel("corpus mean")
    ax.legend(fontsize=8)
    _save(fig, path)


def render_bench_figure(rows: list[dict], path) -> None:
    """Scoring cost versus set size, one line per attention mode."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.5, 3.4))
    modes = sorted({row["mode"] for row in rows})
    for mode in modes:
        sub = sorted((r for r in rows if r["mode"] == mode), key=lambda r: (r["n"], r["l"]))
        xs = [r["n"] * r["l"] for r in sub]
        ax1.plot(xs, [r["logit_count"] for r in sub], marker="o", label=mode)
        ax2.plot(xs, [r["peak_scoring_bytes"] for r in sub], marker="o", label=mode)
    for ax, title in ((ax1, "logits per layer per head"), (ax2, "peak scoring-buffer bytes")):
        ax.set_xlabel("total tokens")
        ax.set_yscale("log")
        ax.set_title(title)
        ax.legend(fontsize=8)
    _save(fig, path)


def render_training_figure(rows: list[dict], path) -> None:
    epochs = [r["epoch"] for r in rows]
    fig, ax1 = plt.subplots(figsize=(6, 3.4))
    losses = [r["loss"] for r in rows]
    if any(l is not None for l in losses):
        ax1.plot(epochs, losses, color="#d65f5f", marker="o", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [r["combined"] for r in rows], color="#4878d0", marker="s",
             label="valid combined")
    ax2.set_ylabel("valid NMI+AMI+RI+ARI")
    fig.legend(loc="lower right", fontsize=8)
    _save(fig, path)


def render_ablation_figure(rows: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(7.5, 3.6))
    labels = [f"{r['mode']}\n{r['loss']}\n{'pre' if r['pretrain'] else 'scratch'}" for r in rows]
    ax.bar(range(len(rows)), [r["ami"] for r in rows], color="#4878d0")
    ax.set_xticks(range(len(rows)), labels, fontsize=6)
    ax.set_ylabel("test AMI")
    _save(fig, path)

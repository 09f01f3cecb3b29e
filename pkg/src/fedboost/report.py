"""Summary rendering: delimited tables, a markdown table, and figures.

The summary mirrors the reference results layout: one column per dataset,
rows for the centralized model, the pooled local-party average, and each
sample-skew scheme's federated run. Figures land next to the tables as PNG
files: an F1 bar chart per dataset and the federated training-loss curves.
"""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

SCHEME_LABELS = {
    "even": "Sample Even",
    "A": "Sample Split A",
    "B": "Sample Split B",
    "C": "Sample Split C",
    "D": "Sample Split D",
}


def _fmt(value) -> str:
    if value is None:
        return "--"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def _table_rows(summary: dict) -> tuple[list[str], list[list]]:
    datasets = [block["dataset"] for block in summary["datasets"]]
    header = [""] + datasets
    schemes: list[str] = []
    for block in summary["datasets"]:
        for scheme in block["schemes"]:
            if scheme not in schemes:
                schemes.append(scheme)

    rows = []
    centralized = ["Centralized"]
    local = ["Local Party"]
    for block in summary["datasets"]:
        centralized.append(block["centralized"].get("f1"))
        local.append(block["local_party_avg"].get("f1"))
    rows.append(centralized)
    rows.append(local)
    for scheme in schemes:
        row = [SCHEME_LABELS.get(scheme, scheme)]
        for block in summary["datasets"]:
            cell = block["federated"].get(scheme, {})
            row.append(cell.get("f1"))
        rows.append(row)
    return header, rows


def write_summary(summary: dict, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "summary.json", "w") as handle:
        json.dump(summary, handle, indent=2)

    header, rows = _table_rows(summary)
    with open(out_dir / "summary.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0]] + [_fmt(v) for v in row[1:]])

    lines = [
        "# F1 scores by training mode and partition scheme",
        "",
        f"Config hash: `{summary['config_hash']}`",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * len(header)) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join([row[0]] + [_fmt(v) for v in row[1:]]) + " |")
    lines.append("")
    (out_dir / "summary.md").write_text("\n".join(lines))


def render_figures(summary: dict, out_dir: Path) -> list[Path]:
    """F1 bar chart and federated loss curves; returns the written paths."""
    figures_dir = Path(out_dir) / "figures"
    figures_dir.mkdir(parents=True, exist_ok=True)
    written = []

    header, rows = _table_rows(summary)
    datasets = header[1:]
    modes = [row[0] for row in rows]
    n_groups, n_bars = len(datasets), len(modes)
    if n_groups and n_bars:
        fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * n_groups), 4.0))
        width = 0.8 / n_bars
        for b, row in enumerate(rows):
            values = [v if isinstance(v, (int, float)) else 0.0 for v in row[1:]]
            offsets = [g + (b - (n_bars - 1) / 2) * width for g in range(n_groups)]
            ax.bar(offsets, values, width=width, label=row[0])
        ax.set_xticks(range(n_groups))
        ax.set_xticklabels(datasets)
        ax.set_ylabel("F1 (holdout)")
        ax.set_ylim(0.0, 1.0)
        ax.legend(fontsize=8, ncol=2)
        ax.set_title("F1 by training mode and partition scheme")
        fig.tight_layout()
        path = figures_dir / "f1_scores.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    for block in summary["datasets"]:
        curves = {
            scheme: cell
            for scheme, cell in block["federated"].items()
            if isinstance(cell, dict) and "f1" in cell
        }
        histories = _load_histories(block, summary, out_dir)
        if not histories:
            continue
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for scheme, history in histories.items():
            ax.plot(
                [h["round"] for h in history],
                [h["train_loss"] for h in history],
                label=SCHEME_LABELS.get(scheme, scheme),
            )
        ax.set_xlabel("boosting round")
        ax.set_ylabel("mean training log-loss")
        ax.set_title(f"{block['dataset']}: federated training loss")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = figures_dir / f"loss_{block['dataset']}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def _load_histories(block: dict, summary: dict, out_dir: Path) -> dict:
    histories = {}
    for scheme in block["schemes"]:
        metrics_path = Path(out_dir) / block["dataset"] / scheme / "federated" / "metrics.json"
        if not metrics_path.exists():
            continue
        with open(metrics_path) as handle:
            cell = json.load(handle)
        if cell.get("history"):
            histories[scheme] = cell["history"]
    return histories

"""
Report generation and export for selfgate
Writes metrics JSON, category and sweep CSV tables, and Markdown summaries
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from evaluator import format_mean_std

logger = logging.getLogger(__name__)

LINK_METRICS = ["MRR", "H@10", "H@3", "H@1"]
NODE_METRICS = ["accuracy"]
SWEEP_KEYS = ["layers", "variant", "seed"]


def metric_columns(task: str) -> List[str]:
    return LINK_METRICS if task == "link-prediction" else NODE_METRICS


def write_json(path: str, payload: Any) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_csv(path: str, frame: pd.DataFrame) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _cell(value: Optional[float]) -> str:
    return "" if value is None or (isinstance(value, float) and np.isnan(value)) else f"{value:.6f}"


class ReportGenerator:
    """Builds the tables and Markdown summaries the CLI writes to disk"""

    # Sweep tables

    def sweep_table(self, rows: Sequence[Dict[str, Any]], task: str) -> pd.DataFrame:
        """Member rows in cell order, then one mean±std row per (layers, variant)"""
        metrics = metric_columns(task)
        columns = SWEEP_KEYS + metrics + ["lr", "status", "error"]
        out = []
        for row in rows:
            out.append({
                "layers": row["layers"],
                "variant": row["variant"],
                "seed": str(row["seed"]),
                **{m: _cell(row.get(m)) for m in metrics},
                "lr": _cell(row.get("lr")),
                "status": row.get("status", "ok"),
                "error": row.get("error") or "",
            })
        summary = self.sweep_summary(rows, task)
        for _, agg in summary.iterrows():
            entry = {"layers": int(agg["layers"]), "variant": agg["variant"], "seed": "mean±std",
                     "lr": "", "status": f"{int(agg['runs'])} ok", "error": ""}
            for m in metrics:
                mean, std = agg[f"{m}_mean"], agg[f"{m}_std"]
                entry[m] = "" if np.isnan(mean) else format_mean_std(mean, std, digits=6)
            out.append(entry)
        return pd.DataFrame(out, columns=columns)

    def sweep_summary(self, rows: Sequence[Dict[str, Any]], task: str) -> pd.DataFrame:
        """Numeric mean and population std per (layers, variant) over successful rows"""
        metrics = metric_columns(task)
        columns = ["layers", "variant", "runs"] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")]
        if not rows:
            return pd.DataFrame(columns=columns)
        frame = pd.DataFrame(list(rows))
        frame["status"] = frame["status"].fillna("ok") if "status" in frame else "ok"
        groups = []
        for (layers, variant), group in frame.groupby(["layers", "variant"], sort=False):
            ok = group[group["status"] == "ok"]
            entry = {"layers": layers, "variant": variant, "runs": len(ok)}
            for m in metrics:
                values = ok[m].astype(float).to_numpy() if m in ok and len(ok) else np.array([])
                entry[f"{m}_mean"] = float(values.mean()) if values.size else float("nan")
                entry[f"{m}_std"] = float(values.std()) if values.size else float("nan")
            groups.append(entry)
        return pd.DataFrame(groups, columns=columns)

    def best_layers(self, summary: pd.DataFrame, task: str) -> pd.DataFrame:
        """Per variant, the depth with the best mean of the headline metric"""
        headline = f"{metric_columns(task)[0]}_mean"
        rows = []
        for variant, group in summary.groupby("variant", sort=False):
            group = group.dropna(subset=[headline])
            if group.empty:
                continue
            best = group.loc[group[headline].idxmax()]
            rows.append({"variant": variant, "best_layers": int(best["layers"]),
                         headline: float(best[headline]),
                         headline.replace("_mean", "_std"): float(best[headline.replace("_mean", "_std")])})
        return pd.DataFrame(rows)

    # Markdown

    def _header(self, title: str) -> str:
        return f"# {title}\n\n---\n"

    def _format_percent_chart(self, table: pd.DataFrame) -> str:
        """Category shares as a text bar chart"""
        chart = ""
        for _, row in table.iterrows():
            bar = "█" * int(row["percent"] / 5)
            chart += f"- **C{int(row['category'])}**: {int(row['count'])} ({row['percent']:.1f}%) {bar}\n"
        return chart

    def metrics_markdown(self, title: str, metrics: Dict[str, Any], context: Dict[str, Any]) -> str:
        sections = [self._header(title)]
        sections.append("## Run\n\n" + "".join(f"- **{k}**: {v}\n" for k, v in context.items()))
        lines = ["## Metrics", "", "| metric | value |", "|---|---|"]
        for key, value in metrics.items():
            shown = f"{value:.6f}" if isinstance(value, float) else str(value)
            lines.append(f"| {key} | {shown} |")
        sections.append("\n".join(lines) + "\n")
        return "\n".join(sections)

    def category_markdown(self, table: pd.DataFrame, entity_mrr: float, trend: str,
                          pass_rates: Sequence[float], context: Dict[str, Any]) -> str:
        sections = [self._header("Self-filter gate analysis")]
        sections.append("## Run\n\n" + "".join(f"- **{k}**: {v}\n" for k, v in context.items()))
        sections.append("## Category shares\n\n" + self._format_percent_chart(table))
        lines = ["## Per-category ranking", "", "| category | count | percent | MRR | H@10 | H@3 | H@1 |",
                 "|---|---|---|---|---|---|---|"]
        for _, row in table.iterrows():
            lines.append(f"| C{int(row['category'])} | {int(row['count'])} | {row['percent']:.2f} | "
                         f"{row['MRR']:.4f} | {row['H@10']:.4f} | {row['H@3']:.4f} | {row['H@1']:.4f} |")
        sections.append("\n".join(lines) + "\n")
        rates = ", ".join(f"{rate:.3f}" for rate in pass_rates)
        sections.append(
            "## Summary\n\n"
            f"- **Entity-level MRR**: {entity_mrr:.6f}\n"
            f"- **MRR trend with gate passes**: {trend}\n"
            f"- **Gate pass rate per layer**: {rates}\n"
        )
        return "\n".join(sections)

    def sweep_markdown(self, summary: pd.DataFrame, best: pd.DataFrame, task: str) -> str:
        metrics = metric_columns(task)
        sections = [self._header("Layer-depth sweep")]
        lines = ["## Mean ± std per depth", "",
                 "| layers | variant | runs | " + " | ".join(metrics) + " |",
                 "|---|---|---|" + "---|" * len(metrics)]
        for _, row in summary.iterrows():
            cells = [format_mean_std(row[f"{m}_mean"], row[f"{m}_std"]) if not np.isnan(row[f"{m}_mean"]) else "n/a"
                     for m in metrics]
            lines.append(f"| {int(row['layers'])} | {row['variant']} | {int(row['runs'])} | " + " | ".join(cells) + " |")
        sections.append("\n".join(lines) + "\n")
        if not best.empty:
            headline = f"{metrics[0]}_mean"
            sections.append("## Best depth per variant\n\n" + "".join(
                f"- **{row['variant']}**: {int(row['best_layers'])} layers ({metrics[0]} {row[headline]:.4f})\n"
                for _, row in best.iterrows()))
        return "\n".join(sections)

    # Run history

    def runs_table(self, runs: Sequence[Dict[str, Any]]) -> str:
        if not runs:
            return "No recorded runs.\n"
        frame = pd.DataFrame(list(runs))
        return frame.to_string(index=False) + "\n"

    def run_details(self, run: Dict[str, Any]) -> str:
        """One recorded run: its index fields, metrics and the resolved config"""
        lines = [f"Run {run['id']} ({run['command']}, {run['status']}) at {run['timestamp']}"]
        for key in ("dataset", "task", "encoder", "decoder", "variant", "layers", "seed", "out_dir"):
            if run.get(key) is not None:
                lines.append(f"  {key}: {run[key]}")
        if run.get("error"):
            lines.append(f"  error: {run['error']}")
        if run.get("metrics"):
            lines.append("Metrics:")
            lines.extend(f"  {name}: {value:.6f}" for name, value in sorted(run["metrics"].items()))
        lines.append("Config:")
        lines.append(json.dumps(run.get("config", {}), indent=2, sort_keys=True))
        return "\n".join(lines) + "\n"

    def run_statistics(self, stats: Dict[str, Any]) -> str:
        ok = stats["total_runs"] - stats["failed_runs"]
        return f"{stats['total_runs']} recorded runs: {ok} ok, {stats['failed_runs']} failed\n"

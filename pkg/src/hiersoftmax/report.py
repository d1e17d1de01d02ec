"""Fixed-width comparison tables in the layout of the flat-vs-hierarchical results."""

from __future__ import annotations

import numpy as np

MEASURES = [("F1", "macro_f1"), ("Precision", "macro_precision"), ("Recall", "macro_recall"),
            ("Accuracy", "micro_accuracy")]

COLUMN_TITLES = {"flat": "Flat", "hierarchical": "Hierarchical"}


def mean_sd(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def summarize_runs(runs: list[dict[str, float]]) -> dict[str, dict[str, float]]:
    """{"mean": {...}, "sd": {...}} over the per-seed metric dicts."""
    out = {"mean": {}, "sd": {}}
    for _, key in MEASURES:
        m, s = mean_sd([r[key] for r in runs])
        out["mean"][key] = round(m, 3)
        out["sd"][key] = round(s, 3)
    return out


def comparison_table(summaries: dict[str, dict], title: str = "", show_sd: bool = True) -> str:
    """Rows F1/Precision/Recall/Accuracy, one column per model (flat first)."""
    models = [m for m in ("flat", "hierarchical") if m in summaries]
    cell = 17 if show_sd else 10
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'Measure':<10}" + "".join(f"{COLUMN_TITLES[m]:>{cell + 2}}" for m in models))
    lines.append("-" * (10 + (cell + 2) * len(models)))
    for label, key in MEASURES:
        row = f"{label:<10}"
        for m in models:
            mean, sd = summaries[m]["mean"][key], summaries[m]["sd"][key]
            text = f"{mean:.3f} ± {sd:.3f}" if show_sd else f"{mean:.3f}"
            row += f"{text:>{cell + 2}}"
        lines.append(row)
    return "\n".join(lines)

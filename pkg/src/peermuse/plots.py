"""Figure rendering for the report path.

Three figure families mirror the summary tables: per-round condition
comparisons for the four creativity metrics, Gini versus network size,
and the semantic-dominance profile. Figures are written as PNG files next
to the delimited output.
"""

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

STYLE = {
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}

CONDITION_COLORS = {"control": "#7f7f7f", "treatment": "#1f77b4"}


def _color(condition):
    return CONDITION_COLORS.get(condition, "#2ca02c")


def save_figure(fig, path):
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def metric_comparison_figure(comparisons):
    metrics = []
    for row in comparisons:
        if row["metric"] not in metrics:
            metrics.append(row["metric"])
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 2, figsize=(9, 6), squeeze=False)
        for ax, metric in zip(axes.ravel(), metrics):
            rows = [r for r in comparisons if r["metric"] == metric]
            for condition in sorted({r["condition"] for r in rows}):
                series = sorted(
                    (r for r in rows if r["condition"] == condition),
                    key=lambda r: r["round"],
                )
                x = [r["round"] for r in series]
                y = [r["mean"] for r in series]
                err = [
                    [r["mean"] - r["ci_low"] for r in series],
                    [r["ci_high"] - r["mean"] for r in series],
                ]
                ax.errorbar(
                    x, y, yerr=err, marker="o", capsize=3,
                    label=condition, color=_color(condition),
                )
            ax.set_title(metric)
            ax.set_xlabel("round")
        axes[0][0].legend()
        fig.tight_layout()
    return fig


def gini_by_size_figure(gini_series):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for condition in sorted({r["condition"] for r in gini_series}):
            series = sorted(
                (r for r in gini_series if r["condition"] == condition),
                key=lambda r: r["network_size"],
            )
            x = [r["network_size"] for r in series]
            y = [r["mean"] for r in series]
            lo = [r["ci_low"] for r in series]
            hi = [r["ci_high"] for r in series]
            ax.plot(x, y, marker="o", label=condition, color=_color(condition))
            ax.fill_between(x, lo, hi, alpha=0.2, color=_color(condition))
        ax.set_xlabel("network size")
        ax.set_ylabel("Gini coefficient of alter follower counts")
        ax.legend()
        fig.tight_layout()
    return fig


def dominance_profile_figure(dominance):
    sizes = sorted({r["network_size"] for r in dominance})
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.scatter(
            [r["network_size"] for r in dominance],
            [r["fraction_semantic"] for r in dominance],
            s=[10 + 3 * r["n_decisions"] for r in dominance],
            alpha=0.35,
            color="#1f77b4",
            label="per (round, size)",
        )
        pooled = []
        for size in sizes:
            rows = [r for r in dominance if r["network_size"] == size]
            total = sum(r["n_decisions"] for r in rows)
            frac = sum(r["fraction_semantic"] * r["n_decisions"] for r in rows) / total
            pooled.append((size, frac))
        if pooled:
            ax.plot(*zip(*pooled), color="#d62728", marker="s", label="pooled over rounds")
        ax.set_ylim(-0.05, 1.05)
        ax.set_xlabel("network size")
        ax.set_ylabel("fraction of semantic-dominated decisions")
        ax.legend()
        fig.tight_layout()
    return fig


def render_report_figures(out_dir, comparisons, gini_series, dominance):
    paths = []
    if comparisons:
        paths.append(
            save_figure(
                metric_comparison_figure(comparisons),
                os.path.join(out_dir, "metric_comparisons.png"),
            )
        )
    if gini_series:
        paths.append(
            save_figure(
                gini_by_size_figure(gini_series),
                os.path.join(out_dir, "gini_by_size.png"),
            )
        )
    if dominance:
        paths.append(
            save_figure(
                dominance_profile_figure(dominance),
                os.path.join(out_dir, "dominance_profile.png"),
            )
        )
    return paths

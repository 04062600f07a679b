"""SVG regret curves from a run directory."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import read_round_csv, read_summary, round_file_name  # noqa: E402


def plot_summary(summary_path, out_path):
    """One polyline of cumulative regret vs round per run listed in the summary.

    Per-round files are looked up in ``runs/`` next to the summary; runs
    written with ``--summary-only`` have none and are skipped.  Returns the
    number of curves drawn.  Each curve carries the SVG id ``curve-<k>``.
    """
    summary_path = Path(summary_path)
    rows = read_summary(summary_path)
    runs_dir = summary_path.parent / "runs"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    drawn = 0
    for row in rows:
        trace = runs_dir / round_file_name(row["experiment"], row["seed"])
        if not trace.exists():
            continue
        data = read_round_csv(trace)
        drawn += 1
        (line,) = ax.plot(data["t"], data["cum_regret"], lw=1.2,
                          label=f"{row['experiment']} (seed {row['seed']})")
        line.set_gid(f"curve-{drawn}")
    ax.set_xlabel("round t")
    ax.set_ylabel("cumulative regret")
    ax.grid(alpha=0.3)
    if drawn:
        ax.legend(fontsize=8)
    fig.tight_layout()
    # fixed hash salt and no date keep the SVG byte-stable; text stays as <text>
    with matplotlib.rc_context({"svg.hashsalt": "lowrank-experts", "svg.fonttype": "none"}):
        fig.savefig(out_path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return drawn

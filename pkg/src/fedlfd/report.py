"""Figure rendering for the comparison report.

Figures are drawn with the Agg backend and written next to the delimited
comparison output; nothing here feeds back into the simulation.
"""

from __future__ import annotations

from pathlib import Path


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_loss_curves(curves: dict[str, dict[int, float]], path: str | Path) -> Path:
    """Mean test loss per round, one line per strategy."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for strategy in sorted(curves):
        per_round = curves[strategy]
        rounds = sorted(per_round)
        ax.plot(rounds, [per_round[r] for r in rounds], marker="o", markersize=3, label=strategy)
    ax.set_xlabel("round")
    ax.set_ylabel("mean test loss")
    ax.set_title("Global test loss by aggregation strategy")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_final_losses(finals: dict[str, list[float]], path: str | Path) -> Path:
    """Final-loss distribution over seeds, one box per strategy."""
    plt = _pyplot()
    strategies = sorted(finals)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    data = [finals[s] for s in strategies]
    ax.boxplot(data, tick_labels=strategies)
    for i, values in enumerate(data, start=1):
        ax.plot([i] * len(values), values, "k.", alpha=0.5, markersize=4)
    ax.set_ylabel("final test loss")
    ax.set_title("Final test loss across seeds")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)

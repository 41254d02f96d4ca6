from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# reproducible SVG ids
matplotlib.rcParams["svg.hashsalt"] = "shiftlab"

_SVG_META = {"Date": None}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def plot_losses(traces: Mapping[str, Sequence[float]], path: Path, title: str = "Training loss") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, trace in traces.items():
        if len(trace):
            ax.plot(np.arange(1, len(trace) + 1), trace, label=name, linewidth=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("MMD loss")
    ax.set_title(title)
    if len(traces) > 1:
        ax.legend()
    return _save(fig, path)


def plot_scatter(real: np.ndarray, generated: np.ndarray, path: Path, title: str = "",
                 real_labels: np.ndarray | None = None, gen_labels: np.ndarray | None = None,
                 columns: tuple[int, int] = (0, 1)) -> Path:
    """Two feature columns of real versus generated rows."""
    i, j = columns
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(real[:, i], real[:, j], s=4, alpha=0.4, marker="o", c=real_labels,
               cmap="viridis" if real_labels is not None else None, label="real")
    ax.scatter(generated[:, i], generated[:, j], s=4, alpha=0.4, marker="x", c=gen_labels,
               cmap="plasma" if gen_labels is not None else None, label="generated")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)

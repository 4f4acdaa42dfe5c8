"""Static figures of the density curves written next to the CSV exports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .estimators import METHODS  # noqa: E402
from .model import STATE_NAMES  # noqa: E402

METHOD_STYLE = {
    "RTS": dict(color="#1b6ca8", ls="-"),
    "OLS": dict(color="#c0392b", ls="--"),
    "NLS": dict(color="#27864a", ls="-."),
}

RC = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
}

# matplotlib stamps its version into PNG metadata by default; drop it so
# identical runs give identical files across installations
_PNG_META = {"Software": None}


def _panels(kdes, states, path, title, xlabel):
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(states), figsize=(2.4 * len(states), 2.4), squeeze=False)
        for ax, state in zip(axes[0], states):
            for method in METHODS:
                kde = kdes.get((method, state))
                if kde is None:
                    continue
                ax.plot(kde.grid, kde.density, label=method, **METHOD_STYLE[method])
            ax.set_title(state)
            ax.set_xlabel(xlabel)
        axes[0][0].set_ylabel("density")
        axes[0][-1].legend(loc="upper right")
        fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)
    return Path(path)


def plot_error_densities(result, path, title=None):
    """One panel per state with the estimation-error density of each method."""
    title = title or f"Estimation error at day {result.m} ({result.source} data)"
    return _panels(result.kdes, STATE_NAMES, path, title, "estimate - truth")


def plot_reinit_densities(result, path, title="Day-d populations after re-initialization"):
    return _panels(result.kdes, ("I", "E", "A"), path, title, "log10(population + 1)")

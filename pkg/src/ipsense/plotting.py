"""Matplotlib defaults and helpers for static report figures."""
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 0.8,
    "figure.dpi": 100,
    "svg.fonttype": "none",
    "svg.hashsalt": "ipsense",
}

COLORS = {"ber": "#1f4e79", "oss": "#7f2704", "kl_change": "#d62728",
          "signal_lost": "#7f7f7f", "threshold": "#2ca02c"}


def new_figure(nrows=1, width=7.0, row_height=2.2, sharex=True):
    with plt.rc_context(RC):
        fig, axes = plt.subplots(nrows, 1, figsize=(width, row_height * nrows),
                                 sharex=sharex, squeeze=False)
    return fig, axes[:, 0]


def save(fig, path):
    # Fixed metadata keeps SVG output byte-stable across runs.
    with plt.rc_context(RC):
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path

"""Matplotlib renderings for the CLI report path.

Figures are rendered fully in memory and returned as PNG bytes so the
CLI can write reports atomically; stripped metadata keeps the files
byte-reproducible across runs.
"""

from __future__ import annotations

import io

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_SAVE_KW = dict(format="png", dpi=120, metadata={"Software": None})

_METHOD_ORDER = ("lamb", "l1", "l2", "binary", "correlation")


def study_curves_png(summary: list[dict], tau_mode: str) -> bytes:
    """Gated mean TDR against block correlation, one line per method."""
    rows = [r for r in summary if r["tau_mode"] == tau_mode]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    methods = [m for m in _METHOD_ORDER if any(r["method"] == m for r in rows)]
    methods += sorted({r["method"] for r in rows} - set(methods))
    for method in methods:
        pts = sorted((r["rho"], r["mean_tdr_gated"]) for r in rows if r["method"] == method)
        ax.plot(
            [p[0] for p in pts],
            [p[1] for p in pts],
            marker="o",
            label=method,
            linewidth=2 if method == "lamb" else 1.2,
        )
    ax.set_xlabel("block latent correlation")
    ax.set_ylabel("mean TDR (runs with FPR < 0.05)")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"propensity mode: {tau_mode}")
    ax.legend(loc="upper left", fontsize=8)
    ax.grid(True, alpha=0.3)
    return _render(fig)


def heatmap_png(matrix: np.ndarray, labels: tuple[str, ...]) -> bytes:
    """Pairwise sample-latent-correlation heatmap for small panels."""
    fig, ax = plt.subplots(figsize=(6.0, 5.2))
    lim = max(1.0, float(np.abs(matrix).max()))
    im = ax.imshow(matrix, cmap="RdBu_r", vmin=-lim, vmax=lim)
    if len(labels) <= 40:
        ax.set_xticks(range(len(labels)))
        ax.set_yticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=90, fontsize=6)
        ax.set_yticklabels(labels, fontsize=6)
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title("sample latent correlation")
    return _render(fig)


def _render(fig) -> bytes:
    buf = io.BytesIO()
    fig.tight_layout()
    fig.savefig(buf, **_SAVE_KW)
    plt.close(fig)
    return buf.getvalue()

"""Static SVG line charts of a metrics CSV."""
from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .checkpoint import atomic_write_bytes  # noqa: E402
from .train import METRIC_FIELDS, read_metrics  # noqa: E402

SERIES = METRIC_FIELDS[1:]


def plot_metrics(metrics_path, out_dir, t_d: float | None = None) -> list[Path]:
    """Write one SVG per tracked series; returns the written paths."""
    rows = read_metrics(metrics_path)
    if not rows:
        raise ValueError(f"{metrics_path} has no data rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    epochs = [r["epoch"] for r in rows]
    written = []
    # fixed hash salt keeps SVG element ids stable across runs
    with plt.rc_context({"svg.hashsalt": "dualgate", "svg.fonttype": "none"}):
        for name in SERIES:
            fig, ax = plt.subplots(figsize=(5, 3.2))
            ax.plot(epochs, [r[name] for r in rows], marker=".", label=name)
            if name == "flops_ratio" and t_d is not None:
                ax.axhline(t_d, color="grey", linestyle="--", label=f"t_d = {t_d:g}")
            ax.set_xlabel("epoch")
            ax.set_ylabel(name)
            ax.grid(alpha=0.3)
            ax.legend(loc="best", fontsize=8)
            fig.tight_layout()
            buf = io.BytesIO()
            fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
            plt.close(fig)
            path = out / f"{name}.svg"
            atomic_write_bytes(path, buf.getvalue())
            written.append(path)
    return written

import io
from typing import Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from Denoiser.trainer import smoothed  # noqa: E402
from Optimizer.auc import topk_curve  # noqa: E402
from Orchestrator.persistence import PathLike, atomic_write_bytes  # noqa: E402


def _save(fig, path: PathLike):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120)
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def plot_loss_trace(trace: Sequence[float], path: PathLike, window: int = 50):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = range(1, len(trace) + 1)
    ax.plot(steps, trace, lw=0.6, alpha=0.4, label="loss")
    smooth = smoothed(trace, window)
    ax.plot(range(len(trace) - len(smooth) + 1, len(trace) + 1), smooth, lw=1.5, label=f"smoothed ({window})")
    ax.set_xlabel("step")
    ax.set_ylabel("NELBO")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_topk_curves(scores: Sequence[float], budget: int, path: PathLike, ks: Sequence[int] = (1, 10, 100)):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k in ks:
        ax.plot(range(1, budget + 1), topk_curve(scores, k, budget), label=f"top-{k}")
    ax.set_xlabel("oracle calls")
    ax.set_ylabel("mean top-k score")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_tradeoff(points: Sequence[Tuple[str, float, float]], path: PathLike):
    """(label, diversity, quality) per sampler setting."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, diversity, quality in points:
        ax.scatter(diversity, quality)
        ax.annotate(label, (diversity, quality), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("diversity")
    ax.set_ylabel("quality")
    fig.tight_layout()
    return _save(fig, path)

"""Figure rendering for the experiment CSVs.

Each report command writes its delimited output and, next to it, a PNG with
the matching curve.  All figures use the Agg backend so they work headless.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_sweep_figure(rows, path, title="Test accuracy vs chain length"):
    """rows: (length, mean_acc, std_acc) tuples."""
    lengths = [r[0] for r in rows]
    means = [r[1] for r in rows]
    stds = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(lengths, means, yerr=stds, marker="o", capsize=3)
    ax.set_xlabel("chain length")
    ax.set_ylabel("mean test accuracy")
    ax.set_ylim(-0.02, 1.05)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bench_figure(rows, path, title="Per-epoch training time"):
    """rows: (label, closed_ms, fixed_point_ms, finite_depth_ms) tuples."""
    labels = [r[0] for r in rows]
    series = {
        "closed form": [r[1] for r in rows],
        "fixed point (tol 1e-6)": [r[2] for r in rows],
        "finite depth (H=l)": [r[3] for r in rows],
    }
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = range(len(labels))
    width = 0.25
    for k, (name, vals) in enumerate(series.items()):
        ax.bar([i + (k - 1) * width for i in x], vals, width, label=name)
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_ylabel("epoch time (ms)")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_attack_figure(rows, path, title="Accuracy under feature perturbation"):
    """rows: (kind, epsilon, accuracy) tuples; the clean row has epsilon 0."""
    clean = [r[2] for r in rows if r[0] == "clean"]
    kinds = sorted({r[0] for r in rows if r[0] != "clean"})
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind in kinds:
        pts = sorted((r[1], r[2]) for r in rows if r[0] == kind)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=kind)
    if clean:
        ax.axhline(clean[0], color="gray", linestyle="--", label="clean")
    ax.set_xscale("log")
    ax.set_xlabel("perturbation budget")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(-0.02, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_train_curves(report, path, title="Training curves"):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    epochs = range(report.epochs_run)
    ax1.plot(epochs, report.train_loss)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.set_yscale("log")
    ax1.grid(True, alpha=0.3)
    ax2.plot(epochs, report.train_acc, label="train")
    ax2.plot(epochs, report.val_acc, label="val")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(-0.02, 1.05)
    ax2.legend(fontsize=8)
    ax2.grid(True, alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

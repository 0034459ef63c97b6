"""Report figures written to PNG files with a headless backend."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so identical inputs give identical files
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def restoration_grid(clean, noisy, restored, height, width, path, n=10):
    """Three rows of images: clean targets, noisy inputs, restored outputs."""
    n = min(n, len(clean))
    fig, axes = plt.subplots(3, n, figsize=(1.1 * n, 3.6), squeeze=False)
    for row, (title, images) in enumerate((("clean", clean), ("noisy", noisy),
                                           ("restored", restored))):
        for i in range(n):
            ax = axes[row, i]
            ax.imshow(np.asarray(images[i]).reshape(height, width), cmap="gray", vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
        axes[row, 0].set_ylabel(title)
    fig.tight_layout()
    return _save(fig, path)


def loss_curve(history, path, title="fine-tuning objective"):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(len(history)), history, lw=1.5)
    ax.set_xlabel("L-BFGS iteration")
    ax.set_ylabel("mean loss per example")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def per_class_error_bars(errors, path, title="per-class error"):
    errors = np.asarray(errors, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(np.arange(errors.size), np.nan_to_num(errors, nan=0.0))
    ax.set_xticks(np.arange(errors.size))
    ax.set_xlabel("class")
    ax.set_ylabel("error rate")
    ax.set_ylim(0, 1)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def confusion_matrix_plot(predicted, truth, num_classes, path):
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(truth), np.asarray(predicted)), 1)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_xticks(np.arange(num_classes))
    ax.set_yticks(np.arange(num_classes))
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return _save(fig, path)

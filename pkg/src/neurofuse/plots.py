"""Matplotlib figures rendered next to the delimited report files."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_learning_curve_plot(curve, path):
    """Two panels: loss and accuracy over epochs, train vs validation."""
    epochs = [r.epoch for r in curve.records]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(epochs, [r.train_loss for r in curve.records], label="train")
    ax_loss.plot(epochs, [r.val_loss for r in curve.records], label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_acc.plot(epochs, [r.train_acc for r in curve.records], label="train")
    ax_acc.plot(epochs, [r.val_acc for r in curve.records], label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(-0.02, 1.02)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_roc_plot(report, path):
    """One-vs-rest ROC curves for every class, AUC in the legend."""
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for k, curve in enumerate(report.roc):
        if curve is None:
            continue
        ax.plot(curve.fpr, curve.tpr, label=f"class {k} (AUC {curve.auc:.3f})")
    ax.plot([0, 1], [0, 1], "k--", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_matrix_plot(report, path, class_names=None):
    cm = report.cm
    n = cm.shape[0]
    names = class_names or [str(k) for k in range(n)]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(cm, cmap="Blues")
    threshold = cm.max() / 2 if cm.max() else 0.5
    for i in range(n):
        for j in range(n):
            ax.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                    color="white" if cm[i, j] > threshold else "black")
    ax.set_xticks(range(n), names)
    ax.set_yticks(range(n), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

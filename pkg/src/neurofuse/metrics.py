"""Multi-class evaluation: confusion matrix, P/R/F1, one-vs-rest ROC/AUC.

ROC curves sweep thresholds over the distinct scores in descending order
with ties grouped at one threshold, which makes the trapezoidal AUC equal
to the pairwise concordance probability with half credit for ties. The
0/0 cases of precision/recall/F1 evaluate to 0 by convention.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClassError, LabelError, ShapeError
from .parallel import parallel_map
from .training import sparse_ce_loss


def confusion_matrix(true_labels, predicted_labels, num_classes):
    """counts[t][p] = number of samples with true class t predicted as p."""
    true_labels = np.asarray(true_labels)
    predicted_labels = np.asarray(predicted_labels)
    if true_labels.shape != predicted_labels.shape:
        raise ShapeError("label lists differ in length")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise LabelError(f"label pair ({t}, {p}) out of range for {num_classes} classes")
        cm[t, p] += 1
    return cm


@dataclass
class ClassScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float


def _safe_div(num, den):
    return num / den if den > 0 else 0.0


def prf_scores(cm):
    """Per-class precision/recall/F1 plus macro averages and accuracy."""
    cm = np.asarray(cm)
    n_classes = cm.shape[0]
    precision = np.zeros(n_classes)
    recall = np.zeros(n_classes)
    f1 = np.zeros(n_classes)
    for k in range(n_classes):
        tp = cm[k, k]
        precision[k] = _safe_div(tp, cm[:, k].sum())
        recall[k] = _safe_div(tp, cm[k, :].sum())
        f1[k] = _safe_div(2 * precision[k] * recall[k], precision[k] + recall[k])
    total = cm.sum()
    return ClassScores(precision, recall, f1,
                       float(precision.mean()), float(recall.mean()), float(f1.mean()),
                       _safe_div(np.trace(cm), total))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_auc(true_labels, score_matrix, positive_class):
    """One-vs-rest ROC for one class from per-sample probability vectors."""
    true_labels = np.asarray(true_labels)
    scores = np.asarray(score_matrix)[:, positive_class]
    pos = true_labels == positive_class
    n_pos = int(pos.sum())
    n_neg = len(true_labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClassError(
            f"class {positive_class} has {n_pos} positives and {n_neg} negatives")
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    pos = pos[order]
    # Last index of each tie group = one threshold per distinct score.
    cut = np.flatnonzero(np.diff(scores) != 0)
    cut = np.append(cut, len(scores) - 1)
    tps = np.cumsum(pos)[cut]
    fps = 1 + cut - tps
    fpr = np.concatenate([[0.0], fps / n_neg])
    tpr = np.concatenate([[0.0], tps / n_pos])
    return RocCurve(fpr, tpr, float(np.trapezoid(tpr, fpr)))


@dataclass
class EvalReport:
    num_classes: int
    cm: np.ndarray
    scores: ClassScores
    roc: list
    mean_loss: float

    @property
    def accuracy(self):
        return self.scores.accuracy

    def to_text(self):
        lines = [f"samples: {int(self.cm.sum())}",
                 f"accuracy: {self.accuracy:.6g}",
                 f"mean loss: {self.mean_loss:.6g}",
                 "",
                 "confusion matrix (rows = true, cols = predicted):"]
        for row in self.cm:
            lines.append("  " + " ".join(f"{v:6d}" for v in row))
        lines.append("")
        lines.append(f"{'class':>6} {'precision':>10} {'recall':>10} {'f1':>10} {'auc':>10}")
        for k in range(self.num_classes):
            auc = f"{self.roc[k].auc:.4f}" if self.roc[k] is not None else "n/a"
            lines.append(f"{k:>6} {self.scores.precision[k]:>10.4f} "
                         f"{self.scores.recall[k]:>10.4f} {self.scores.f1[k]:>10.4f} {auc:>10}")
        lines.append(f"{'macro':>6} {self.scores.macro_precision:>10.4f} "
                     f"{self.scores.macro_recall:>10.4f} {self.scores.macro_f1:>10.4f}")
        return "\n".join(lines) + "\n"

    def write_csvs(self, outdir):
        """cm.csv, scores.csv, and one roc_class<k>.csv per class."""
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "cm.csv", "w", encoding="utf-8") as fh:
            for row in self.cm:
                fh.write(",".join(str(int(v)) for v in row) + "\n")
        with open(outdir / "scores.csv", "w", encoding="utf-8") as fh:
            fh.write("class,precision,recall,f1\n")
            for k in range(self.num_classes):
                fh.write(f"{k},{self.scores.precision[k]:.6g},"
                         f"{self.scores.recall[k]:.6g},{self.scores.f1[k]:.6g}\n")
            fh.write(f"macro,{self.scores.macro_precision:.6g},"
                     f"{self.scores.macro_recall:.6g},{self.scores.macro_f1:.6g}\n")
            fh.write(f"accuracy,{self.accuracy:.6g}\n")
        for k in range(self.num_classes):
            if self.roc[k] is None:
                continue
            with open(outdir / f"roc_class{k}.csv", "w", encoding="utf-8") as fh:
                fh.write("fpr,tpr\n")
                for f, t in zip(self.roc[k].fpr, self.roc[k].tpr):
                    fh.write(f"{f:.6g},{t:.6g}\n")


def evaluate(model, samples, workers=1):
    """Inference over all samples, assembled into an EvalReport."""
    def _infer(item):
        idx, s = item
        try:
            pred, _ = model.forward(mri=s.mri, fmri=s.fmri, training=False)
        except ShapeError as exc:
            raise ShapeError(f"sample {s.subject_id or idx}: {exc}") from exc
        return pred

    preds = parallel_map(_infer, enumerate(samples), workers)
    labels = [s.label for s in samples]
    C = model.config.num_classes
    score_matrix = np.stack([p.probabilities for p in preds])
    predicted = [p.predicted_class for p in preds]
    cm = confusion_matrix(labels, predicted, C)
    roc = []
    for k in range(C):
        try:
            roc.append(roc_auc(labels, score_matrix, k))
        except DegenerateClassError:
            roc.append(None)  # class absent from (or filling) this split
    losses = [sparse_ce_loss(p.probabilities, lbl) for p, lbl in zip(preds, labels)]
    return EvalReport(C, cm, prf_scores(cm), roc, float(np.mean(losses)))

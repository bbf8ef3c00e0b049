"""Adam optimization, loss accounting, stratified splitting, epoch loop.

Mini-batches are realized by gradient accumulation over per-sample
forward/backward passes (volumes are processed one at a time); the Adam
update runs once per batch on the mean gradient. Epoch shuffling draws
from a stream seeded by (seed, epoch) so runs are reproducible and
independent of the augmentation RNG.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LabelError, ShapeError


class Adam:
    """Adam optimizer state over a named parameter dict (updates in place)."""

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = dict(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}

    def update(self, grads):
        """m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; theta -= lr mhat/(sqrt(vhat)+eps)."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def sparse_ce_loss(probs, label):
    """-log(probs[label]) with a 1e-12 floor so saturated outputs stay finite."""
    if probs.ndim != 1:
        raise ShapeError(f"probability vector must be rank 1, got {probs.ndim}")
    if not 0 <= label < probs.shape[0]:
        raise LabelError(f"label {label} out of range for {probs.shape[0]} classes")
    return -math.log(float(probs[label]) + 1e-12)


def stratified_split(labels, sizes, seed):
    """Split indices into (train, val, test) preserving class proportions.

    Per-class counts per split stay within one sample of the exact
    proportional quota; identical seeds give identical splits. Returns
    three sorted, disjoint index lists covering range(len(labels)).
    """
    labels = np.asarray(labels)
    n = len(labels)
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or any(s < 0 for s in sizes):
        raise ConfigError(f"sizes must be three nonnegative counts, got {sizes}")
    if sum(sizes) != n:
        raise ConfigError(f"split sizes {sizes} do not sum to sample count {n}")

    classes = sorted(set(labels.tolist()))
    counts = {}
    fracs = []
    col_rem = list(sizes)
    row_rem = {}
    for c in classes:
        n_c = int(np.sum(labels == c))
        row_rem[c] = n_c
        for s in range(3):
            quota = n_c * sizes[s] / n if n else 0.0
            counts[c, s] = int(quota)
            col_rem[s] -= counts[c, s]
            row_rem[c] -= counts[c, s]
            fracs.append((quota - int(quota), c, s))
    # Largest fractional remainders absorb the leftover slots, subject to
    # per-class and per-split totals; a fallback pass mops up any leftovers
    # greedy ordering could not place.
    bumped = set()
    remaining = sum(col_rem)
    for frac, c, s in sorted(fracs, key=lambda e: (-e[0], e[1], e[2])):
        if remaining == 0:
            break
        if row_rem[c] > 0 and col_rem[s] > 0 and (c, s) not in bumped:
            counts[c, s] += 1
            row_rem[c] -= 1
            col_rem[s] -= 1
            bumped.add((c, s))
            remaining -= 1
    while remaining > 0:  # fallback: any cell with open row and column
        progressed = False
        for c in classes:
            for s in range(3):
                if row_rem[c] > 0 and col_rem[s] > 0:
                    counts[c, s] += 1
                    row_rem[c] -= 1
                    col_rem[s] -= 1
                    remaining -= 1
                    progressed = True
        if not progressed:
            raise ConfigError("stratified split could not balance quotas")

    rng = np.random.Generator(np.random.PCG64(seed))
    splits = ([], [], [])
    for c in classes:
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        start = 0
        for s in range(3):
            take = counts[c, s]
            splits[s].extend(int(i) for i in idx[start:start + take])
            start += take
    return tuple(sorted(s) for s in splits)


def grouped_split(labels, groups, sizes, seed):
    """Stratified split at group granularity (whole groups per split).

    Augmented copies share their source subject's group, so splitting by
    group keeps every copy of a subject in one split. `sizes` are sample
    counts; they are mapped to group counts proportionally, so realized
    sample counts are only approximate when group sizes vary.
    """
    if len(groups) != len(labels):
        raise ConfigError("groups and labels differ in length")
    n = len(labels)
    order = []
    members = {}
    for i, g in enumerate(groups):
        if g not in members:
            members[g] = []
            order.append(g)
        members[g].append(i)
    group_labels = []
    for g in order:
        lab = {labels[i] for i in members[g]}
        if len(lab) != 1:
            raise ConfigError(f"group {g!r} mixes labels {sorted(lab)}")
        group_labels.append(lab.pop())
    G = len(order)
    quotas = [G * s / n for s in sizes]
    gsizes = [int(q) for q in quotas]
    leftovers = G - sum(gsizes)
    for _, s in sorted(((quotas[s] - int(quotas[s]), s) for s in range(3)), reverse=True):
        if leftovers == 0:
            break
        gsizes[s] += 1
        leftovers -= 1
    g_tr, g_va, g_te = stratified_split(group_labels, gsizes, seed)
    def expand(gidx):
        return sorted(i for g in gidx for i in members[order[g]])
    return expand(g_tr), expand(g_va), expand(g_te)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 2
    learning_rate: float = 1e-5
    gradient_clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class LearningCurve:
    records: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.format_csv())

    def format_csv(self):
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.train_loss:.6g},{r.train_acc:.6g},"
                         f"{r.val_loss:.6g},{r.val_acc:.6g}")
        return "\n".join(lines) + "\n"


def clip_gradients(grads, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}
    return grads


def _epoch_order(n, seed, epoch):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))
    return rng.permutation(n)


def evaluate_loss(model, samples):
    """Mean inference-mode loss and accuracy; (nan, nan) on empty input."""
    if not samples:
        return float("nan"), float("nan")
    losses, correct = [], 0
    for s in samples:
        pred, _ = model.forward(mri=s.mri, fmri=s.fmri, training=False)
        losses.append(sparse_ce_loss(pred.probabilities, s.label))
        correct += pred.predicted_class == s.label
    return float(np.mean(losses)), correct / len(samples)


def train(model, train_samples, val_samples, config):
    """Run the epoch loop; returns (model, LearningCurve).

    The model is updated in place; train metrics are the running values
    of the training pass, val metrics come from an inference pass at each
    epoch end.
    """
    if not train_samples:
        raise ConfigError("training set is empty")
    adam = Adam(model.parameters(), config.learning_rate)
    curve = LearningCurve()
    n = len(train_samples)
    for epoch in range(1, config.epochs + 1):
        order = _epoch_order(n, config.seed, epoch)
        losses, correct = [], 0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            acc = None
            for i in batch:
                s = train_samples[i]
                try:
                    pred, cache = model.forward(mri=s.mri, fmri=s.fmri, training=True)
                    grads = model.backward(cache, s.label)
                except ShapeError as exc:
                    raise ShapeError(f"sample {i}: {exc}") from exc
                losses.append(sparse_ce_loss(pred.probabilities, s.label))
                correct += pred.predicted_class == s.label
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] = acc[k] + grads[k]
            mean_grads = {k: g / len(batch) for k, g in acc.items()}
            if config.gradient_clip_norm is not None:
                mean_grads = clip_gradients(mean_grads, config.gradient_clip_norm)
            adam.update(mean_grads)
        val_loss, val_acc = evaluate_loss(model, val_samples)
        curve.records.append(EpochRecord(epoch, float(np.mean(losses)), correct / n,
                                         val_loss, val_acc))
    return model, curve

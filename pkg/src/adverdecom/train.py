"""Losses and the alternating adversarial training loop.

Per batch, two sequential SGD updates on the same samples: first the feature
loss L1 = C1 - alpha*C2 updates backbone, heads, and classifier with the
discriminator frozen; then a fresh forward pass and the discriminator loss
L2 = C2 updates the discriminator alone. Vanilla mode runs only the first
update with alpha = 0, which reduces to plain cross-entropy classification.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from .cube import stack_batch
from .errors import TrainingDiverged
from .nets import L1_GROUPS, L2_GROUPS, NetConfig, Network
from .cluster import label_samples

PROB_FLOOR = 1e-12


def _cross_entropy(probs, labels, count):
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.ndim != 2 or len(labels) != probs.shape[0]:
        raise ValueError("probs must be (B, C) with one label per row")
    if labels.size and (labels.min() < 1 or labels.max() > count):
        raise ValueError(f"labels must lie in 1..{count}")
    picked = probs[np.arange(len(labels)), labels - 1]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def loss_C1(class_probs, y):
    """Mean cross entropy of the class probabilities against y (1-based)."""
    return _cross_entropy(class_probs, y, np.asarray(class_probs).shape[1])


def loss_C2(env_probs, z):
    """Mean cross entropy of the environment probabilities against z (1-based)."""
    return _cross_entropy(env_probs, z, np.asarray(env_probs).shape[1])


def loss_L1(outputs, y, z, alpha):
    """Feature loss: C1(class_probs, y) - alpha * C2(env_probs, z)."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    c1 = loss_C1(outputs.class_probs, y)
    if alpha == 0.0:
        return c1
    return c1 - alpha * loss_C2(outputs.env_probs, z)


def loss_L2(outputs, z):
    """Discriminator loss: C2 of the environment probabilities against z."""
    return loss_C2(outputs.env_probs, z)


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    alpha: float = 1.0
    k_pseudo: int = 3
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 64
    patch_size: int = 5
    seed: int = 0
    backbone: str = "compact2d"
    vanilla_mode: bool = False
    update_features: bool = True
    update_discriminator: bool = True

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        return self


@dataclass
class StepRecord:
    l1: float
    c1: float
    c2: float
    l2: float
    correct_class: int
    correct_env: int
    batch_size: int


@dataclass
class EpochRecord:
    epoch: int
    l1: float
    c1: float
    c2: float
    l2: float
    disc_acc: float
    train_oa: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "L1", "C1", "C2", "L2", "disc_acc", "train_oa"])
            for rec in self.epochs:
                writer.writerow(
                    [rec.epoch, rec.l1, rec.c1, rec.c2, rec.l2, rec.disc_acc, rec.train_oa]
                )


def _sgd_update(params, grads, lr, groups):
    for name, grad in grads.items():
        if name.split(".")[0] in groups:
            params.tensors[name] -= (lr * grad).astype(params.tensors[name].dtype, copy=False)


def _guard_finite(value, what, epoch, step, config):
    if not np.isfinite(value):
        record = {
            "what": what,
            "value": float(value),
            "epoch": epoch,
            "step": step,
            "alpha": config.alpha,
            "learning_rate": config.learning_rate,
        }
        raise TrainingDiverged(
            f"non-finite {what} ({value}) at epoch {epoch} step {step}; "
            f"alpha={config.alpha} may be too aggressive",
            record=record,
        )


def train_step(params, batch_samples, config: TrainConfig, net: Network | None = None,
               epoch: int = 0, step: int = 0) -> StepRecord:
    """One batch: L1 update on features/classifier, then a fresh forward and
    an L2 update on the discriminator. Mutates params in place."""
    net = net or Network(params.config)
    x, y, z = stack_batch(batch_samples)
    alpha = 0.0 if config.vanilla_mode else config.alpha

    outputs = net.forward(params, x)
    c1 = loss_C1(outputs.class_probs, y)
    c2 = loss_C2(outputs.env_probs, z)
    l1 = c1 if alpha == 0.0 else c1 - alpha * c2
    _guard_finite(l1, "L1", epoch, step, config)
    correct_class = int((outputs.class_probs.argmax(axis=1) + 1 == y).sum())

    if config.update_features:
        grads = net.backward_l1(params, outputs, y, z, alpha)
        _sgd_update(params, grads, config.learning_rate, set(L1_GROUPS))

    update_disc = config.update_discriminator and not config.vanilla_mode
    if update_disc:
        outputs2 = net.forward(params, x)
        l2 = loss_L2(outputs2, z)
        _guard_finite(l2, "L2", epoch, step, config)
        grads2 = net.backward_l2(params, outputs2, z)
        _sgd_update(params, grads2, config.learning_rate, set(L2_GROUPS))
        correct_env = int((outputs2.env_probs.argmax(axis=1) + 1 == z).sum())
    else:
        l2 = c2
        correct_env = int((outputs.env_probs.argmax(axis=1) + 1 == z).sum())

    params.step += 1
    return StepRecord(
        l1=l1,
        c1=c1,
        c2=c2,
        l2=l2,
        correct_class=correct_class,
        correct_env=correct_env,
        batch_size=len(batch_samples),
    )


def default_net_config(train_samples, config: TrainConfig, class_count=None,
                       feature_dim=128, conv_channels=None) -> NetConfig:
    """Derive the architecture from the data when no explicit NetConfig is given."""
    first = train_samples[0]
    bands = first.x.shape[-1]
    if class_count is None:
        class_count = int(max(s.y for s in train_samples))
    return NetConfig(
        bands=bands,
        class_count=class_count,
        env_count=config.k_pseudo,
        backbone=config.backbone,
        feature_dim=feature_dim,
        patch_size=config.patch_size,
        seed=config.seed,
        conv_channels=conv_channels,
    )


def train(train_samples, config: TrainConfig, env_model=None, net_config=None,
          progress=None):
    """Run the full alternating loop and return (params, TrainHistory).

    Samples must carry pseudo-environment labels z; if any are unassigned and
    an env_model is given they are labeled here. The per-epoch shuffle is a
    pure function of (seed, epoch); initialization happens exactly once.
    """
    config.validate()
    if not train_samples:
        raise ValueError("no training samples")
    if env_model is not None:
        if env_model.k != config.k_pseudo:
            raise ValueError(
                f"env model has K={env_model.k}, config expects {config.k_pseudo}"
            )
        if any(s.z == 0 for s in train_samples):
            label_samples(train_samples, env_model)
    if any(s.z < 1 or s.z > config.k_pseudo for s in train_samples):
        raise ValueError("training samples carry pseudo-labels outside 1..K; "
                         "cluster them first")

    if net_config is None:
        net_config = default_net_config(train_samples, config)
    net = Network(net_config)
    params = net.init_params()

    history = TrainHistory()
    n = len(train_samples)
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        sums = {"l1": 0.0, "c1": 0.0, "c2": 0.0, "l2": 0.0}
        correct_class = 0
        correct_env = 0
        for step, start in enumerate(range(0, n, config.batch_size)):
            batch = [train_samples[i] for i in order[start : start + config.batch_size]]
            rec = train_step(params, batch, config, net=net, epoch=epoch, step=step)
            weight = rec.batch_size
            sums["l1"] += rec.l1 * weight
            sums["c1"] += rec.c1 * weight
            sums["c2"] += rec.c2 * weight
            sums["l2"] += rec.l2 * weight
            correct_class += rec.correct_class
            correct_env += rec.correct_env
        record = EpochRecord(
            epoch=epoch,
            l1=sums["l1"] / n,
            c1=sums["c1"] / n,
            c2=sums["c2"] / n,
            l2=sums["l2"] / n,
            disc_acc=correct_env / n,
            train_oa=correct_class / n,
        )
        history.epochs.append(record)
        if progress is not None:
            progress(record)
    return params, history

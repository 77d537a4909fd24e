"""Adam optimization and the paired mini-batch training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergenceError
from .network import ResidualNet, loss_and_grads

BATCH_PAIRS = 16  # mini-batch of 32 = 16 cover/stego pairs


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 0.9  # applied to lr at each epoch end
    weight_decay: float = 2e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, net: ResidualNet) -> None:
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step
        bias2 = 1.0 - b2 ** self.step
        grads = dict(net.gradients())
        for name, param in net.parameters():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            param -= (self.lr / bias1) * m / (np.sqrt(v / bias2) + self.eps)


@dataclass
class PairDataset:
    """Aligned cover/stego inputs, one row per pair, already SPM-filtered."""

    covers: np.ndarray  # (P, 4, H, W)
    stegos: np.ndarray  # (P, 4, H, W)

    def __post_init__(self):
        if self.covers.shape != self.stegos.shape:
            raise ValueError("cover and stego arrays must align")
        if self.covers.ndim != 4:
            raise ValueError("expected (pairs, channels, H, W) arrays")

    @property
    def n_pairs(self) -> int:
        return self.covers.shape[0]


def train(net: ResidualNet, dataset: PairDataset, adam: AdamState, epochs: int,
          seed: int, batch_pairs: int = BATCH_PAIRS, log=None) -> list[dict]:
    """Train in place; returns one history record per epoch.

    Batches hold `batch_pairs` covers followed by their stego twins; the pair
    order reshuffles every epoch from the given seed, incomplete batches are
    dropped, and the learning rate decays at each epoch end.
    """
    if dataset.n_pairs < batch_pairs:
        raise ValueError(
            f"dataset holds {dataset.n_pairs} pairs, fewer than one full batch "
            f"of {batch_pairs}"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    labels = np.concatenate([np.zeros(batch_pairs, dtype=np.int64),
                             np.ones(batch_pairs, dtype=np.int64)])
    batch = np.empty((2 * batch_pairs,) + dataset.covers.shape[1:], dtype=net.dtype)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(dataset.n_pairs)
        losses = []
        correct = 0
        seen = 0
        for start in range(0, dataset.n_pairs - batch_pairs + 1, batch_pairs):
            idx = order[start : start + batch_pairs]
            np.take(dataset.covers, idx, axis=0, out=batch[:batch_pairs])
            np.take(dataset.stegos, idx, axis=0, out=batch[batch_pairs:])
            loss, logits = loss_and_grads(net, batch, labels, weight_decay=adam.weight_decay)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"divergence: non-finite loss at epoch {epoch}, batch {start // batch_pairs}"
                )
            adam.update(net)
            losses.append(loss)
            correct += int((logits.argmax(axis=1) == labels).sum())
            seen += labels.size
        record = {
            "epoch": epoch,
            "lr": adam.lr,
            "loss": float(np.mean(losses)),
            "train_acc": correct / seen,
        }
        history.append(record)
        if log is not None:
            log(record)
        adam.lr *= adam.lr_decay
    return history

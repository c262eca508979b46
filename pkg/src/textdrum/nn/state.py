from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import restore_rng, rng_state
from .optim import Adam


@dataclass
class TrainState:
    """Everything needed to continue a training run bit-for-bit."""

    optimizer: Adam
    rngs: dict[str, np.random.Generator]
    epoch: int = 0
    history: list[float] = field(default_factory=list)

    def tensors(self) -> dict[str, np.ndarray]:
        return self.optimizer.state_tensors()

    def meta(self) -> dict:
        return {
            "epoch": self.epoch,
            "history": list(self.history),
            "adam": self.optimizer.state_meta(),
            "rngs": {k: rng_state(r) for k, r in sorted(self.rngs.items())},
        }

    @classmethod
    def restore(cls, params: dict[str, np.ndarray], tensors: dict, meta: dict) -> TrainState:
        adam_meta = meta["adam"]
        opt = Adam(params, lr=adam_meta["lr"], beta1=adam_meta["beta1"], beta2=adam_meta["beta2"], eps=adam_meta["eps"])
        opt.load_state(tensors, adam_meta)
        rngs = {k: restore_rng(s) for k, s in meta["rngs"].items()}
        return cls(opt, rngs, int(meta["epoch"]), [float(x) for x in meta["history"]])


def minibatches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Split an index permutation into batches, folding a trailing singleton
    into the previous batch (batch norm cannot train on one row)."""
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches

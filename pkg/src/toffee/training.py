"""Shared training loop: AdamW, seeded batches, divergence guards, JSONL logs.

Every optimizer update in the package flows through run_training (or
diffusion_train_step), which bumps STEP_COUNTER. Dataset construction is
required to perform zero training, and asserts that via this counter.
"""

from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import torch


class TrainingDivergedError(RuntimeError):
    pass


class _StepCounter:
    def __init__(self):
        self.total = 0

    def increment(self, n: int = 1):
        self.total += n


STEP_COUNTER = _StepCounter()


def optimizer_steps() -> int:
    """Total optimizer updates performed in this process."""
    return STEP_COUNTER.total


class JsonlLogger:
    """Line-delimited JSON event log; optionally mirrors to a file."""

    def __init__(self, path=None, stream=None):
        self._file = open(path, "a") if path is not None else None
        self._stream = stream

    def log(self, event: str, **fields):
        rec = {"event": event, **fields}
        line = json.dumps(rec, sort_keys=True)
        if self._file is not None:
            self._file.write(line + "\n")
            self._file.flush()
        if self._stream is not None:
            self._stream.write(line + "\n")

    def close(self):
        if self._file is not None:
            self._file.close()


@dataclass
class TrainResult:
    losses: list[float]
    logged: list[float] = field(default_factory=list)  # mean loss per log interval
    steps: int = 0
    seconds: float = 0.0

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        # trailing mean is a steadier convergence readout than the last step
        tail = self.losses[-max(1, len(self.losses) // 10):]
        return sum(tail) / len(tail)


def run_training(
    model: torch.nn.Module,
    loss_fn: Callable[[int, torch.Generator], torch.Tensor],
    *,
    steps: int,
    lr: float = 2e-4,
    weight_decay: float = 1e-4,
    seed: int = 0,
    log_every: int = 25,
    logger: Optional[JsonlLogger] = None,
    divergence_window: int = 500,
    label: str = "train",
) -> TrainResult:
    """Generic AdamW loop. loss_fn(step, generator) returns a scalar loss.

    Aborts on a non-finite loss, or when the loss exceeds its initial value
    for divergence_window consecutive steps.
    """
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    gen = torch.Generator().manual_seed(seed)
    losses: list[float] = []
    logged: list[float] = []
    above_initial = 0
    t0 = time.perf_counter()
    for step in range(steps):
        loss = loss_fn(step, gen)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"{label}: non-finite loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        STEP_COUNTER.increment()
        val = float(loss.detach())
        losses.append(val)
        if val > losses[0]:
            above_initial += 1
            if above_initial >= divergence_window:
                raise TrainingDivergedError(
                    f"{label}: loss above initial value for {divergence_window} consecutive steps"
                )
        else:
            above_initial = 0
        if (step + 1) % log_every == 0:
            mean = sum(losses[-log_every:]) / log_every
            logged.append(mean)
            if logger is not None:
                logger.log("train_step", label=label, step=step + 1, loss=mean)
    return TrainResult(losses=losses, logged=logged, steps=steps, seconds=time.perf_counter() - t0)


def plot_loss_curve(result: TrainResult, path, title: str = "training loss"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(result.losses, lw=0.5, alpha=0.4)
    if result.logged:
        xs = [(i + 1) * (len(result.losses) // max(1, len(result.logged))) for i in range(len(result.logged))]
        ax.plot(xs, result.logged, lw=1.5)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

"""Budgeted training loop over pre-masked shards.

Elapsed time means accumulated training-step seconds: evaluation and
calibration are timed separately and only counted against the budget when
configured to be. Everything stochastic is keyed by (seed, step, ...), so a
paused-and-resumed run reproduces an uninterrupted one bit for bit.

Metrics log (tab-separated, ``metrics.tsv``):
    step lines:  <step> <elapsed_s> <lr> <train_loss>
    eval lines:  <elapsed_s> <val_loss>
Lines starting with '#' are comments; records are told apart by field count.
"""

from __future__ import annotations

import copy
import io
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adamw import OptimizerHyper, OptimizerState, adamw_step
from .errors import ConfigError, DataError, DivergenceError
from .model import (
    Batch,
    DropoutStreams,
    ModelConfig,
    init_params,
    loss_and_grads,
    forward_mlm,
    make_batch,
    param_spec,
)
from .pipeline import MaskedInstance
from .schedule import BudgetPlan, ScheduleParams, calibrate_throughput, lr_at, plan_budget
from .shards import read_shards, read_shards_header

CHECKPOINT_VERSION = 1

STATUS_RUNNING = "running"
STATUS_PAUSED = "paused"
STATUS_COMPLETED = "completed"
STATUS_DIVERGED = "diverged"


@dataclass
class TrainerState:
    """Everything train_step mutates, bundled for checkpointing."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    opt: OptimizerState
    hyper: OptimizerHyper
    schedule: ScheduleParams
    seed: int
    step: int = 0
    dropout_on: bool = True


@dataclass(frozen=True)
class StepMetrics:
    step: int
    loss: float
    lr: float
    wall_seconds: float
    samples: int


def train_step(
    state: TrainerState,
    micro_batches: Sequence[Batch],
    step: int | None = None,
    clock: Callable[[], float] = time.monotonic,
) -> StepMetrics:
    """One optimizer update from gradients accumulated over micro-batches.

    Gradients are combined weighted by each micro-batch's masked-target
    count, which makes the update mathematically identical (up to float
    rounding) to a single batch holding all instances at once.
    """
    if not micro_batches:
        raise ConfigError("train_step needs at least one micro-batch")
    if step is None:
        step = state.step
    t0 = clock()

    total_masked = 0
    total_samples = 0
    weighted_loss = 0.0
    acc: dict[str, np.ndarray] | None = None
    for micro_index, batch in enumerate(micro_batches):
        streams = DropoutStreams(state.seed, step, micro_index) if state.dropout_on else None
        loss, _, grads = loss_and_grads(
            state.params, state.config, batch,
            train_mode=state.dropout_on, streams=streams,
        )
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}")
        m = batch.num_masked
        total_masked += m
        total_samples += batch.size
        weighted_loss += loss * m
        if acc is None:
            acc = grads
            for g in acc.values():
                g *= m
        else:
            for name, g in grads.items():
                acc[name] += m * g
    assert acc is not None
    for g in acc.values():
        g /= total_masked

    lr = lr_at(step, state.schedule)
    adamw_step(state.params, acc, state.opt, state.hyper, lr)
    state.step = step + 1
    return StepMetrics(
        step=step,
        loss=weighted_loss / total_masked,
        lr=lr,
        wall_seconds=clock() - t0,
        samples=total_samples,
    )


def evaluate(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    val_instances: Sequence[MaskedInstance],
    micro_bsz: int = 32,
) -> float:
    """Mean cross-entropy over every masked position of the validation set."""
    if not val_instances:
        raise DataError("validation set is empty")
    total = 0.0
    count = 0
    for start in range(0, len(val_instances), micro_bsz):
        batch = make_batch(list(val_instances[start : start + micro_bsz]))
        loss, _ = forward_mlm(params, config, batch, train_mode=False)
        total += loss * batch.num_masked
        count += batch.num_masked
    return total / count


# --- checkpointing ----------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    state: TrainerState,
    elapsed_seconds: float,
    plan: BudgetPlan,
    next_eval_at: float,
) -> None:
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "opt_step_count": state.opt.step_count,
        "elapsed_seconds": elapsed_seconds,
        "next_eval_at": next_eval_at,
        "seed": state.seed,
        "dropout_on": state.dropout_on,
        "config": vars(state.config),
        "hyper": vars(state.hyper),
        "schedule": vars(state.schedule),
        "plan": vars(plan),
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for name, p in state.params.items():
        arrays[f"p::{name}"] = p
    for name, m in state.opt.m.items():
        arrays[f"m::{name}"] = m
    for name, v in state.opt.v.items():
        arrays[f"v::{name}"] = v
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[TrainerState, float, BudgetPlan, float]:
    """Restore (state, elapsed_seconds, plan, next_eval_at) from disk."""
    path = Path(path)
    try:
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"].tobytes()).decode("utf-8"))
            arrays = {k: z[k] for k in z.files if k != "meta"}
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise DataError(f"unreadable checkpoint {path}: {e}") from e
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"checkpoint {path}: unsupported version {meta.get('version')}")

    config = ModelConfig(**meta["config"])
    expected = param_spec(config)
    params, m, v = {}, {}, {}
    for key, arr in arrays.items():
        kind, _, name = key.partition("::")
        if name not in expected:
            raise DataError(f"checkpoint {path}: unexpected tensor {name!r}")
        if arr.shape != expected[name]:
            raise DataError(
                f"checkpoint {path}: shape mismatch for {name}: "
                f"{arr.shape} vs configured {expected[name]}"
            )
        {"p": params, "m": m, "v": v}[kind][name] = arr
    missing = expected.keys() - params.keys()
    if missing:
        raise DataError(f"checkpoint {path}: missing tensors {sorted(missing)[:3]}...")

    state = TrainerState(
        config=config,
        params=params,
        opt=OptimizerState(m=m, v=v, step_count=meta["opt_step_count"]),
        hyper=OptimizerHyper(**meta["hyper"]),
        schedule=ScheduleParams(**meta["schedule"]),
        seed=meta["seed"],
        step=meta["step"],
        dropout_on=meta["dropout_on"],
    )
    plan = BudgetPlan(**meta["plan"])
    return state, meta["elapsed_seconds"], plan, meta["next_eval_at"]


# --- the budgeted loop ------------------------------------------------------


def _eval_cadence(elapsed: float, budget: float) -> float:
    # Local import keeps the module dependency one-way at import time.
    from .sweep import eval_cadence

    return eval_cadence(elapsed, budget)


class Trainer:
    """Runs one trial: calibrate, plan, then step until budget or pause point.

    All data lives in RAM; batch b reads instances (b*bsz + i) mod N, so the
    data order is a pure function of the step index.
    """

    def __init__(
        self,
        train_instances: Sequence[MaskedInstance],
        val_instances: Sequence[MaskedInstance],
        config: ModelConfig,
        out_dir: str | Path,
        bsz: int,
        peak_lr: float,
        warmup_proportion: float,
        days_factor: float,
        budget_seconds: float,
        seed: int = 0,
        micro_bsz: int = 32,
        hyper: OptimizerHyper | None = None,
        dtype=np.float32,
        calib_steps: int = 8,
        calibration_excluded: bool = True,
        clock: Callable[[], float] = time.monotonic,
    ):
        if bsz < 1 or micro_bsz < 1:
            raise ConfigError("bsz and micro_bsz must be >= 1")
        if not train_instances:
            raise DataError("no training instances")
        self.train_instances = list(train_instances)
        self.val_instances = list(val_instances)
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.bsz = bsz
        self.peak_lr = peak_lr
        self.warmup_proportion = warmup_proportion
        self.days_factor = days_factor
        self.budget_seconds = budget_seconds
        self.seed = seed
        self.micro_bsz = min(micro_bsz, bsz)
        self.hyper = hyper if hyper is not None else OptimizerHyper()
        self.dtype = dtype
        self.calib_steps = calib_steps
        self.calibration_excluded = calibration_excluded
        self.clock = clock

        self.state: TrainerState | None = None
        self.plan: BudgetPlan | None = None
        self.elapsed = 0.0
        self.next_eval_at = 0.0
        self.last_val_loss: float | None = None

    @classmethod
    def from_shards(cls, shard_root: str | Path, **kwargs) -> "Trainer":
        """Build a trainer from a prepare-data output directory (train/ + valid/)."""
        shard_root = Path(shard_root)
        header = read_shards_header(shard_root / "train")
        preset = kwargs.pop("preset", "tiny")
        dropout = kwargs.pop("dropout", 0.1)
        attention_dropout = kwargs.pop("attention_dropout", 0.1)
        from .model import config_from_preset

        config = config_from_preset(
            preset, vocab_size=header.vocab_size, seq_len=header.seq_len,
            dropout=dropout, attention_dropout=attention_dropout,
        )
        train = list(read_shards(shard_root / "train"))
        val = list(read_shards(shard_root / "valid"))
        return cls(train, val, config, **kwargs)

    # -- plumbing --

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / "checkpoint.npz"

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / "metrics.tsv"

    @property
    def status_path(self) -> Path:
        return self.out_dir / "status.txt"

    def micro_batches_for(self, step: int) -> list[Batch]:
        n = len(self.train_instances)
        idx = [(step * self.bsz + i) % n for i in range(self.bsz)]
        batches = []
        for start in range(0, self.bsz, self.micro_bsz):
            chunk = [self.train_instances[j] for j in idx[start : start + self.micro_bsz]]
            batches.append(make_batch(chunk))
        return batches

    def _write_status(self, status: str, error: str = "") -> None:
        lines = [
            f"status={status}",
            f"step={self.state.step if self.state else 0}",
            f"elapsed_s={self.elapsed:.6f}",
        ]
        if self.last_val_loss is not None:
            lines.append(f"final_val_loss={self.last_val_loss:.6f}")
        if error:
            lines.append(f"error={error}")
        self.status_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    def _log(self, f: io.TextIOBase, line: str) -> None:
        f.write(line + "\n")
        f.flush()

    def _initialize(self) -> None:
        """Fresh start or resume; freezes the budget plan on first run."""
        if self.checkpoint_path.exists():
            state, elapsed, plan, next_eval = load_checkpoint(self.checkpoint_path)
            if vars(state.config) != vars(self.config):
                raise ConfigError(
                    f"checkpoint model config {vars(state.config)} does not match "
                    f"requested config {vars(self.config)}"
                )
            self.state, self.elapsed, self.plan, self.next_eval_at = state, elapsed, plan, next_eval
            return

        params = init_params(self.config, self.seed, dtype=self.dtype)
        # Calibration runs on a throwaway copy; only its measured time can count.
        probe = TrainerState(
            config=self.config,
            params=copy.deepcopy(params),
            opt=OptimizerState.zeros_like(params),
            hyper=self.hyper,
            schedule=ScheduleParams(self.peak_lr, self.warmup_proportion, 10**9),
            seed=self.seed,
            dropout_on=self.config.dropout > 0,
        )
        calib_step = [0]

        def one_step() -> None:
            train_step(probe, self.micro_batches_for(calib_step[0]), calib_step[0], self.clock)
            calib_step[0] += 1

        t0 = self.clock()
        sps = calibrate_throughput(one_step, self.calib_steps, self.clock)
        calib_seconds = self.clock() - t0
        del probe

        self.plan = plan_budget(self.budget_seconds, self.days_factor, sps)
        schedule = ScheduleParams(self.peak_lr, self.warmup_proportion, self.plan.total_steps)
        self.state = TrainerState(
            config=self.config,
            params=params,
            opt=OptimizerState.zeros_like(params),
            hyper=self.hyper,
            schedule=schedule,
            seed=self.seed,
            dropout_on=self.config.dropout > 0,
        )
        self.elapsed = 0.0 if self.calibration_excluded else calib_seconds
        self.next_eval_at = _eval_cadence(0.0, self.budget_seconds)

    def _evaluate_now(self, f: io.TextIOBase) -> None:
        self.last_val_loss = evaluate(
            self.state.params, self.config, self.val_instances, self.micro_bsz
        )
        self._log(f, f"{self.elapsed:.6f}\t{self.last_val_loss:.6f}")

    def run(self, run_until: float | None = None, max_steps: int | None = None) -> str:
        """Train until the budget, a pause point, or a step cap; returns status.

        run_until pauses once elapsed training time reaches that many
        seconds (resume by calling run again). max_steps is a hard step cap
        used mostly by tests.
        """
        self._initialize()
        pause_at = min(run_until, self.budget_seconds) if run_until is not None else self.budget_seconds
        fresh_metrics = not self.metrics_path.exists()
        status = STATUS_RUNNING
        with open(self.metrics_path, "a", encoding="utf-8") as f:
            if fresh_metrics:
                threads = os.environ.get("OPENBLAS_NUM_THREADS") or os.environ.get(
                    "OMP_NUM_THREADS") or str(os.cpu_count())
                self._log(f, f"# threads={threads} dtype={np.dtype(self.dtype).name} "
                             f"total_steps={self.plan.total_steps} "
                             f"steps_per_second={self.plan.steps_per_second:.6f}")
            try:
                while True:
                    done = (
                        self.elapsed >= self.budget_seconds
                        or self.state.step >= self.plan.total_steps
                        or (max_steps is not None and self.state.step >= max_steps)
                    )
                    if done:
                        if self.elapsed >= self.budget_seconds or self.state.step >= self.plan.total_steps:
                            self._evaluate_now(f)
                            status = STATUS_COMPLETED
                        else:
                            status = STATUS_PAUSED
                        break
                    if self.elapsed >= pause_at:
                        status = STATUS_PAUSED
                        break
                    if self.elapsed >= self.next_eval_at:
                        self._evaluate_now(f)
                        self.next_eval_at = _eval_cadence(self.elapsed, self.budget_seconds)
                    metrics = train_step(
                        self.state, self.micro_batches_for(self.state.step),
                        self.state.step, self.clock,
                    )
                    self.elapsed += metrics.wall_seconds
                    self._log(
                        f,
                        f"{metrics.step}\t{self.elapsed:.6f}\t{metrics.lr:.8g}\t{metrics.loss:.6f}",
                    )
            except DivergenceError as e:
                status = STATUS_DIVERGED
                self._write_status(status, error=str(e))
                return status
        save_checkpoint(
            self.checkpoint_path, self.state, self.elapsed, self.plan, self.next_eval_at
        )
        self._write_status(status)
        return status

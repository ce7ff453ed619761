"""Grid search under a shared wall-clock budget, with time-based pruning.

Methodology: every trial trains toward the same per-trial budget. At 12.5%
of the budget, trials whose latest validation loss exceeds a threshold are
dropped (this mostly removes divergent runs); at 50%, only the better half
survives; survivors resume until the budget is spent. The controller drives
trials in phases through those checkpoints, so pause/resume does the heavy
lifting and a limited number of worker slots can serve any grid size.

Trials are isolated workers that communicate only through their metrics
logs; the controller never shares mutable state with them. The clock is
injected so the whole pruning lifecycle can run under a virtual clock.
"""

from __future__ import annotations

import enum
import itertools
import math
import os
import statistics
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .errors import ConfigError, ControllerError, DataError

# Evaluation cadence, expressed as fractions of the budget. A 24-hour budget
# yields one eval every 10 minutes inside the first 5%, then every 30 minutes.
_EARLY_INTERVAL_FRACTION = 10.0 / 1440.0
_LATE_INTERVAL_FRACTION = 30.0 / 1440.0
_EARLY_WINDOW_FRACTION = 0.05


def eval_cadence(elapsed_seconds: float, budget_seconds: float) -> float:
    """Next validation-loss time for a trial at `elapsed_seconds` into its budget."""
    if budget_seconds <= 0:
        raise ConfigError(f"budget_seconds must be positive, got {budget_seconds}")
    if not 0 <= elapsed_seconds < budget_seconds:
        raise ConfigError(
            f"elapsed {elapsed_seconds} outside [0, budget {budget_seconds})"
        )
    if elapsed_seconds < _EARLY_WINDOW_FRACTION * budget_seconds:
        interval = budget_seconds * _EARLY_INTERVAL_FRACTION
    else:
        interval = budget_seconds * _LATE_INTERVAL_FRACTION
    return elapsed_seconds + interval


# --- clocks -----------------------------------------------------------------


class RealClock:
    mode = "real"

    def now(self) -> float:
        return time.monotonic()


class VirtualClock:
    """Manually advanced clock; advancing is monotonic and idempotent."""

    mode = "virtual"

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def advance_to(self, t: float) -> None:
        if t > self._now:
            self._now = t


# --- grid and trial state ---------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    bsz_values: tuple[int, ...] = (4096, 8192, 16384)
    peak_lr_values: tuple[float, ...] = (5e-4, 1e-3, 2e-3)
    warmup_values: tuple[float, ...] = (0.0, 0.02, 0.04, 0.06)
    days_factor_values: tuple[float, ...] = (1.0, 3.0, 9.0)

    def __post_init__(self) -> None:
        for name in ("bsz_values", "peak_lr_values", "warmup_values", "days_factor_values"):
            if not getattr(self, name):
                raise ConfigError(f"search axis {name} is empty")

    @property
    def size(self) -> int:
        return (
            len(self.bsz_values)
            * len(self.peak_lr_values)
            * len(self.warmup_values)
            * len(self.days_factor_values)
        )


@dataclass(frozen=True)
class TrialConfig:
    trial_id: int
    bsz: int
    peak_lr: float
    warmup_proportion: float
    days_factor: float
    seed: int


def build_grid(space: SearchSpace, seed: int) -> list[TrialConfig]:
    """Full cartesian product in lexicographic axis order, ids 0..n-1.

    Every trial carries the same seed so configurations differ in
    hyperparameters only.
    """
    grid = []
    combos = itertools.product(
        space.bsz_values, space.peak_lr_values, space.warmup_values, space.days_factor_values
    )
    for i, (bsz, lr, wu, days) in enumerate(combos):
        grid.append(
            TrialConfig(
                trial_id=i, bsz=bsz, peak_lr=lr,
                warmup_proportion=wu, days_factor=days, seed=seed,
            )
        )
    return grid


class TrialStatus(enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    PRUNED_THRESHOLD = "pruned_threshold"
    PRUNED_RANK = "pruned_rank"
    DIVERGED = "diverged"
    COMPLETED = "completed"


_TERMINAL = {
    TrialStatus.PRUNED_THRESHOLD,
    TrialStatus.PRUNED_RANK,
    TrialStatus.DIVERGED,
    TrialStatus.COMPLETED,
}
_ALLOWED = {
    TrialStatus.PENDING: {TrialStatus.RUNNING},
    TrialStatus.RUNNING: _TERMINAL,
}


@dataclass
class TrialState:
    """Live status plus the eval history the controller prunes on."""

    config: TrialConfig
    status: TrialStatus = TrialStatus.PENDING
    evals: list[tuple[float, float]] = field(default_factory=list)
    note: str = ""

    def transition(self, new: TrialStatus) -> None:
        if new == self.status:
            return
        if self.status in _TERMINAL:
            raise ControllerError(
                f"trial {self.config.trial_id}: illegal transition "
                f"{self.status.value} -> {new.value} (terminal states are immutable)"
            )
        if new not in _ALLOWED.get(self.status, set()):
            raise ControllerError(
                f"trial {self.config.trial_id}: illegal transition "
                f"{self.status.value} -> {new.value}"
            )
        self.status = new

    def record_eval(self, elapsed: float, loss: float) -> None:
        if self.evals and elapsed <= self.evals[-1][0]:
            raise ControllerError(
                f"trial {self.config.trial_id}: eval at {elapsed} not after {self.evals[-1][0]}"
            )
        self.evals.append((elapsed, loss))

    @property
    def latest_loss(self) -> float:
        if not self.evals:
            raise ControllerError(f"trial {self.config.trial_id} has no evals")
        return self.evals[-1][1]

    @property
    def best_loss(self) -> float:
        finite = [l for _, l in self.evals if math.isfinite(l)]
        if not finite:
            return math.nan
        return min(finite)


@dataclass(frozen=True)
class PruneSchedule:
    """Two budget-relative checkpoints: a loss bar, then a keep-top fraction."""

    checkpoint1_fraction: float = 0.125
    loss_threshold: float = 6.0
    checkpoint2_fraction: float = 0.5
    keep_fraction: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.checkpoint1_fraction < self.checkpoint2_fraction < 1:
            raise ConfigError(
                "need 0 < checkpoint1 < checkpoint2 < 1, got "
                f"{self.checkpoint1_fraction}, {self.checkpoint2_fraction}"
            )
        if self.loss_threshold <= 0:
            raise ConfigError(f"loss_threshold must be positive, got {self.loss_threshold}")
        if not 0 < self.keep_fraction <= 1:
            raise ConfigError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")


def apply_threshold_prune(trials: list[TrialState], threshold: float) -> list[TrialState]:
    """Drop running trials whose latest loss is above the bar or not finite."""
    for t in trials:
        if t.status is not TrialStatus.RUNNING:
            continue
        if not t.evals:
            raise ControllerError(
                f"trial {t.config.trial_id} reached the threshold checkpoint with no evals"
            )
        loss = t.latest_loss
        if not math.isfinite(loss) or loss > threshold:
            t.transition(TrialStatus.PRUNED_THRESHOLD)
            t.note = t.note or f"loss {loss:.4f} above threshold {threshold}"
    return trials


def apply_rank_prune(trials: list[TrialState], keep_fraction: float) -> list[TrialState]:
    """Keep the top ceil(keep_fraction * n) running trials by latest loss.

    Ties break toward the lower trial_id so the decision is deterministic.
    """
    running = [t for t in trials if t.status is TrialStatus.RUNNING]
    if not running:
        return trials
    ranked = sorted(running, key=lambda t: (t.latest_loss, t.config.trial_id))
    keep = math.ceil(keep_fraction * len(ranked))
    for t in ranked[keep:]:
        t.transition(TrialStatus.PRUNED_RANK)
        t.note = f"rank prune: loss {t.latest_loss:.4f} outside top {keep}/{len(ranked)}"
    return trials


# --- trial runners ----------------------------------------------------------


class TrialRunner(Protocol):
    def run_until(self, state: TrialState, target_elapsed: float) -> None:
        """Advance one trial to target_elapsed seconds of training, appending evals."""


class SimulatedTrialRunner:
    """Replays injected loss curves on a virtual clock; no model is trained.

    curves maps trial_id -> f(elapsed_seconds) -> loss. A non-finite loss
    marks the trial diverged at that eval; an exception from the curve is
    treated as a worker crash.
    """

    def __init__(
        self,
        curves: dict[int, Callable[[float], float]],
        budget_seconds: float,
        clock: VirtualClock,
    ):
        self.curves = curves
        self.budget_seconds = budget_seconds
        self.clock = clock

    def _eval_points(self, target: float) -> list[float]:
        points = []
        t = eval_cadence(0.0, self.budget_seconds)
        while t <= target and t < self.budget_seconds:
            points.append(t)
            t = eval_cadence(t, self.budget_seconds)
        if target >= self.budget_seconds:
            points.append(self.budget_seconds)  # the completion eval
        return points

    def run_until(self, state: TrialState, target_elapsed: float) -> None:
        target = min(target_elapsed, self.budget_seconds)
        curve = self.curves[state.config.trial_id]
        last = state.evals[-1][0] if state.evals else 0.0
        for t in self._eval_points(target):
            if t <= last:
                continue
            try:
                loss = float(curve(t))
            except Exception as e:  # injected worker crash
                state.transition(TrialStatus.DIVERGED)
                state.note = f"worker crash: {e!r}"
                self.clock.advance_to(t)
                return
            state.record_eval(t, loss)
            if not math.isfinite(loss):
                state.transition(TrialStatus.DIVERGED)
                state.note = f"non-finite validation loss at {t:.1f}s"
                self.clock.advance_to(t)
                return
        self.clock.advance_to(target)


def parse_metrics(path: str | Path) -> tuple[list[tuple], list[tuple[float, float]]]:
    """Split a metrics log into step records (4 fields) and eval records (2)."""
    steps: list[tuple] = []
    evals: list[tuple[float, float]] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) == 4:
            steps.append((int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
        elif len(parts) == 2:
            evals.append((float(parts[0]), float(parts[1])))
        else:
            raise DataError(f"{path}:{lineno}: expected 2 or 4 fields, got {len(parts)}")
    return steps, evals


def _read_status(path: Path) -> dict[str, str]:
    result: dict[str, str] = {}
    if not path.exists():
        return result
    for line in path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            result[k] = v
    return result


class SubprocessTrialRunner:
    """Runs each trial as an isolated `budgetlm train` subprocess.

    The trial's state directory holds its checkpoint, metrics log, and
    status file; pause/resume happens through --run-until.
    """

    def __init__(
        self,
        shard_root: str | Path,
        trials_root: str | Path,
        budget_seconds: float,
        preset: str = "tiny",
        seed: int = 0,
        micro_bsz: int = 32,
        threads_per_trial: int = 1,
        extra_args: tuple[str, ...] = (),
    ):
        self.shard_root = Path(shard_root)
        self.trials_root = Path(trials_root)
        self.budget_seconds = budget_seconds
        self.preset = preset
        self.micro_bsz = micro_bsz
        self.threads_per_trial = threads_per_trial
        self.extra_args = extra_args

    def trial_dir(self, trial_id: int) -> Path:
        return self.trials_root / f"trial_{trial_id:04d}"

    def run_until(self, state: TrialState, target_elapsed: float) -> None:
        cfg = state.config
        out_dir = self.trial_dir(cfg.trial_id)
        out_dir.mkdir(parents=True, exist_ok=True)
        cmd = [
            sys.executable, "-m", "budgetlm", "train",
            "--shards", str(self.shard_root),
            "--preset", self.preset,
            "--bsz", str(cfg.bsz),
            "--peak-lr", repr(cfg.peak_lr),
            "--warmup", repr(cfg.warmup_proportion),
            "--days-factor", repr(cfg.days_factor),
            "--budget-seconds", repr(self.budget_seconds),
            "--run-until", repr(min(target_elapsed, self.budget_seconds)),
            "--seed", str(cfg.seed),
            "--micro-bsz", str(self.micro_bsz),
            "--out", str(out_dir),
            *self.extra_args,
        ]
        env = dict(os.environ)
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            env[var] = str(self.threads_per_trial)
        proc = subprocess.run(cmd, capture_output=True, text=True, env=env)

        metrics_path = out_dir / "metrics.tsv"
        if metrics_path.exists():
            _, evals = parse_metrics(metrics_path)
            last = state.evals[-1][0] if state.evals else -1.0
            for elapsed, loss in evals:
                if elapsed > last:
                    state.record_eval(elapsed, loss)

        status = _read_status(out_dir / "status.txt")
        if proc.returncode != 0:
            state.transition(TrialStatus.DIVERGED)
            state.note = f"worker exit {proc.returncode}: {proc.stderr.strip()[-400:]}"
        elif status.get("status") == "diverged":
            state.transition(TrialStatus.DIVERGED)
            state.note = status.get("error", "diverged")


# --- the controller ---------------------------------------------------------


@dataclass(frozen=True)
class TrialRow:
    trial_id: int
    status: str
    final_loss: float
    bsz: int
    peak_lr: float
    warmup_proportion: float
    days_factor: float
    rank: int | None


@dataclass
class SweepReport:
    budget_seconds: float
    slots: int
    prune: PruneSchedule
    rows: list[TrialRow]
    audit_lines: list[str]
    clock_mode: str

    @property
    def finishers(self) -> list[TrialRow]:
        return [r for r in self.rows if r.status == TrialStatus.COMPLETED.value]

    def to_tsv(self) -> str:
        lines = ["trial_id\tstatus\tfinal_loss\tbsz\tpeak_lr\twarmup\tdays_factor"]
        for r in self.rows:
            loss = f"{r.final_loss:.6f}" if math.isfinite(r.final_loss) else "nan"
            lines.append(
                f"{r.trial_id}\t{r.status}\t{loss}\t{r.bsz}\t{r.peak_lr:.8g}"
                f"\t{r.warmup_proportion:.8g}\t{r.days_factor:.8g}"
            )
        return "\n".join(lines) + "\n"


def run_sweep(
    grid: list[TrialConfig],
    budget_seconds: float,
    slots: int,
    prune: PruneSchedule,
    runner: TrialRunner,
    clock: RealClock | VirtualClock | None = None,
) -> SweepReport:
    """Drive every trial to a terminal state and report the standings.

    Trials advance in three phases (to the threshold checkpoint, to the rank
    checkpoint, to the full budget) with at most `slots` advancing at once.
    """
    if slots < 1:
        raise ConfigError(f"slots must be >= 1, got {slots}")
    if budget_seconds <= 0:
        raise ConfigError(f"budget_seconds must be positive, got {budget_seconds}")
    if clock is None:
        clock = RealClock()

    states = {cfg.trial_id: TrialState(cfg) for cfg in grid}
    audit: list[str] = []

    def log(msg: str) -> None:
        audit.append(f"{clock.now():.3f}\t{msg}")

    def advance_survivors(target: float) -> None:
        survivors = [
            t for t in states.values()
            if t.status in (TrialStatus.PENDING, TrialStatus.RUNNING)
        ]
        for t in survivors:
            t.transition(TrialStatus.RUNNING)
        if slots == 1:
            for t in survivors:
                runner.run_until(t, target)
        else:
            with ThreadPoolExecutor(max_workers=slots) as pool:
                list(pool.map(lambda t: runner.run_until(t, target), survivors))
        for t in survivors:
            if t.status is TrialStatus.DIVERGED:
                log(f"trial={t.config.trial_id}\tevent=diverged\tnote={t.note}")

    log(f"sweep_start\ttrials={len(grid)}\tbudget={budget_seconds}\tslots={slots}")

    target1 = prune.checkpoint1_fraction * budget_seconds
    advance_survivors(target1)
    log(f"checkpoint=threshold\ttarget={target1:.3f}\tthreshold={prune.loss_threshold}")
    before = {t.config.trial_id: t.status for t in states.values()}
    apply_threshold_prune(list(states.values()), prune.loss_threshold)
    for t in states.values():
        if t.status is TrialStatus.PRUNED_THRESHOLD and before[t.config.trial_id] != t.status:
            log(f"trial={t.config.trial_id}\tdecision=pruned_threshold\tnote={t.note}")

    target2 = prune.checkpoint2_fraction * budget_seconds
    advance_survivors(target2)
    log(f"checkpoint=rank\ttarget={target2:.3f}\tkeep_fraction={prune.keep_fraction}")
    before = {t.config.trial_id: t.status for t in states.values()}
    apply_rank_prune(list(states.values()), prune.keep_fraction)
    for t in states.values():
        if t.status is TrialStatus.PRUNED_RANK and before[t.config.trial_id] != t.status:
            log(f"trial={t.config.trial_id}\tdecision=pruned_rank\tnote={t.note}")

    advance_survivors(budget_seconds)
    for t in states.values():
        if t.status is TrialStatus.RUNNING:
            t.transition(TrialStatus.COMPLETED)
            log(f"trial={t.config.trial_id}\tevent=completed\tloss={t.latest_loss:.6f}")
    log("sweep_end")

    finishers = sorted(
        (t for t in states.values() if t.status is TrialStatus.COMPLETED),
        key=lambda t: (t.latest_loss, t.config.trial_id),
    )
    others = sorted(
        (t for t in states.values() if t.status is not TrialStatus.COMPLETED),
        key=lambda t: t.config.trial_id,
    )
    rows = []
    for rank, t in enumerate(finishers, 1):
        rows.append(_row(t, rank))
    for t in others:
        rows.append(_row(t, None))
    return SweepReport(
        budget_seconds=budget_seconds,
        slots=slots,
        prune=prune,
        rows=rows,
        audit_lines=audit,
        clock_mode=clock.mode,
    )


def _row(t: TrialState, rank: int | None) -> TrialRow:
    loss = math.nan
    if t.evals:
        loss = t.evals[-1][1]
    return TrialRow(
        trial_id=t.config.trial_id,
        status=t.status.value,
        final_loss=loss,
        bsz=t.config.bsz,
        peak_lr=t.config.peak_lr,
        warmup_proportion=t.config.warmup_proportion,
        days_factor=t.config.days_factor,
        rank=rank,
    )


def summarize_axis(report: SweepReport, axis: str) -> dict[float, tuple[float, float, float]]:
    """Min/median/max finisher loss per value of one hyperparameter axis."""
    valid = {"bsz", "peak_lr", "warmup_proportion", "days_factor"}
    if axis not in valid:
        raise ConfigError(f"axis must be one of {sorted(valid)}, got {axis!r}")
    finishers = report.finishers
    if not finishers:
        raise ControllerError("no finished trials to summarize")
    groups: dict[float, list[float]] = {}
    for r in finishers:
        groups.setdefault(getattr(r, axis), []).append(r.final_loss)
    return {
        value: (min(losses), statistics.median(losses), max(losses))
        for value, losses in sorted(groups.items())
    }


def parse_grid_file(path: str | Path) -> tuple[SearchSpace, dict[str, str]]:
    """Read axis values from a key=value grid file.

    Recognized axes: bsz, peak_lr, warmup, days_factor (comma-separated
    values). Unrecognized keys are returned for the caller to interpret.
    """
    axes: dict[str, tuple] = {}
    extras: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "bsz":
                axes["bsz_values"] = tuple(int(v) for v in value.split(","))
            elif key == "peak_lr":
                axes["peak_lr_values"] = tuple(float(v) for v in value.split(","))
            elif key == "warmup":
                axes["warmup_values"] = tuple(float(v) for v in value.split(","))
            elif key == "days_factor":
                axes["days_factor_values"] = tuple(float(v) for v in value.split(","))
            else:
                extras[key] = value
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from e
    return SearchSpace(**axes), extras

"""Training loop, schedules, gradient clipping, grid tuning, persistence.

Runs are deterministic functions of their config: the shuffle stream,
problem synthesis and optimizer state all derive from seeds, and records
are serialized with round-trippable float reprs, so identical configs
produce byte-identical CSV output.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .numkit import NonFiniteError, rng_stream
from .optim import ConfigError, make_optimizer
from .problems import Problem, make_problem

_STREAM_SHUFFLE = 10

DIVERGENCE_LOSS_CAP = 1e12

# stock tuning grid for the adaptive methods' base rate
DEFAULT_ADAM_GRID = (0.0005, 0.0007, 0.001, 0.002, 0.003, 0.004, 0.005)

CSV_HEADER = (
    "step,epoch,phase,effective_lr,gamma,lambda_corrected,"
    "train_loss,test_metric,switched"
)


class GridSearchError(RuntimeError):
    """Every grid point diverged; carries the per-point diagnostics."""


# ---------------------------------------------------------------------------
# schedules and clipping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Constant or step-decay learning-rate schedule.

    Milestones are fractions of the total epoch budget so the same
    shape (decay at 1/2, 3/4 and 7/8 of the run) scales to any length.
    """

    kind: str = "constant"
    milestones: tuple = (0.5, 0.75, 0.875)
    factor: float = 0.1

    def __post_init__(self):
        if self.kind not in ("constant", "step_decay"):
            raise ConfigError(
                f"schedule.kind must be constant or step_decay, got {self.kind!r}"
            )
        ms = tuple(float(m) for m in self.milestones)
        object.__setattr__(self, "milestones", ms)
        if any(not 0.0 < m < 1.0 for m in ms):
            raise ConfigError(f"schedule.milestones must lie in (0, 1), got {ms}")
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(
                f"schedule.milestones must be strictly increasing, got {ms}"
            )
        if not self.factor > 0:
            raise ConfigError(f"schedule.factor must be positive, got {self.factor}")


def _schedule_scale(schedule: Schedule, epoch: int, total_epochs: int) -> float:
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if schedule.kind == "constant":
        return 1.0
    passed = sum(
        1 for m in schedule.milestones if epoch >= math.floor(m * total_epochs)
    )
    return schedule.factor**passed


def apply_schedule(
    base_lr: float, schedule: Schedule, epoch: int, total_epochs: int
) -> float:
    """Effective learning rate at the given epoch: base * factor^#passed."""
    return base_lr * _schedule_scale(schedule, epoch, total_epochs)


def clip_grad_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale g onto the max_norm ball; direction preserved, below-norm
    gradients returned unchanged (bit-identical)."""
    if not max_norm > 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    problem: dict
    optimizer: dict
    epochs: int
    batch_size: int
    seed: int = 0
    schedule: Schedule = field(default_factory=Schedule)
    grad_clip_norm: Optional[float] = None
    log_every: int = 1
    output_dir: Optional[str] = None


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Parse the JSON wire format into an ExperimentConfig (types only;
    see validate_config for the semantic checks)."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config must be a mapping, got {type(doc).__name__}")
    doc = dict(doc)
    known = {
        "problem", "optimizer", "epochs", "batch_size", "seed",
        "schedule", "grad_clip_norm", "log_every", "output_dir",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    for name in ("problem", "optimizer", "epochs", "batch_size"):
        if name not in doc:
            raise ConfigError(f"config field {name!r} is required")
    sched_doc = doc.get("schedule", {"kind": "constant"})
    if not isinstance(sched_doc, dict):
        raise ConfigError("schedule must be a mapping")
    sched_kwargs = dict(sched_doc)
    if "milestones" in sched_kwargs:
        sched_kwargs["milestones"] = tuple(sched_kwargs["milestones"])
    try:
        schedule = Schedule(**sched_kwargs)
    except TypeError as exc:
        raise ConfigError(f"schedule: {exc}")
    try:
        epochs = int(doc["epochs"])
        batch_size = int(doc["batch_size"])
        seed = int(doc.get("seed", 0))
        log_every = int(doc.get("log_every", 1))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"integer config field: {exc}")
    clip = doc.get("grad_clip_norm")
    if clip is not None:
        try:
            clip = float(clip)
        except (TypeError, ValueError):
            raise ConfigError(f"grad_clip_norm must be a number, got {clip!r}")
    return ExperimentConfig(
        problem=doc["problem"],
        optimizer=doc["optimizer"],
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        schedule=schedule,
        grad_clip_norm=clip,
        log_every=log_every,
        output_dir=doc.get("output_dir"),
    )


def validate_config(cfg: ExperimentConfig):
    """Check every config invariant; returns the built (problem, optimizer)."""
    problem = make_problem(cfg.problem)
    optimizer = make_optimizer(cfg.optimizer)
    if cfg.epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.batch_size > problem.n_train:
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds training-set size "
            f"{problem.n_train}"
        )
    if cfg.grad_clip_norm is not None and not cfg.grad_clip_norm > 0:
        raise ConfigError(
            f"grad_clip_norm must be positive, got {cfg.grad_clip_norm}"
        )
    if cfg.log_every < 1:
        raise ConfigError(f"log_every must be >= 1, got {cfg.log_every}")
    return problem, optimizer


# ---------------------------------------------------------------------------
# records and summaries
# ---------------------------------------------------------------------------


@dataclass
class TrainRecord:
    step: int
    epoch: int
    phase: str
    effective_lr: float
    gamma: Optional[float]
    lambda_corrected: Optional[float]
    train_loss: float
    test_metric: float
    switched: bool


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(
                ",".join(
                    _fmt(v)
                    for v in (
                        r.step, r.epoch, r.phase, r.effective_lr, r.gamma,
                        r.lambda_corrected, r.train_loss, r.test_metric,
                        r.switched,
                    )
                )
                + "\n"
            )


def read_records_csv(path) -> list:
    records = []
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected record header: {header!r}")
        for line in fh:
            f = line.rstrip("\n").split(",")
            records.append(
                TrainRecord(
                    step=int(f[0]),
                    epoch=int(f[1]),
                    phase=f[2],
                    effective_lr=float(f[3]),
                    gamma=float(f[4]) if f[4] else None,
                    lambda_corrected=float(f[5]) if f[5] else None,
                    train_loss=float(f[6]),
                    test_metric=float(f[7]),
                    switched=f[8] == "true",
                )
            )
    return records


@dataclass
class RunSummary:
    optimizer_kind: str
    seed: int
    metric_name: str
    higher_is_better: bool
    steps: int
    steps_per_epoch: int
    epochs_run: int
    final_train_loss: Optional[float]
    best_test_metric: Optional[float]
    final_test_metric: Optional[float]
    switched: bool
    switch_step: Optional[int]
    switch_epoch: Optional[float]
    Lambda: Optional[float]
    diverged: bool
    divergence_reason: Optional[str]
    csv_path: Optional[str]
    events_path: Optional[str]
    records: list = field(default_factory=list, repr=False)

    def event_dict(self) -> dict:
        return {
            "type": "summary",
            "optimizer": self.optimizer_kind,
            "seed": self.seed,
            "metric": self.metric_name,
            "steps": self.steps,
            "final_train_loss": self.final_train_loss,
            "best_test_metric": self.best_test_metric,
            "final_test_metric": self.final_test_metric,
            "switched": self.switched,
            "switch_step": self.switch_step,
            "switch_epoch": self.switch_epoch,
            "Lambda": self.Lambda,
            "diverged": self.diverged,
            "divergence_reason": self.divergence_reason,
        }


# ---------------------------------------------------------------------------
# experiment loop
# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> RunSummary:
    """Train one optimizer on one problem; returns the summary with the
    per-interval records attached (and persisted when a directory is set).

    Divergence (non-finite gradient or loss, or loss above the cap) ends
    the run gracefully with a diagnostic event rather than raising.
    """
    problem, optimizer = validate_config(cfg)
    rng = rng_stream(cfg.seed, _STREAM_SHUFFLE)
    w = problem.initial_point()
    n = problem.n_train
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs

    records: list[TrainRecord] = []
    events: list[dict] = []
    step = 0
    diverged = False
    reason = None
    switch_step = None
    Lambda = None

    for epoch in range(cfg.epochs):
        scale = _schedule_scale(cfg.schedule, epoch, cfg.epochs)
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            g = problem.gradient(w, idx)
            if not np.all(np.isfinite(g)):
                diverged, reason = True, "non-finite gradient"
                break
            if cfg.grad_clip_norm is not None:
                g = clip_grad_norm(g, cfg.grad_clip_norm)
            try:
                w, report = optimizer.step(w, g, lr_scale=scale)
            except NonFiniteError as exc:
                diverged, reason = True, str(exc)
                break
            step += 1

            if report.switched:
                switch_step = step
                Lambda = report.lambda_corrected
                events.append(
                    {
                        "type": "switch",
                        "step": step,
                        "epoch": step / steps_per_epoch,
                        "Lambda": Lambda,
                    }
                )

            if step % cfg.log_every == 0 or report.switched or step == total_steps:
                loss = problem.loss(w)
                metric = problem.test_metric(w)
                records.append(
                    TrainRecord(
                        step=step,
                        epoch=epoch,
                        phase=report.phase_after,
                        effective_lr=report.effective_lr,
                        gamma=report.gamma,
                        lambda_corrected=report.lambda_corrected,
                        train_loss=loss,
                        test_metric=metric,
                        switched=report.switched,
                    )
                )
                if not math.isfinite(loss) or loss > DIVERGENCE_LOSS_CAP:
                    diverged, reason = True, f"loss {loss!r} at step {step}"
                    break
        if diverged:
            break

    if diverged:
        events.append(
            {"type": "divergence", "step": step, "epoch": epoch, "reason": reason}
        )

    metrics = [r.test_metric for r in records if math.isfinite(r.test_metric)]
    if metrics:
        best = max(metrics) if problem.higher_is_better else min(metrics)
    else:
        best = None

    summary = RunSummary(
        optimizer_kind=optimizer.kind,
        seed=cfg.seed,
        metric_name=problem.metric_name,
        higher_is_better=problem.higher_is_better,
        steps=step,
        steps_per_epoch=steps_per_epoch,
        epochs_run=epoch + 1 if cfg.epochs else 0,
        final_train_loss=records[-1].train_loss if records else None,
        best_test_metric=best,
        final_test_metric=records[-1].test_metric if records else None,
        switched=switch_step is not None,
        switch_step=switch_step,
        switch_epoch=switch_step / steps_per_epoch if switch_step else None,
        Lambda=Lambda,
        diverged=diverged,
        divergence_reason=reason,
        csv_path=None,
        events_path=None,
        records=records,
    )

    target_dir = out_dir or cfg.output_dir
    if target_dir is not None:
        os.makedirs(target_dir, exist_ok=True)
        stem = f"run-{cfg.seed}-{optimizer.kind}"
        summary.csv_path = os.path.join(target_dir, stem + ".csv")
        summary.events_path = os.path.join(target_dir, stem + ".events.jsonl")
        write_records_csv(records, summary.csv_path)
        with open(summary.events_path, "w") as fh:
            for event in events + [summary.event_dict()]:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------------------
# grid tuning
# ---------------------------------------------------------------------------


@dataclass
class GridResult:
    best_lr: float
    best_summary: RunSummary
    per_lr: list  # (lr, RunSummary) in ascending lr order


def _derived_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(1000 + index,))
    return int(ss.generate_state(1)[0])


def grid_tune(
    cfg: ExperimentConfig,
    lr_grid=DEFAULT_ADAM_GRID,
    out_dir: Optional[str] = None,
) -> GridResult:
    """Run the template config once per learning rate (independent derived
    seeds), selecting the best final test metric; ties go to the smaller
    rate. Raises GridSearchError when every point diverges."""
    grid = sorted(float(lr) for lr in lr_grid)
    if not grid:
        raise ConfigError("lr_grid must be nonempty")
    per_lr = []
    best = None
    for i, lr in enumerate(grid):
        run_cfg = replace(
            cfg,
            optimizer={**cfg.optimizer, "alpha": lr},
            seed=_derived_seed(cfg.seed, i),
        )
        summary = run_experiment(run_cfg, out_dir=out_dir)
        per_lr.append((lr, summary))
        if summary.diverged or summary.final_test_metric is None:
            continue
        if best is None:
            best = (lr, summary)
        else:
            improved = (
                summary.final_test_metric > best[1].final_test_metric
                if summary.higher_is_better
                else summary.final_test_metric < best[1].final_test_metric
            )
            if improved:
                best = (lr, summary)
    if best is None:
        details = "; ".join(
            f"lr={lr}: {s.divergence_reason or 'no records'}" for lr, s in per_lr
        )
        raise GridSearchError(f"all grid points diverged: {details}")
    return GridResult(best_lr=best[0], best_summary=best[1], per_lr=per_lr)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaPoint:
    step: int
    gamma: float
    lambda_corrected: float
    running_mean: float


def gamma_trace(records) -> list:
    """Extract the (step, gamma, bias-corrected average) series with a
    running mean from a switching run's records; empty for runs of
    non-switching optimizers."""
    if not any(r.phase in ("adam", "sgd") for r in records):
        return []
    points = []
    total = 0.0
    for r in records:
        if r.gamma is None:
            continue
        total += r.gamma
        points.append(
            GammaPoint(
                step=r.step,
                gamma=r.gamma,
                lambda_corrected=r.lambda_corrected,
                running_mean=total / (len(points) + 1),
            )
        )
    return points

"""Experiment harness: end-to-end runs, count-rate sweeps, sampler benchmarks.

A run trains a model on freshly drawn downsized samples, evaluates on a
held-out set of new draws (the deployment case: classify a measurement the
model has never seen), and reports accuracy, a row-normalized confusion
matrix, the loss curve, the live time implied by the count budget, and
wall-clock timings. All randomness derives from one root seed.
"""

from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .cam import DiscardRanges
from .errors import ValidationError
from .sampling import (
    BatchGenerator,
    SampleBudget,
    rsm1_event_list,
    rsm2_binomial_thinning,
    rsm3_weighted_counts,
    rsm4_render,
)
from .spectra import DetectorRate, SpeciesLibrary, live_time


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row-normalized actual-vs-predicted tally; absent classes give zero rows."""

    values: np.ndarray
    row_counts: np.ndarray  # samples per actual class, before normalization

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        row_counts = np.asarray(self.row_counts, dtype=np.int64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValidationError(f"confusion matrix must be square, got {values.shape}")
        if row_counts.shape != (values.shape[0],):
            raise ValidationError("row_counts length must match matrix side")
        sums = values.sum(axis=1)
        ok = np.isclose(sums, 1.0, atol=1e-9) | (sums == 0.0)
        if not np.all(ok):
            raise ValidationError(f"rows must sum to 1 (or 0 for absent classes): {sums}")
        values.flags.writeable = False
        row_counts.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_counts", row_counts)

    @property
    def n_classes(self) -> int:
        return self.values.shape[0]

    def accuracy(self) -> float:
        """Diagonal weighted by per-class sample counts."""
        total = self.row_counts.sum()
        if total == 0:
            return 0.0
        return float(np.diag(self.values) @ self.row_counts / total)


def confusion_matrix(predictions, labels, n_classes: int) -> ConfusionMatrix:
    """Tally predictions against true labels and row-normalize."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValidationError(
            f"predictions {predictions.shape} and labels {labels.shape} must be equal-length vectors"
        )
    if len(labels) and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError("labels out of range")
    if len(predictions) and (predictions.min() < 0 or predictions.max() >= n_classes):
        raise ValidationError("predictions out of range")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    row_counts = counts.sum(axis=1)
    values = np.divide(
        counts, row_counts[:, None], out=np.zeros((n_classes, n_classes)), where=row_counts[:, None] > 0
    )
    return ConfusionMatrix(values=values, row_counts=row_counts)


@dataclass(frozen=True)
class ExperimentConfig:
    library: SpeciesLibrary
    budget: SampleBudget
    rate: DetectorRate
    seed: int
    epochs: int = 150
    batch_size: int = 128
    lr: float = 0.01
    discard: DiscardRanges | None = None
    model: nn.ModelConfig | None = None
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    samples_per_epoch: int = 2560
    target_accuracy: float = 0.95
    test_per_class: int = 1000
    val_per_class: int = 16
    dtype: str = "float32"
    filters: int = 16
    kernel_size: int = 9
    n_blocks: int = 3

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9 or any(f < 0 for f in self.split):
            raise ValidationError(f"split fractions must be non-negative and sum to 1: {self.split}")
        if self.epochs < 0 or self.batch_size < 1 or self.test_per_class < 1:
            raise ValidationError("epochs >= 0, batch_size >= 1 and test_per_class >= 1 required")

    @property
    def n_classes(self) -> int:
        return max(2, len(self.library))

    def input_width(self) -> int:
        width = self.library.n_channels
        if self.discard is not None:
            width -= self.discard.discarded_width
        return width

    def model_config(self) -> nn.ModelConfig:
        if self.model is not None:
            return self.model
        return nn.default_model_config(
            self.input_width(),
            self.n_classes,
            seed=self.seed,
            filters=self.filters,
            kernel_size=self.kernel_size,
            n_blocks=self.n_blocks,
        )

    def train_settings(self) -> nn.TrainSettings:
        return nn.TrainSettings(
            lr=self.lr,
            target_accuracy=self.target_accuracy,
            samples_per_epoch=self.samples_per_epoch,
            val_per_class=self.val_per_class,
            dtype=self.dtype,
        )


@dataclass
class ExperimentReport:
    accuracy: float
    confusion: ConfusionMatrix
    labels: list[str]
    loss_curve: np.ndarray
    val_accuracy: list[float]
    live_time_seconds: float
    budget_k: int
    epochs_run: int
    reached_target: bool
    degenerate: bool
    timings: dict
    params: nn.ModelParams
    model_config: nn.ModelConfig
    optimizer_state: nn.OptimizerState

    def check_accuracy_invariant(self) -> bool:
        return abs(self.accuracy - self.confusion.accuracy()) <= 1e-9


def _held_out_predictions(
    params: nn.ModelParams,
    model_config: nn.ModelConfig,
    generator: BatchGenerator,
    per_class: int,
    rng: np.random.Generator,
    dtype,
):
    """Fresh draws per class, predicted in chunks; returns predictions, labels, timings."""
    n_species = len(generator.library)
    all_labels = np.repeat(np.arange(n_species), per_class)
    predictions = np.empty(len(all_labels), dtype=np.int64)
    sampling_s = 0.0
    predict_s = 0.0
    chunk = 256
    for start in range(0, len(all_labels), chunk):
        labels = all_labels[start : start + chunk]
        t0 = time.perf_counter()
        rows = generator.sample_rows(labels, rng)
        sampling_s += time.perf_counter() - t0
        x = nn.normalize_counts(rows, generator.budget.k)
        t0 = time.perf_counter()
        probs = nn.forward_batch(params, model_config, x, dtype=dtype).probs
        predict_s += time.perf_counter() - t0
        predictions[start : start + chunk] = probs.argmax(axis=1)
    return predictions, all_labels, sampling_s, predict_s


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Train per config, evaluate on held-out fresh draws, compile the report."""
    root = np.random.SeedSequence(config.seed)
    train_seq, test_seq = root.spawn(2)
    model_config = config.model_config()

    result = nn.train(
        model_config,
        config.library,
        config.budget,
        epochs=config.epochs,
        batch_size=config.batch_size,
        discard=config.discard,
        rng=np.random.default_rng(train_seq),
        settings=config.train_settings(),
    )

    generator = BatchGenerator(config.library, config.budget, config.discard)
    dtype = config.train_settings().compute_dtype()
    predictions, labels, sampling_s, predict_s = _held_out_predictions(
        result.params, model_config, generator, config.test_per_class,
        np.random.default_rng(test_seq), dtype,
    )
    matrix = confusion_matrix(predictions, labels, config.n_classes)
    n_test = len(labels)
    timings = {
        "test_sampling_s": sampling_s,
        "sampling_s_per_draw": sampling_s / n_test,
        "predict_s_per_sample": predict_s / n_test,
        "epoch_s": list(result.epoch_seconds),
        "epoch_s_median": float(np.median(result.epoch_seconds)) if result.epoch_seconds else 0.0,
    }
    return ExperimentReport(
        accuracy=matrix.accuracy(),
        confusion=matrix,
        labels=config.library.labels,
        loss_curve=result.loss_curve,
        val_accuracy=result.val_accuracy,
        live_time_seconds=live_time(config.budget.k, config.rate),
        budget_k=config.budget.k,
        epochs_run=result.epochs_run,
        reached_target=result.reached_target,
        degenerate=len(config.library) < 2,
        timings=timings,
        params=result.params,
        model_config=model_config,
        optimizer_state=result.optimizer_state,
    )


@dataclass
class SweepEntry:
    budget_k: int
    loss_curve: np.ndarray
    accuracy: float
    epochs_to_target: int | None
    report: ExperimentReport


def count_rate_sweep(config: ExperimentConfig, budgets) -> list[SweepEntry]:
    """One full run per count budget, identical seed and setup otherwise."""
    budgets = list(budgets)
    if len(budgets) < 2:
        raise ValidationError(f"a sweep needs at least 2 budgets, got {len(budgets)}")
    entries = []
    for k in budgets:
        sub = replace(config, budget=SampleBudget(int(k)))
        report = run_experiment(sub)
        reached = [i + 1 for i, acc in enumerate(report.val_accuracy) if acc >= config.target_accuracy]
        entries.append(
            SweepEntry(
                budget_k=int(k),
                loss_curve=report.loss_curve,
                accuracy=report.accuracy,
                epochs_to_target=reached[0] if reached else None,
                report=report,
            )
        )
    return entries


# ---------------------------------------------------------------------------
# Sampler benchmarks
# ---------------------------------------------------------------------------

@dataclass
class SamplerTiming:
    name: str
    median_s: float
    p95_s: float
    repetitions: int


@dataclass
class BenchmarkResult:
    timings: list[SamplerTiming]
    budget_k: int
    repetitions: int
    machine: dict

    def by_name(self, name: str) -> SamplerTiming:
        for t in self.timings:
            if t.name == name:
                return t
        raise KeyError(name)


def _time_draws(fn, spectra_cycle, repetitions: int) -> tuple[float, float]:
    samples = np.empty(repetitions)
    for i in range(repetitions):
        spectrum = spectra_cycle[i % len(spectra_cycle)]
        t0 = time.perf_counter()
        fn(spectrum)
        samples[i] = time.perf_counter() - t0
    return float(np.median(samples)), float(np.quantile(samples, 0.95))


def benchmark_samplers(
    library: SpeciesLibrary,
    budget: SampleBudget,
    repetitions: int,
    seed: int = 0,
) -> BenchmarkResult:
    """Median and p95 wall-clock per draw for every sampling route.

    Timings are taken single-threaded in draw order; RSM-2 is parameterized
    with p = k / total_counts so expected totals match the other methods.
    """
    if repetitions < 10:
        raise ValidationError(f"repetitions must be >= 10, got {repetitions}")
    rng = np.random.default_rng(seed)
    spectra_cycle = list(library)
    cal = library.calibration

    def rsm2_fraction(spectrum):
        if spectrum.total_counts == 0:
            return 0.0
        return min(1.0, budget.k / spectrum.total_counts)

    cases = [
        ("rsm1_event_list", lambda s: rsm1_event_list(s, budget, rng)),
        ("rsm2_binomial_thinning", lambda s: rsm2_binomial_thinning(s, rsm2_fraction(s), rng)),
        ("rsm3_fast", lambda s: rsm3_weighted_counts(s, budget, rng, method="fast")),
        ("rsm3_conditional", lambda s: rsm3_weighted_counts(s, budget, rng, method="conditional")),
        ("rsm4_scatter", lambda s: rsm4_render(rsm1_event_list(s, budget, rng), cal, 256, 256, "scatter")),
        ("rsm4_histogram", lambda s: rsm4_render(rsm1_event_list(s, budget, rng), cal, 256, 256, "histogram")),
    ]
    timings = []
    for name, fn in cases:
        fn(spectra_cycle[0])  # warm path once, outside the timed window
        median_s, p95_s = _time_draws(fn, spectra_cycle, repetitions)
        timings.append(SamplerTiming(name, median_s, p95_s, repetitions))
    machine = {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    return BenchmarkResult(timings=timings, budget_k=budget.k, repetitions=repetitions, machine=machine)


# ---------------------------------------------------------------------------
# Report emission (deterministic files; wall-clock lives in timings only)
# ---------------------------------------------------------------------------

def report_to_dict(report: ExperimentReport) -> dict:
    """Deterministic report fields (no wall-clock timings)."""
    return {
        "accuracy": report.accuracy,
        "labels": report.labels,
        "confusion": [[float(v) for v in row] for row in report.confusion.values],
        "class_counts": [int(c) for c in report.confusion.row_counts],
        "loss_curve": [float(v) for v in report.loss_curve],
        "val_accuracy": [float(v) for v in report.val_accuracy],
        "live_time_seconds": report.live_time_seconds,
        "budget_k": report.budget_k,
        "epochs_run": report.epochs_run,
        "reached_target": report.reached_target,
        "degenerate": report.degenerate,
    }


def write_report_json(path, report: ExperimentReport) -> None:
    with open(path, "w", newline="") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_timings_json(path, report: ExperimentReport) -> None:
    with open(path, "w", newline="") as fh:
        json.dump(report.timings, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_loss_csv(path, report: ExperimentReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss", "val_accuracy"])
        for i, (loss, acc) in enumerate(zip(report.loss_curve, report.val_accuracy), start=1):
            writer.writerow([i, repr(float(loss)), repr(float(acc))])


def write_confusion_csv(path, matrix: ConfusionMatrix, labels: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["actual\\predicted"] + list(labels))
        for label, row in zip(labels, matrix.values):
            writer.writerow([label] + [repr(float(v)) for v in row])


def format_report_text(report: ExperimentReport) -> str:
    """Human-readable run summary."""
    lines = [
        "experiment report",
        "=================",
        f"species ({len(report.labels)}): {', '.join(report.labels)}",
        f"sample count budget k: {report.budget_k}",
        f"live time per sample:  {report.live_time_seconds:.3f} s",
        f"epochs run:            {report.epochs_run} (target reached: {report.reached_target})",
        f"held-out accuracy:     {report.accuracy:.4f}",
    ]
    if report.degenerate:
        lines.append("NOTE: degenerate setup (fewer than 2 species); accuracy is trivial")
    lines.append("")
    lines.append("confusion matrix (rows = actual, row-normalized):")
    header = " " * 24 + " ".join(f"{label[:10]:>10}" for label in report.labels)
    lines.append(header)
    for label, row in zip(report.labels, report.confusion.values):
        lines.append(f"{label[:22]:<22}  " + " ".join(f"{v:>10.3f}" for v in row))
    if report.timings:
        lines.append("")
        lines.append("timings:")
        med = report.timings.get("epoch_s_median", 0.0)
        lines.append(f"  per-epoch median:    {med:.3f} s")
        lines.append(f"  sampling per draw:   {report.timings.get('sampling_s_per_draw', 0.0) * 1e3:.3f} ms")
        lines.append(f"  predict per sample:  {report.timings.get('predict_s_per_sample', 0.0) * 1e3:.3f} ms")
    return "\n".join(lines) + "\n"


def benchmark_to_csv(path, result: BenchmarkResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sampler", "median_s", "p95_s", "repetitions", "budget_k"])
        for t in result.timings:
            writer.writerow([t.name, repr(t.median_s), repr(t.p95_s), t.repetitions, result.budget_k])

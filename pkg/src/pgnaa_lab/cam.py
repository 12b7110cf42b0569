"""Class activation maps from the GAP head, and channel pruning derived from them.

Because the classifier ends in global average pooling followed by one linear
layer, the class-c evidence at feature position j is the class-weighted sum
of the final feature maps: M_c(j) = sum_f W[c,f] f_f(j). Averaging M_c over
positions recovers logit_c - bias_c exactly, which pins the construction.
Maps are linearly interpolated back to input resolution, aggregated into a
per-channel importance profile, and low-importance runs become discard
ranges that shrink the model input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .nn import ForwardTrace, ModelConfig, ModelParams, forward_batch
from .spectra import ChannelCalibration


@dataclass(frozen=True)
class ActivationMap:
    values: np.ndarray        # per input channel
    class_id: int
    source_resolution: int    # positions of the last feature maps

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("activation map contains non-finite values")


@dataclass(frozen=True)
class ChannelImportance:
    """Max-normalized per-channel influence scores in [0, 1]."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if np.any(scores < 0) or np.any(scores > 1):
            raise ValidationError("importance scores must lie in [0, 1]")
        if scores.max(initial=0.0) not in (0.0, 1.0):
            raise ValidationError("importance scores must be max-normalized (or all zero)")
        scores.flags.writeable = False
        object.__setattr__(self, "scores", scores)


@dataclass(frozen=True)
class DiscardRanges:
    """Disjoint, sorted, inclusive channel intervals to drop from model input."""

    ranges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        ranges = tuple((int(lo), int(hi)) for lo, hi in self.ranges)
        for lo, hi in ranges:
            if lo < 0 or hi < lo:
                raise ValidationError(f"invalid range [{lo}, {hi}]")
        for (_, prev_hi), (lo, _) in zip(ranges, ranges[1:]):
            if lo <= prev_hi:
                raise ValidationError(f"ranges must be sorted and disjoint: {ranges}")
        object.__setattr__(self, "ranges", ranges)

    @property
    def discarded_width(self) -> int:
        return sum(hi - lo + 1 for lo, hi in self.ranges)

    def keep_mask(self, width: int) -> np.ndarray:
        """Boolean keep mask of a given input width; ranges must fit inside it."""
        mask = np.ones(width, dtype=bool)
        for lo, hi in self.ranges:
            if hi >= width:
                raise ValidationError(f"range [{lo}, {hi}] exceeds width {width}")
            mask[lo : hi + 1] = False
        return mask

    def union(self, other: "DiscardRanges") -> "DiscardRanges":
        return DiscardRanges(tuple(sorted(self.ranges + other.ranges)))


def interpolate_to_width(values: np.ndarray, width: int) -> np.ndarray:
    """Piecewise-linear resample preserving both endpoints."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == width:
        return values.copy()
    if len(values) == 1:
        return np.full(width, values[0])
    return np.interp(
        np.linspace(0.0, len(values) - 1.0, width), np.arange(len(values)), values
    )


def compute_cam(
    params: ModelParams, config: ModelConfig, trace: ForwardTrace, class_id: int
) -> ActivationMap:
    """Class activation map of one class for a single-sample forward trace."""
    if not 0 <= class_id < config.n_classes:
        raise IndexError(f"class {class_id} out of range for {config.n_classes} classes")
    feature_maps = trace.last_feature_maps
    if feature_maps.shape[0] != 1:
        raise ValidationError("compute_cam expects a single-sample trace")
    raw = params.linear_w[class_id] @ feature_maps[0]  # (positions,)
    return ActivationMap(
        values=interpolate_to_width(raw, config.input_width),
        class_id=class_id,
        source_resolution=raw.shape[0],
    )


def raw_cam_batch(params: ModelParams, trace: ForwardTrace, class_ids: np.ndarray) -> np.ndarray:
    """Feature-resolution maps for one class per trace row: (N, positions)."""
    w = params.linear_w[class_ids]  # (N, F)
    return np.einsum("nf,nfp->np", w, trace.last_feature_maps)


def aggregate_importance(params: ModelParams, config: ModelConfig, dataset) -> ChannelImportance:
    """Mean absolute true-class CAM over a dataset, max-normalized to [0, 1].

    ``dataset`` is (inputs, labels): model-input rows (already normalized
    and width-matched) with their true class indices.
    """
    inputs, labels = dataset
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValidationError("dataset must contain at least one sample row")
    if labels.shape != (inputs.shape[0],):
        raise ValidationError("dataset inputs and labels must have matching length")
    total = np.zeros(config.feature_positions)
    chunk = 256
    for start in range(0, inputs.shape[0], chunk):
        rows = inputs[start : start + chunk]
        trace = forward_batch(params, config, rows)
        maps = raw_cam_batch(params, trace, labels[start : start + chunk])
        total += np.abs(maps).sum(axis=0)
    mean_map = interpolate_to_width(total / inputs.shape[0], config.input_width)
    peak = mean_map.max()
    scores = mean_map / peak if peak > 0 else mean_map
    return ChannelImportance(scores=scores)


def select_discard_ranges(
    importance: ChannelImportance, threshold: float, min_run: int
) -> DiscardRanges:
    """Maximal runs of at least ``min_run`` consecutive channels scoring below threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must be in [0, 1], got {threshold}")
    if min_run < 1:
        raise ValidationError(f"min_run must be >= 1, got {min_run}")
    below = importance.scores < threshold
    ranges = []
    start = None
    for i, flag in enumerate(below):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start >= min_run:
                ranges.append((start, i - 1))
            start = None
    if start is not None and len(below) - start >= min_run:
        ranges.append((start, len(below) - 1))
    return DiscardRanges(tuple(ranges))


def select_discard_fraction(
    importance: ChannelImportance, target_fraction: float, min_run: int
) -> DiscardRanges:
    """Smallest-threshold ranges discarding at least a target fraction of channels.

    Formalizes the manual read-a-threshold-off-the-plot step: scans score
    quantiles from low to high and returns the first range set that removes
    the requested share of the input width.
    """
    if not 0.0 < target_fraction < 1.0:
        raise ValidationError(f"target_fraction must be in (0, 1), got {target_fraction}")
    width = len(importance.scores)
    candidates = np.unique(np.quantile(importance.scores, np.linspace(0.0, 1.0, 201)))
    for threshold in candidates:
        ranges = select_discard_ranges(importance, float(min(threshold, 1.0)), min_run)
        if ranges.discarded_width >= target_fraction * width:
            return ranges
    raise ValidationError(
        f"no threshold discards {target_fraction:.0%} of channels with min_run={min_run}"
    )


def apply_mask(vector: np.ndarray, ranges: DiscardRanges) -> np.ndarray:
    """Drop discarded channels (last axis), keeping surviving segments in order."""
    vector = np.asarray(vector)
    keep = ranges.keep_mask(vector.shape[-1])
    return vector[..., keep]


def write_importance_csv(path, importance: ChannelImportance, cal: ChannelCalibration) -> None:
    """Export ``channel,energy_keV,score`` rows (LF endings)."""
    energies = cal.channel_energies()
    if len(importance.scores) != cal.n_channels:
        raise ValidationError("importance width does not match calibration")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["channel", "energy_keV", "score"])
        for ch, (energy, score) in enumerate(zip(energies, importance.scores)):
            writer.writerow([ch, f"{energy:.6f}", repr(float(score))])


def write_ranges_csv(path, ranges: DiscardRanges) -> None:
    """Export ``lo,hi`` rows, one per discard range (LF endings)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lo", "hi"])
        for lo, hi in ranges.ranges:
            writer.writerow([lo, hi])


def read_ranges_csv(path) -> DiscardRanges:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["lo", "hi"]:
            raise ValidationError(f"{path}: expected 'lo,hi' header")
        ranges = tuple((int(row[0]), int(row[1])) for row in reader if row)
    return DiscardRanges(ranges)

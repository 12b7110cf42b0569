"""Random sampling methods: downsize a full spectrum to a short measurement.

Treating a long-measurement spectrum as a probability distribution over
channels, each method draws a small sample with a count budget k:

  RSM-1  event list of k energies drawn i.i.d.
  RSM-2  per-channel binomial thinning (random total)
  RSM-3  multinomial count vector (sum exactly k)
  RSM-4  scatter or histogram raster rendered from a sample

RSM-3 ships two interchangeable routes: a conditional-binomial chain
(baseline) and a vectorized inverse-CDF event sampler (fast path). Both
must pass the same exact-distribution goodness-of-fit checks below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EmptyDistributionError, ValidationError
from .spectra import ChannelCalibration, SpeciesLibrary, Spectrum


@dataclass(frozen=True)
class SampleBudget:
    """Count budget of one downsized measurement (number of recorded events)."""

    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ValidationError(f"budget must be >= 0, got {self.k}")


@dataclass(frozen=True)
class DownsizedSample:
    """Per-channel counts of a short measurement; sums exactly to its budget."""

    counts: np.ndarray
    budget: SampleBudget
    label: str

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(counts < 0):
            raise ValidationError("sample counts must be non-negative")
        if int(counts.sum()) != self.budget.k:
            raise ValidationError(
                f"sample counts sum to {int(counts.sum())}, budget is {self.budget.k}"
            )
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)


@dataclass(frozen=True)
class EventList:
    """Ordered energies of individually recorded events."""

    energies: np.ndarray
    channels: np.ndarray
    label: str

    def __post_init__(self):
        object.__setattr__(self, "energies", np.asarray(self.energies, dtype=np.float64))
        object.__setattr__(self, "channels", np.asarray(self.channels, dtype=np.int64))
        if self.energies.shape != self.channels.shape:
            raise ValidationError("energies and channels must have equal length")

    def __len__(self) -> int:
        return len(self.energies)


@dataclass(frozen=True)
class Raster:
    """Binary H x W rendering of a sample, scatter or histogram style."""

    pixels: np.ndarray
    mode: str


def _event_distribution(spectrum: Spectrum, k: int) -> np.ndarray:
    if k > 0 and spectrum.total_counts == 0:
        raise EmptyDistributionError(
            f"cannot draw {k} events from all-zero spectrum {spectrum.label!r}"
        )
    return spectrum.probabilities()


def draw_event_channels(rng: np.random.Generator, cdf: np.ndarray, k: int) -> np.ndarray:
    """Draw k i.i.d. channel indices from a cumulative distribution.

    side='right' search keeps zero-probability channels unreachable even
    when a uniform lands exactly on a CDF step.
    """
    if k == 0:
        return np.empty(0, dtype=np.int64)
    u = rng.random(k)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1).astype(np.int64)


def _multinomial_fast(rng: np.random.Generator, k: int, probs: np.ndarray) -> np.ndarray:
    channels = draw_event_channels(rng, np.cumsum(probs), k)
    return np.bincount(channels, minlength=len(probs)).astype(np.int64)


def _multinomial_conditional(rng: np.random.Generator, k: int, probs: np.ndarray) -> np.ndarray:
    """Sequential binomial conditioning: channel i gets Binomial(remaining, p_i/tail)."""
    counts = np.zeros(len(probs), dtype=np.int64)
    nonzero = np.flatnonzero(probs)
    remaining = k
    tail = 1.0
    for pos, i in enumerate(nonzero):
        if remaining == 0:
            break
        if pos == len(nonzero) - 1:
            counts[i] = remaining
            remaining = 0
            break
        p_cond = min(1.0, max(0.0, probs[i] / tail))
        n_i = int(rng.binomial(remaining, p_cond))
        counts[i] = n_i
        remaining -= n_i
        tail = max(tail - probs[i], 0.0)
    return counts


_MULTINOMIAL_METHODS = {"fast": _multinomial_fast, "conditional": _multinomial_conditional}


def rsm1_event_list(
    spectrum: Spectrum, budget: SampleBudget, rng: np.random.Generator
) -> EventList:
    """RSM-1: the downsized sample as a raw list of k event energies."""
    probs = _event_distribution(spectrum, budget.k)
    channels = draw_event_channels(rng, np.cumsum(probs), budget.k)
    cal = spectrum.calibration
    energies = cal.offset + cal.gain * channels.astype(np.float64)
    return EventList(energies=energies, channels=channels, label=spectrum.label)


def rsm2_binomial_thinning(
    spectrum: Spectrum, retain_fraction: float, rng: np.random.Generator
) -> DownsizedSample:
    """RSM-2: thin every channel independently, keeping each event with probability p.

    The output total is random with expectation p * total_counts; the
    recorded budget is the realized total.
    """
    if not (0.0 <= retain_fraction <= 1.0):
        raise ValidationError(f"retain fraction must be in [0, 1], got {retain_fraction}")
    counts = rng.binomial(spectrum.counts, retain_fraction).astype(np.int64)
    return DownsizedSample(counts, SampleBudget(int(counts.sum())), spectrum.label)


def rsm3_weighted_counts(
    spectrum: Spectrum,
    budget: SampleBudget,
    rng: np.random.Generator,
    method: str = "fast",
) -> DownsizedSample:
    """RSM-3: random weighted selection in counts (one multinomial draw).

    Draws exactly k events over channel probabilities counts_i / total and
    returns the per-channel occurrence counts. ``method`` picks the fast
    inverse-CDF route or the conditional-binomial baseline; both sample the
    same distribution.
    """
    if method not in _MULTINOMIAL_METHODS:
        raise ValidationError(f"unknown method {method!r}, expected one of {sorted(_MULTINOMIAL_METHODS)}")
    probs = _event_distribution(spectrum, budget.k)
    counts = _MULTINOMIAL_METHODS[method](rng, budget.k, probs)
    return DownsizedSample(counts, budget, spectrum.label)


def rsm4_render(
    source: EventList | DownsizedSample,
    cal: ChannelCalibration,
    height: int,
    width: int,
    mode: str = "histogram",
) -> Raster:
    """RSM-4: render a sample as a scatter (4a) or histogram (4b) raster.

    Scatter puts pixel (event-index scaled to height, energy scaled to
    width); histogram fills columns bottom-up to floor(h * height / max).
    An empty sample renders as an all-zero raster.
    """
    if height < 1 or width < 1:
        raise ValidationError(f"raster dimensions must be >= 1, got {height}x{width}")
    if mode not in ("scatter", "histogram"):
        raise ValidationError(f"mode must be 'scatter' or 'histogram', got {mode!r}")
    if isinstance(source, EventList):
        channels = source.channels
    else:
        channels = np.repeat(np.arange(len(source.counts), dtype=np.int64), source.counts)
    cols = channels * width // cal.n_channels
    pixels = np.zeros((height, width), dtype=np.uint8)
    if mode == "scatter":
        k = len(channels)
        if k > 0:
            rows = np.arange(k, dtype=np.int64) * height // k
            pixels[rows, cols] = 1
    else:
        col_counts = np.bincount(cols, minlength=width)
        peak = col_counts.max()
        if peak > 0:
            heights = col_counts * height // peak
            for w in np.flatnonzero(heights):
                pixels[height - heights[w]:, w] = 1
    return Raster(pixels=pixels, mode=mode)


class BatchGenerator:
    """Reusable RSM-3 batch source over a species library.

    Precomputes each species' event CDF once; every call draws fresh
    samples, so no two training iterations see the same batch. Draw order
    is fixed (labels first, then one sample per row), making batches a pure
    function of the generator state passed in.
    """

    def __init__(self, library: SpeciesLibrary, budget: SampleBudget, discard=None):
        self.library = library
        self.budget = budget
        self.discard = discard
        n = library.n_channels
        self._cdfs = []
        for s in library:
            if budget.k > 0 and s.total_counts == 0:
                raise EmptyDistributionError(
                    f"cannot draw {budget.k} events from all-zero spectrum {s.label!r}"
                )
            self._cdfs.append(np.cumsum(s.probabilities()))
        if discard is not None:
            self._keep = discard.keep_mask(n)
        else:
            self._keep = None
        self.width = n if self._keep is None else int(self._keep.sum())

    def sample_rows(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One fresh RSM-3 sample per requested label, in order.

        Rows are drawn grouped by species (ascending label, then request
        order) so each group shares vectorized uniform draws; the grouping
        is part of the generator's deterministic draw order.
        """
        labels = np.asarray(labels)
        n = self.library.n_channels
        k = self.budget.k
        rows = np.zeros((len(labels), n), dtype=np.int64)
        max_events = 4_000_000  # chunk uniform draws to bound memory
        rows_per_chunk = max(1, max_events // max(k, 1))
        for species in np.unique(labels):
            targets = np.flatnonzero(labels == species)
            cdf = self._cdfs[species]
            for start in range(0, len(targets), rows_per_chunk):
                chunk = targets[start : start + rows_per_chunk]
                channels = draw_event_channels(rng, cdf, len(chunk) * k)
                for r, row_channels in zip(chunk, channels.reshape(len(chunk), k)):
                    rows[r] = np.bincount(row_channels, minlength=n)
        if self._keep is not None:
            rows = rows[:, self._keep]
        return rows

    def __call__(self, batch_size: int, rng: np.random.Generator):
        if batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
        labels = rng.integers(0, len(self.library), size=batch_size).astype(np.int64)
        return self.sample_rows(labels, rng), labels


def batch_generate(
    library: SpeciesLibrary,
    budget: SampleBudget,
    batch_size: int,
    rng: np.random.Generator,
    discard=None,
):
    """Draw one training batch: uniform species labels, one RSM-3 sample per row.

    With ``discard`` set (a cam.DiscardRanges), masked channels are dropped
    and rows shrink to n_channels minus the discarded width.
    """
    return BatchGenerator(library, budget, discard)(batch_size, rng)


# ---------------------------------------------------------------------------
# Goodness-of-fit suite shared by both RSM-3 routes
# ---------------------------------------------------------------------------

def enumerate_compositions(k: int, cells: int):
    """All tuples of ``cells`` non-negative integers summing to k."""
    if cells == 1:
        yield (k,)
        return
    for head in range(k + 1):
        for rest in enumerate_compositions(k - head, cells - 1):
            yield (head,) + rest


def exact_multinomial_pmf(k: int, probs: np.ndarray):
    """Enumerate all outcomes of a multinomial(k, probs) with their exact pmf."""
    probs = np.asarray(probs, dtype=np.float64)
    outcomes = np.array(list(enumerate_compositions(k, len(probs))), dtype=np.int64)
    pmf = stats.multinomial(n=k, p=probs).pmf(outcomes)
    return outcomes, np.atleast_1d(pmf)


def _outcome_indices(samples: np.ndarray, outcomes: np.ndarray, k: int) -> np.ndarray:
    """Map sample rows to enumerated-outcome indices via a radix key."""
    radix = (k + 1) ** np.arange(outcomes.shape[1], dtype=np.int64)
    keys = {int(key): i for i, key in enumerate(outcomes @ radix)}
    sample_keys = samples @ radix
    try:
        return np.array([keys[int(key)] for key in sample_keys], dtype=np.int64)
    except KeyError:
        raise ValidationError("sample outside the enumerated outcome space") from None


def multinomial_gof(samples: np.ndarray, k: int, probs: np.ndarray):
    """Chi-square statistic of sampled count vectors against the exact pmf.

    ``samples`` has one draw per row over the nonzero-probability cells.
    Returns (statistic, degrees of freedom); compare against
    chi_square_critical(df, significance).
    """
    samples = np.asarray(samples, dtype=np.int64)
    outcomes, pmf = exact_multinomial_pmf(k, probs)
    observed = np.bincount(_outcome_indices(samples, outcomes, k), minlength=len(outcomes))
    expected = pmf * len(samples)
    statistic = float(np.sum((observed - expected) ** 2 / expected))
    return statistic, len(outcomes) - 1


def two_sample_chi_square(table_a: np.ndarray, table_b: np.ndarray):
    """Two-sample chi-square over a shared outcome table (cells empty in both are dropped)."""
    a = np.asarray(table_a, dtype=np.float64)
    b = np.asarray(table_b, dtype=np.float64)
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    total = a.sum() + b.sum()
    expected_a = (a + b) * (a.sum() / total)
    expected_b = (a + b) * (b.sum() / total)
    statistic = float(np.sum((a - expected_a) ** 2 / expected_a)
                      + np.sum((b - expected_b) ** 2 / expected_b))
    return statistic, int(keep.sum()) - 1


def chi_square_critical(df: int, significance: float) -> float:
    return float(stats.chi2.ppf(1.0 - significance, df))


def draw_multinomial_counts(
    rng: np.random.Generator,
    k: int,
    probs: np.ndarray,
    n_draws: int,
    method: str = "fast",
) -> np.ndarray:
    """Many independent multinomial draws, one per row (test and GOF helper)."""
    probs = np.asarray(probs, dtype=np.float64)
    m = len(probs)
    if method == "fast":
        cdf = np.cumsum(probs)
        channels = draw_event_channels(rng, cdf, n_draws * k).reshape(n_draws, k)
        flat = channels + (np.arange(n_draws, dtype=np.int64)[:, None] * m)
        return np.bincount(flat.ravel(), minlength=n_draws * m).reshape(n_draws, m)
    if method == "conditional":
        return np.stack([_multinomial_conditional(rng, k, probs) for _ in range(n_draws)])
    raise ValidationError(f"unknown method {method!r}")

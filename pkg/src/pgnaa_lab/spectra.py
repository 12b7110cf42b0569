"""Calibrated gamma-ray spectra: CSV ingestion, synthetic generation, live time.

A Spectrum is the full "long measurement" of one labeled species: a vector of
per-channel event counts under an affine channel -> energy calibration. The
synthetic generator (Gaussian peaks on an exponential background, realized
with Poisson counting noise) stands in for measured datasets so the whole
pipeline runs self-contained.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CsvFormatError, ValidationError

# Default calibration: the affine map through the two anchor points
# (channel 8000, 5641.92 keV) and (channel 16384, 11552.48 keV), where 16384
# is the inclusive end label of the last bin of a 16384-channel detector.
DEFAULT_N_CHANNELS = 16384
_ANCHOR_LO = (8000, 5641.92)
_ANCHOR_HI = (16384, 11552.48)
DEFAULT_GAIN = (_ANCHOR_HI[1] - _ANCHOR_LO[1]) / (_ANCHOR_HI[0] - _ANCHOR_LO[0])
DEFAULT_OFFSET = _ANCHOR_LO[1] - DEFAULT_GAIN * _ANCHOR_LO[0]

CSV_HEADER = ("Energy (keV)", "Counts")


@dataclass(frozen=True)
class ChannelCalibration:
    """Affine channel -> energy mapping with a fixed channel count."""

    n_channels: int = DEFAULT_N_CHANNELS
    gain: float = DEFAULT_GAIN      # keV per channel
    offset: float = DEFAULT_OFFSET  # keV at channel 0

    def __post_init__(self):
        if self.n_channels < 2:
            raise ValidationError(f"n_channels must be >= 2, got {self.n_channels}")
        if not (self.gain > 0 and math.isfinite(self.gain)):
            raise ValidationError(f"gain must be positive and finite, got {self.gain}")
        if not math.isfinite(self.offset):
            raise ValidationError(f"offset must be finite, got {self.offset}")

    @property
    def energy_lo(self) -> float:
        """Energy of the first channel center."""
        return self.offset

    @property
    def energy_hi(self) -> float:
        """Energy of the last channel center."""
        return self.offset + self.gain * (self.n_channels - 1)

    @property
    def span(self) -> float:
        return self.energy_hi - self.energy_lo

    def channel_energies(self) -> np.ndarray:
        """Energies of all channel centers, strictly increasing."""
        return self.offset + self.gain * np.arange(self.n_channels, dtype=np.float64)

    def channel_of_energy(self, energy_kev: float) -> int:
        """Nearest channel for an energy; exact midpoints round down.

        Raises ValidationError when the energy falls outside the calibrated
        range (beyond half a channel width past either edge).
        """
        x = (energy_kev - self.offset) / self.gain
        ch = math.ceil(x - 0.5)
        if ch < 0 or ch >= self.n_channels:
            raise ValidationError(
                f"energy {energy_kev} keV is outside the calibrated range "
                f"[{self.energy_lo}, {self.energy_hi}] keV"
            )
        return ch


def energy_of_channel(cal: ChannelCalibration, ch: int) -> float:
    """Energy (keV) at a channel index.

    Indices 0..n_channels are accepted; n_channels itself is the inclusive
    end label of the last bin.
    """
    if ch < 0 or ch > cal.n_channels:
        raise IndexError(f"channel {ch} out of range 0..{cal.n_channels}")
    return cal.offset + cal.gain * ch


@dataclass(frozen=True)
class Spectrum:
    """Per-channel count vector for one labeled species."""

    calibration: ChannelCalibration
    counts: np.ndarray
    label: str
    total_counts: int = field(init=False)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.shape[0] != self.calibration.n_channels:
            raise ValidationError(
                f"counts must be a vector of length {self.calibration.n_channels}, "
                f"got shape {counts.shape}"
            )
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.floor(counts)):
                raise ValidationError("counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise ValidationError("counts must be non-negative")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total_counts", int(counts.sum()))

    def probabilities(self) -> np.ndarray:
        """Counts normalized to a probability vector (zeros if empty)."""
        if self.total_counts == 0:
            return np.zeros(self.calibration.n_channels)
        return self.counts / self.total_counts


def load_spectrum_csv(path: str | Path, cal: ChannelCalibration, label: str | None = None) -> Spectrum:
    """Load an ``Energy (keV),Counts`` CSV into a calibrated Spectrum.

    Each row's energy is mapped to the nearest calibrated channel (exact
    midpoints round down); rows landing on the same channel accumulate.
    Energies must be strictly increasing. Malformed rows raise
    CsvFormatError with the offending line number; energies outside the
    calibrated range and negative counts raise ValidationError.
    """
    path = Path(path)
    counts = np.zeros(cal.n_channels, dtype=np.int64)
    n_rows = 0
    prev_energy = -math.inf
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                header = tuple(cell.strip() for cell in row)
                if header != CSV_HEADER:
                    raise CsvFormatError(
                        f"expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}",
                        line=lineno,
                    )
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise CsvFormatError(f"expected 2 columns, got {len(row)}", line=lineno)
            try:
                energy = float(row[0])
                count = int(row[1])
            except ValueError as exc:
                raise CsvFormatError(f"unparseable row {row!r}: {exc}", line=lineno) from None
            if not math.isfinite(energy):
                raise CsvFormatError(f"non-finite energy {row[0]!r}", line=lineno)
            if energy <= prev_energy:
                raise ValidationError(
                    f"line {lineno}: energies must be strictly increasing "
                    f"({energy} after {prev_energy})"
                )
            prev_energy = energy
            if count < 0:
                raise ValidationError(f"line {lineno}: negative count {count}")
            try:
                ch = cal.channel_of_energy(energy)
            except ValidationError:
                raise ValidationError(
                    f"line {lineno}: energy {energy} keV outside calibrated range "
                    f"[{cal.energy_lo}, {cal.energy_hi}] keV"
                ) from None
            counts[ch] += count
            n_rows += 1
    if n_rows == 0:
        raise ValidationError(f"{path}: no data rows")
    return Spectrum(cal, counts, label=label if label is not None else path.stem)


def write_spectrum_csv(spectrum: Spectrum, path: str | Path) -> None:
    """Write one row per channel in the ``Energy (keV),Counts`` format (LF endings)."""
    cal = spectrum.calibration
    energies = cal.channel_energies()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for energy, count in zip(energies, spectrum.counts):
            writer.writerow([f"{energy:.6f}", int(count)])


@dataclass(frozen=True)
class GaussianPeak:
    center_kev: float
    amplitude: float  # relative height before overall normalization
    sigma_kev: float

    def __post_init__(self):
        if not (self.amplitude > 0):
            raise ValidationError(f"peak amplitude must be > 0, got {self.amplitude}")
        if not (self.sigma_kev > 0):
            raise ValidationError(f"peak sigma must be > 0, got {self.sigma_kev}")


@dataclass(frozen=True)
class ExponentialBackground:
    level: float            # relative height at the low-energy edge
    decay_per_kev: float

    def __post_init__(self):
        if self.level < 0:
            raise ValidationError(f"background level must be >= 0, got {self.level}")
        if self.decay_per_kev < 0:
            raise ValidationError(f"background decay must be >= 0, got {self.decay_per_kev}")


NO_BACKGROUND = ExponentialBackground(level=0.0, decay_per_kev=0.0)


@dataclass(frozen=True)
class SyntheticSpeciesSpec:
    """Generative model of one species: Gaussian peaks + exponential background.

    Requires at least one peak unless a positive background level is given
    (a background-only spec is a valid degenerate species).
    """

    name: str
    peaks: tuple[GaussianPeak, ...]
    background: ExponentialBackground = NO_BACKGROUND

    def __post_init__(self):
        peaks = tuple(
            p if isinstance(p, GaussianPeak) else GaussianPeak(*p) for p in self.peaks
        )
        object.__setattr__(self, "peaks", peaks)
        if not peaks and not self.background.level > 0:
            raise ValidationError(
                f"species {self.name!r} needs at least one peak or a positive background"
            )


def synthesize_expected(
    spec: SyntheticSpeciesSpec, cal: ChannelCalibration, intensity: float
) -> np.ndarray:
    """Expected per-channel counts for a species at a total intensity.

    Evaluates the peak + background mixture at channel-center energies and
    rescales so the vector sums to ``intensity`` (within 1e-9 relative).
    Peaks centered outside the calibrated energy range are rejected.
    """
    if not (intensity > 0):
        raise ValidationError(f"intensity must be > 0, got {intensity}")
    energies = cal.channel_energies()
    shape = np.zeros(cal.n_channels, dtype=np.float64)
    for peak in spec.peaks:
        if not (cal.energy_lo <= peak.center_kev <= cal.energy_hi):
            raise ValidationError(
                f"peak at {peak.center_kev} keV lies outside the calibrated range "
                f"[{cal.energy_lo}, {cal.energy_hi}] keV"
            )
        z = (energies - peak.center_kev) / peak.sigma_kev
        shape += peak.amplitude * np.exp(-0.5 * z * z)
    bg = spec.background
    if bg.level > 0:
        shape += bg.level * np.exp(-bg.decay_per_kev * (energies - cal.energy_lo))
    total = shape.sum()
    if total <= 0:
        raise ValidationError(f"species {spec.name!r} has identically zero expectation")
    return shape * (intensity / total)


def realize_counts(expected: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw independent Poisson counts around a per-channel expectation."""
    expected = np.asarray(expected, dtype=np.float64)
    if np.any(~np.isfinite(expected)) or np.any(expected < 0):
        raise ValidationError("expected counts must be finite and non-negative")
    return rng.poisson(expected).astype(np.int64)


def synthesize_spectrum(
    spec: SyntheticSpeciesSpec,
    cal: ChannelCalibration,
    intensity: float,
    rng: np.random.Generator,
) -> Spectrum:
    """Convenience: expectation + Poisson realization as a labeled Spectrum."""
    return Spectrum(cal, realize_counts(synthesize_expected(spec, cal, intensity), rng), spec.name)


@dataclass(frozen=True)
class DetectorRate:
    """Counts-per-second conversion constant between counts and live time."""

    counts_per_second: float

    def __post_init__(self):
        if not (self.counts_per_second > 0 and math.isfinite(self.counts_per_second)):
            raise ValidationError(
                f"counts_per_second must be positive and finite, got {self.counts_per_second}"
            )


def live_time(counts: int | float, rate: DetectorRate) -> float:
    """Measurement seconds needed to accumulate ``counts`` at a detector rate."""
    if counts < 0:
        raise ValidationError(f"counts must be >= 0, got {counts}")
    return counts / rate.counts_per_second


class SpeciesLibrary:
    """Immutable ordered collection of labeled spectra sharing one calibration."""

    def __init__(self, spectra):
        spectra = tuple(spectra)
        if not spectra:
            raise ValidationError("library must contain at least one species")
        labels = [s.label for s in spectra]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate species labels: {labels}")
        cal = spectra[0].calibration
        for s in spectra[1:]:
            if s.calibration != cal:
                raise ValidationError("all spectra in a library must share one calibration")
        self._spectra = spectra

    def __len__(self) -> int:
        return len(self._spectra)

    def __getitem__(self, i: int) -> Spectrum:
        return self._spectra[i]

    def __iter__(self):
        return iter(self._spectra)

    @property
    def spectra(self) -> tuple[Spectrum, ...]:
        return self._spectra

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self._spectra]

    @property
    def calibration(self) -> ChannelCalibration:
        return self._spectra[0].calibration

    @property
    def n_channels(self) -> int:
        return self.calibration.n_channels


# ---------------------------------------------------------------------------
# Library manifest (JSON): list of (label, csv-path) or (label, synthetic-spec)
# ---------------------------------------------------------------------------

def calibration_to_dict(cal: ChannelCalibration) -> dict:
    return {"n_channels": cal.n_channels, "gain": cal.gain, "offset": cal.offset}


def calibration_from_dict(d: dict) -> ChannelCalibration:
    return ChannelCalibration(
        n_channels=int(d.get("n_channels", DEFAULT_N_CHANNELS)),
        gain=float(d.get("gain", DEFAULT_GAIN)),
        offset=float(d.get("offset", DEFAULT_OFFSET)),
    )


def species_spec_to_dict(spec: SyntheticSpeciesSpec) -> dict:
    return {
        "name": spec.name,
        "peaks": [[p.center_kev, p.amplitude, p.sigma_kev] for p in spec.peaks],
        "background": [spec.background.level, spec.background.decay_per_kev],
    }


def species_spec_from_dict(d: dict) -> SyntheticSpeciesSpec:
    bg = d.get("background", [0.0, 0.0])
    return SyntheticSpeciesSpec(
        name=str(d["name"]),
        peaks=tuple(GaussianPeak(*map(float, p)) for p in d.get("peaks", [])),
        background=ExponentialBackground(float(bg[0]), float(bg[1])),
    )


def load_library(path: str | Path) -> SpeciesLibrary:
    """Load a species-library manifest.

    The manifest is a JSON object with a ``calibration`` block and a
    ``species`` list; each entry carries a ``label`` plus either a ``csv``
    path (relative paths resolve against the manifest) or a ``synthetic``
    spec with ``intensity`` and ``seed`` for a reproducible realization.
    """
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    if "species" not in doc or not doc["species"]:
        raise ValidationError(f"{path}: manifest lists no species")
    cal = calibration_from_dict(doc.get("calibration", {}))
    spectra = []
    for entry in doc["species"]:
        label = str(entry["label"])
        if "csv" in entry:
            csv_path = Path(entry["csv"])
            if not csv_path.is_absolute():
                csv_path = path.parent / csv_path
            spectra.append(load_spectrum_csv(csv_path, cal, label=label))
        elif "synthetic" in entry:
            spec_dict = dict(entry["synthetic"])
            spec_dict.setdefault("name", label)
            spec = species_spec_from_dict(spec_dict)
            rng = np.random.default_rng(int(entry.get("seed", 0)))
            intensity = float(entry.get("intensity", 1e7))
            counts = realize_counts(synthesize_expected(spec, cal, intensity), rng)
            spectra.append(Spectrum(cal, counts, label=label))
        else:
            raise ValidationError(
                f"{path}: species {label!r} needs either a 'csv' or a 'synthetic' entry"
            )
    return SpeciesLibrary(spectra)


# ---------------------------------------------------------------------------
# Deterministic desk-scale species families
# ---------------------------------------------------------------------------

def separated_species_specs(
    n_species: int, cal: ChannelCalibration
) -> list[SyntheticSpeciesSpec]:
    """Well-separated species: each gets a distinctive peak constellation.

    A pooled conv classifier is blind to absolute peak position, so species
    must differ in local structure: each gets a unique peak width, a unique
    secondary-peak amplitude, and a doublet spacing that fits inside a small
    receptive field. Positions are still spread out (they drive the CAM
    localization), confined to the 12%..50% band of the energy span so both
    edges stay uninformative and prunable.
    """
    if n_species < 1:
        raise ValidationError("n_species must be >= 1")
    span = cal.span
    e0 = cal.energy_lo
    specs = []
    for i in range(n_species):
        u = (i + 0.5) / n_species
        sigma = (0.0025 + 0.00045 * i) * span
        c1 = e0 + (0.14 + 0.30 * u) * span
        c2 = c1 + (2.0 + 0.6 * (i % 3)) * sigma
        peaks = [
            GaussianPeak(c1, 1.0, sigma),
            GaussianPeak(c2, 0.35 + 0.05 * i, sigma * 0.75),
        ]
        if i % 2 == 0:
            c3 = e0 + (0.47 - 0.28 * u) * span
            peaks.append(GaussianPeak(c3, 0.30, sigma * 1.5))
        specs.append(
            SyntheticSpeciesSpec(
                name=f"species-{i:02d}",
                peaks=tuple(peaks),
                background=ExponentialBackground(level=0.08, decay_per_kev=3.0 / span),
            )
        )
    return specs


def near_identical_species_specs(
    n_species: int, cal: ChannelCalibration, amplitude_scale: float = 1.0
) -> list[SyntheticSpeciesSpec]:
    """Near-identical species: shared peak positions, amplitudes differing by a few %.

    Mimics same-element materials whose spectra coincide except for small
    relative-intensity shifts; separating them needs high count budgets.
    ``amplitude_scale`` scales the perturbation pattern (1.0 keeps the
    default 2-8% shifts).
    """
    if n_species < 1:
        raise ValidationError("n_species must be >= 1")
    span = cal.span
    e0 = cal.energy_lo
    centers = [e0 + f * span for f in (0.18, 0.24, 0.31, 0.38, 0.44)]
    base_amps = (1.0, 0.82, 0.66, 0.52, 0.40)
    sigma = 0.004 * span
    # Fixed per-species perturbation patterns, +/- a few percent per peak.
    patterns = [
        (0.00, 0.00, 0.00, 0.00, 0.00),
        (0.05, -0.04, 0.03, -0.02, 0.04),
        (-0.04, 0.05, -0.03, 0.04, -0.02),
        (0.03, 0.02, -0.05, -0.04, 0.05),
        (-0.02, -0.05, 0.04, 0.05, -0.04),
        (0.04, 0.03, 0.05, -0.05, 0.02),
    ]
    specs = []
    for j in range(n_species):
        pattern = patterns[j % len(patterns)]
        peaks = tuple(
            GaussianPeak(c, a * (1.0 + amplitude_scale * d), sigma)
            for c, a, d in zip(centers, base_amps, pattern)
        )
        specs.append(
            SyntheticSpeciesSpec(
                name=f"alloy-{j:02d}",
                peaks=peaks,
                background=ExponentialBackground(level=0.10, decay_per_kev=2.0 / span),
            )
        )
    return specs


def make_library(
    specs,
    cal: ChannelCalibration,
    intensity: float,
    seed: int,
) -> SpeciesLibrary:
    """Realize a list of species specs into a library of long measurements.

    Each species gets an independent child stream of ``seed`` so the library
    is reproducible and insensitive to species order changes elsewhere.
    """
    streams = np.random.SeedSequence(seed).spawn(len(specs))
    spectra = [
        synthesize_spectrum(spec, cal, intensity, np.random.default_rng(stream))
        for spec, stream in zip(specs, streams)
    ]
    return SpeciesLibrary(spectra)

"""
Time and frequency domain containers (`Waveform`, `Spectrum`, `FrequencyGrid`) and the transforms between them.

The forward transform is the unnormalized discrete Fourier sum with the analysis kernel `exp(-j*2*pi*f*t)`, the
inverse transform carries the `1/N` factor. Ratios of spectra (frequency responses) do not depend on this choice.
"""

import logging
import math
from typing import NamedTuple, Optional, Union

import numpy as np
from pydantic import Field, field_validator, model_validator

from optovolt.labkit.errors import InvalidInputError, MismatchError, OutOfBandError, SymmetryViolationError
from optovolt.labkit.frozen import ComplexArray, FloatArray, Frozen
from optovolt.labkit.sentinels import DEFAULT, Sentinel
from optovolt.optovolt_typing import RealArray

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-9
# default zero padding on each side of a square pulse is one pulse width, never less than this
MIN_DEFAULT_PADDING_S = 10e-3


class Waveform(Frozen):
    """
    A uniformly sampled real-valued record (volts vs. seconds).

    `antialias_filter_hz` is the corner of the low-pass filter the record went through before it was sampled (None
    if it was not filtered) and `content_bandwidth_hz` is the highest frequency the signal is declared to contain
    before that filter (None if unknown). Both are acquisition metadata used by the noise analysis.
    """

    samples: FloatArray
    sample_rate: float = Field(gt=0)
    t0: float = 0.0
    antialias_filter_hz: Optional[float] = Field(default=None, gt=0)
    content_bandwidth_hz: Optional[float] = Field(default=None, gt=0)

    # noinspection PyNestedDecorators
    @field_validator("samples")
    @classmethod
    def _samples_must_be_finite(cls, samples: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must be finite")
        return samples

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2

    def times(self) -> RealArray:
        return self.t0 + np.arange(self.n_samples) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        """
        A waveform with the same timing and metadata but different samples.
        """
        return Waveform(
            samples=samples,
            sample_rate=self.sample_rate,
            t0=self.t0,
            antialias_filter_hz=self.antialias_filter_hz,
            content_bandwidth_hz=self.content_bandwidth_hz,
        )


class Spectrum(Frozen):
    """
    Complex bins of a forward transform. Bin `k` sits at `k * bin_spacing` for `k <= N/2` and at
    `(k - N) * bin_spacing` above that (the usual FFT order).
    """

    bins: ComplexArray
    bin_spacing: float = Field(gt=0)
    t0: float = 0.0

    @property
    def n_bins(self) -> int:
        return int(self.bins.size)

    @property
    def sample_rate(self) -> float:
        return self.bin_spacing * self.n_bins

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2

    def frequencies(self) -> RealArray:
        return np.fft.fftfreq(self.n_bins, d=1.0 / self.sample_rate)


class FrequencyGrid(Frozen):
    """
    A strictly increasing set of non-negative frequencies (Hz).
    """

    frequencies: FloatArray

    @model_validator(mode="after")
    def _check_frequencies(self) -> "FrequencyGrid":
        freqs = self.frequencies
        if freqs.size == 0:
            raise ValueError("a frequency grid needs at least one frequency")
        if not np.all(np.isfinite(freqs)) or np.any(freqs < 0):
            raise ValueError("grid frequencies must be finite and non-negative")
        if np.any(np.diff(freqs) <= 0):
            raise ValueError("grid frequencies must be strictly increasing")
        return self

    def __len__(self) -> int:
        return int(self.frequencies.size)


class BinValue(NamedTuple):
    """
    The value of one spectral bin together with the exact frequency of that bin.
    """

    value: complex
    frequency: float
    index: int


def forward_transform(waveform: Waveform) -> Spectrum:
    """
    Unnormalized discrete Fourier transform of a waveform.
    """
    if waveform.n_samples == 0:
        raise InvalidInputError("cannot transform an empty waveform")
    return Spectrum(
        bins=np.fft.fft(waveform.samples),
        bin_spacing=waveform.sample_rate / waveform.n_samples,
        t0=waveform.t0,
    )


def inverse_transform(spectrum: Spectrum, symmetry_tolerance: float = SYMMETRY_TOLERANCE) -> Waveform:
    """
    Inverse of `forward_transform`. The result must be real: an imaginary residue up to `symmetry_tolerance` of the
    overall rms is discarded (and logged), anything above that means the spectrum is not Hermitian.
    """
    if spectrum.n_bins == 0:
        raise InvalidInputError("cannot transform an empty spectrum")

    values = np.fft.ifft(spectrum.bins)
    total_rms = math.sqrt(float(np.mean(np.abs(values) ** 2)))
    imag_rms = math.sqrt(float(np.mean(values.imag**2)))

    if imag_rms > symmetry_tolerance * total_rms:
        raise SymmetryViolationError(
            f"the spectrum is not Hermitian: imaginary residue is {imag_rms / total_rms:.3g} of the rms "
            f"(tolerance {symmetry_tolerance:g})"
        )
    if imag_rms > 0:
        logger.debug("discarding imaginary residue of %.3g relative rms", imag_rms / total_rms)

    return Waveform(samples=values.real, sample_rate=spectrum.sample_rate, t0=spectrum.t0)


def value_at_frequency(spectrum: Spectrum, frequency: float) -> BinValue:
    """
    The bin nearest to `frequency` (0 <= frequency <= Nyquist). No interpolation between bins takes place.
    """
    if not math.isfinite(frequency) or frequency < 0:
        raise OutOfBandError(f"frequency must be a finite non-negative number, got {frequency!r}")
    if frequency > spectrum.nyquist:
        raise OutOfBandError(f"{frequency:g} Hz is above the Nyquist frequency of {spectrum.nyquist:g} Hz")

    index = min(int(np.rint(frequency / spectrum.bin_spacing)), spectrum.n_bins // 2)
    return BinValue(
        value=complex(spectrum.bins[index]),
        frequency=index * spectrum.bin_spacing,
        index=index,
    )


def positive_frequencies(spectrum: Spectrum) -> tuple[RealArray, np.ndarray]:
    """
    Frequencies and bins from dc up to (and including, for even lengths) the Nyquist frequency.
    """
    n_positive = spectrum.n_bins // 2 + 1
    return np.arange(n_positive) * spectrum.bin_spacing, spectrum.bins[:n_positive]


def ensure_compatible(*waveforms: Waveform) -> None:
    """
    Raise `MismatchError` unless all the waveforms share their sample rate and length.
    """
    first = waveforms[0]
    for index, other in enumerate(waveforms[1:], start=1):
        if other.sample_rate != first.sample_rate or other.n_samples != first.n_samples:
            raise MismatchError(
                f"waveform {index} ({other.n_samples} samples at {other.sample_rate:g} Hz) does not match "
                f"waveform 0 ({first.n_samples} samples at {first.sample_rate:g} Hz)"
            )


def sine_wave(
    rms: float,
    frequency: float,
    sample_rate: float,
    n_samples: int,
    phase: float = 0.0,
    offset: float = 0.0,
) -> Waveform:
    """
    `offset + rms * sqrt(2) * sin(2*pi*frequency*t + phase)` sampled from t = 0.
    """
    if n_samples < 1:
        raise InvalidInputError(f"a sine wave needs at least one sample, got {n_samples}")
    t = np.arange(n_samples) / sample_rate
    samples = offset + rms * math.sqrt(2) * np.sin(2 * math.pi * frequency * t + phase)
    return Waveform(samples=samples, sample_rate=sample_rate)


def square_pulse(
    amplitude: float,
    duration: float,
    sample_rate: float,
    padding: Union[float, Sentinel] = DEFAULT,
) -> Waveform:
    """
    A record holding one square pulse in the middle and equal zero padding before and after it. The pulse is centered
    at t = 0.

    :param amplitude: Height of the pulse (V).
    :param duration: Width of the pulse (s). It is rounded to a whole number of samples.
    :param sample_rate: Sample rate of the record (Hz).
    :param padding: Length of the zero padding on each side of the pulse (s). One pulse width by default, but
        at least 10 ms.
    """
    if padding is DEFAULT:
        padding = max(duration, MIN_DEFAULT_PADDING_S)
    if duration <= 0 or padding < 0:
        raise InvalidInputError(f"pulse duration must be positive and padding non-negative, got {duration}, {padding}")

    n_pulse = int(math.floor(duration * sample_rate + 0.5))
    n_pad = int(math.floor(padding * sample_rate + 0.5))
    if n_pulse < 1:
        raise InvalidInputError(f"a {duration:g} s pulse is shorter than one sample at {sample_rate:g} Hz")

    samples = np.zeros(n_pulse + 2 * n_pad)
    samples[n_pad : n_pad + n_pulse] = amplitude
    return Waveform(samples=samples, sample_rate=sample_rate, t0=-(n_pad + n_pulse / 2) / sample_rate)


def split_segments(waveform: Waveform, count: int) -> list[Waveform]:
    """
    Split a record into `count` disjoint segments of equal length (trailing samples that do not fill a segment are
    dropped).
    """
    if count < 1:
        raise InvalidInputError(f"segment count must be at least 1, got {count}")
    length = waveform.n_samples // count
    if length < 2:
        raise InvalidInputError(f"{waveform.n_samples} samples cannot be split into {count} segments")
    if length * count != waveform.n_samples:
        logger.debug("dropping %d trailing samples", waveform.n_samples - length * count)

    return [
        Waveform(
            samples=waveform.samples[index * length : (index + 1) * length],
            sample_rate=waveform.sample_rate,
            t0=waveform.t0 + index * length / waveform.sample_rate,
            antialias_filter_hz=waveform.antialias_filter_hz,
            content_bandwidth_hz=waveform.content_bandwidth_hz,
        )
        for index in range(count)
    ]

"""
Reconstruction of the input voltage from the sensor output by apodized inverse filtering: every positive-frequency
bin of the output spectrum is multiplied by `W_L(f) * W_H(f) / H(f)` (and by the notch gains, if any), the negative
frequencies mirror the positive ones and everything at or above the high-side edge is set to zero.
"""

import logging
import math
from typing import Literal, Optional, Sequence, Union

import numpy as np
from pydantic import Field, model_validator

from optovolt.characterization import BodeTable
from optovolt.file_formats import PathLike, write_table_csv
from optovolt.labkit.errors import (
    CoverageError,
    IllConditionedResponseError,
    InvalidInputError,
    NotPulseLikeError,
    OutOfBandError,
)
from optovolt.labkit.frozen import Frozen
from optovolt.noise_analysis import response_at
from optovolt.waveforms import Spectrum, Waveform, forward_transform, inverse_transform

logger = logging.getLogger(__name__)

METRICS_HEADER = ("peak_amplitude_v", "fwhm_s", "amplitude_error_pct", "residual_ringing_rms_v", "t_peak_s")

COVERAGE_WEIGHT = 0.01
ILL_CONDITIONED_RATIO = 1e-6

Frequencies = Union[float, Sequence[float], np.ndarray]


class ApodizationSpec(Frozen):
    """
    The band the reconstruction trusts: the low-side window rises from 0 at dc to 1 at `f_low`, the high-side
    window falls from 1 at dc to 0 at `f_high`. `notches` are `(center_hz, width_hz)` pairs. The rectangular shapes
    are brick walls at the same edges.
    """

    f_low: float = Field(gt=0)
    f_high: float = Field(gt=0)
    notches: tuple[tuple[float, float], ...] = ()
    low_shape: Literal["sine", "rectangular"] = "sine"
    high_shape: Literal["cosine", "rectangular"] = "cosine"

    @model_validator(mode="after")
    def _check_edges(self) -> "ApodizationSpec":
        if not self.f_low < self.f_high:
            raise ValueError(f"f_low ({self.f_low} Hz) must be below f_high ({self.f_high} Hz)")
        for center, width in self.notches:
            if not center > 0 or not width > 0:
                raise ValueError(f"notch centers and widths must be positive, got {center}:{width}")
        return self


class PulseMetrics(Frozen):
    peak_amplitude: float
    fwhm: float = Field(gt=0)
    amplitude_error_pct: Optional[float] = None
    residual_ringing_rms: float = Field(ge=0)
    t_peak: float


class ReconstructionResult(Frozen):
    """
    The zero-mean estimate of the input (dc is not recoverable), its spectrum and, if the estimate looks like a
    pulse, its metrics.
    """

    estimate: Waveform
    spectrum: Spectrum
    metrics: Optional[PulseMetrics] = None


def _as_frequencies(f: Frequencies) -> np.ndarray:
    freqs = np.asarray(f, dtype=np.float64)
    if np.any(freqs < 0) or not np.all(np.isfinite(freqs)):
        raise InvalidInputError("window frequencies must be finite and non-negative")
    return freqs


def _like_input(f: Frequencies, values: np.ndarray) -> Union[float, np.ndarray]:
    return float(values) if np.ndim(f) == 0 else values


def window_low(f: Frequencies, f_low: float, shape: str = "sine") -> Union[float, np.ndarray]:
    """
    `sin(pi * f / (2 * f_low))` below `f_low`, exactly 1 from `f_low` on.
    """
    freqs = _as_frequencies(f)
    if shape == "sine":
        values = np.where(freqs >= f_low, 1.0, np.sin(np.pi * freqs / (2 * f_low)))
    elif shape == "rectangular":
        values = np.where(freqs >= f_low, 1.0, 0.0)
    else:
        raise InvalidInputError(f"unknown low-side window shape {shape!r}")
    return _like_input(f, values)


def window_high(f: Frequencies, f_high: float, shape: str = "cosine") -> Union[float, np.ndarray]:
    """
    `cos(pi * f / (2 * f_high))` below `f_high`, exactly 0 from `f_high` on.
    """
    freqs = _as_frequencies(f)
    if shape == "cosine":
        values = np.where(freqs < f_high, np.cos(np.pi * freqs / (2 * f_high)), 0.0)
    elif shape == "rectangular":
        values = np.where(freqs < f_high, 1.0, 0.0)
    else:
        raise InvalidInputError(f"unknown high-side window shape {shape!r}")
    return _like_input(f, values)


def notch_gain(f: Frequencies, notches: Sequence[tuple[float, float]]) -> Union[float, np.ndarray]:
    """
    Product of cosine-tapered zero notches: `sin^2(pi * |f - center| / width)` within `width / 2` of a center, 1
    elsewhere.
    """
    freqs = _as_frequencies(f)
    gain = np.ones_like(freqs)
    for center, width in notches:
        distance = np.abs(freqs - center)
        gain = gain * np.where(distance < width / 2, np.sin(np.pi * distance / width) ** 2, 1.0)
    return _like_input(f, gain)


def apodization(f: Frequencies, spec: ApodizationSpec) -> Union[float, np.ndarray]:
    """
    The complete weight `W_L * W_H * notches` of a reconstruction.
    """
    values = (
        np.asarray(window_low(f, spec.f_low, spec.low_shape))
        * np.asarray(window_high(f, spec.f_high, spec.high_shape))
        * np.asarray(notch_gain(f, spec.notches))
    )
    return _like_input(f, values)


def reconstruct(
    v_out: Waveform,
    response: BodeTable,
    spec: ApodizationSpec,
    reference: Optional[Waveform] = None,
) -> ReconstructionResult:
    """
    Estimate the input of the sensor from its output.

    Below the lowest row of `response` the high-pass asymptote is used (see `response_at()`); above the highest row
    the response is held constant, but the table must reach every frequency where the apodization weight exceeds
    1%.

    :param v_out: The sensor output (its mean, the quiescent level, is removed).
    :param response: The frequency response of the sensor.
    :param spec: The apodization.
    :param reference: The true input, if known; it only serves the amplitude error of the metrics.
    """
    if v_out.n_samples < 2:
        raise InvalidInputError("a reconstruction needs at least 2 samples")
    if not v_out.sample_rate > 2 * spec.f_high:
        raise OutOfBandError(
            f"f_high = {spec.f_high:g} Hz is not below the Nyquist frequency of {v_out.nyquist:g} Hz"
        )

    spectrum = forward_transform(v_out.with_samples(v_out.samples - v_out.samples.mean()))
    n_bins = spectrum.n_bins
    # strictly positive frequencies; the Nyquist bin (even lengths) lies above f_high anyway
    positive = np.arange(1, (n_bins - 1) // 2 + 1)
    f_positive = positive * spectrum.bin_spacing

    weights = np.asarray(apodization(f_positive, spec))
    significant = f_positive[weights > COVERAGE_WEIGHT]
    if significant.size and significant[-1] > response.freqs[-1] * (1 + 1e-9):
        raise CoverageError(
            f"the response table ends at {response.freqs[-1]:g} Hz but the apodization keeps "
            f"{significant[-1]:g} Hz with a weight above {COVERAGE_WEIGHT:g}"
        )

    passband = weights > 0
    kept = positive[passband]
    h = response_at(response, f_positive[passband], extrapolate_low=True, clamp_high=True)
    ill_conditioned = ~(np.abs(h) > ILL_CONDITIONED_RATIO * float(np.max(response.magnitude)))
    if np.any(ill_conditioned):
        raise IllConditionedResponseError(
            f"|H| is below {ILL_CONDITIONED_RATIO:g} of its maximum at "
            f"{f_positive[passband][ill_conditioned][0]:g} Hz, inside the passband"
        )
    if spec.notches:
        logger.debug("notches suppress %d bins", int(np.count_nonzero(notch_gain(f_positive, spec.notches) < 1)))

    bins = np.zeros(n_bins, dtype=np.complex128)
    bins[kept] = spectrum.bins[kept] * weights[passband] / h
    bins[n_bins - kept] = np.conj(bins[kept])

    estimate_spectrum = Spectrum(bins=bins, bin_spacing=spectrum.bin_spacing, t0=spectrum.t0)
    estimate = inverse_transform(estimate_spectrum)

    try:
        metrics = pulse_metrics(estimate, reference)
    except NotPulseLikeError as exc:
        logger.debug("no pulse metrics for the estimate: %s", exc)
        metrics = None

    return ReconstructionResult(estimate=estimate, spectrum=estimate_spectrum, metrics=metrics)


def pulse_metrics(estimate: Waveform, reference: Optional[Waveform] = None) -> PulseMetrics:
    """
    Metrics of a record holding one dominant pulse.

    The baseline is the median of the record. The peak is the (signed) sample that deviates most from the baseline
    (the first one, if several do), the FWHM spans from the first to the last half-maximum crossing (linearly
    interpolated), the residual ringing is the rms deviation from the baseline from `t_peak + 3 * fwhm` to the end.
    The amplitude error compares the peak with that of `reference`.
    """
    if estimate.n_samples == 0:
        raise InvalidInputError("cannot measure an empty record")

    deviation = estimate.samples - float(np.median(estimate.samples))
    peak_index = int(np.argmax(np.abs(deviation)))
    peak = float(deviation[peak_index])
    if peak == 0:
        raise NotPulseLikeError("the record is flat")

    # work with a positive pulse
    level = deviation * math.copysign(1.0, peak)
    half = abs(peak) / 2
    above = np.flatnonzero(level >= half)
    first, last = int(above[0]), int(above[-1])
    if first == 0 or last == estimate.n_samples - 1:
        raise NotPulseLikeError("the pulse does not cross its half maximum on both sides within the record")

    rise = (first - 1) + (half - level[first - 1]) / (level[first] - level[first - 1])
    fall = last + (level[last] - half) / (level[last] - level[last + 1])
    fwhm = (fall - rise) / estimate.sample_rate

    ringing_start = peak_index + int(math.ceil(3 * fwhm * estimate.sample_rate - 1e-9))
    ringing = deviation[ringing_start:]
    residual_ringing_rms = float(np.sqrt(np.mean(ringing**2))) if ringing.size else 0.0

    amplitude_error_pct = None
    if reference is not None:
        reference_peak = pulse_metrics(reference).peak_amplitude
        amplitude_error_pct = 100 * (peak - reference_peak) / reference_peak

    return PulseMetrics(
        peak_amplitude=peak,
        fwhm=fwhm,
        amplitude_error_pct=amplitude_error_pct,
        residual_ringing_rms=residual_ringing_rms,
        t_peak=estimate.t0 + peak_index / estimate.sample_rate,
    )


def write_metrics_csv(metrics: PulseMetrics, path: PathLike) -> str:
    return write_table_csv(
        path,
        METRICS_HEADER,
        [
            [metrics.peak_amplitude],
            [metrics.fwhm],
            [math.nan if metrics.amplitude_error_pct is None else metrics.amplitude_error_pct],
            [metrics.residual_ringing_rms],
            [metrics.t_peak],
        ],
    )

"""
Noise analysis of the sensor output: averaged periodograms, band-integrated noise, the minimum detectable input
and the dynamic range.
"""

import logging
import math
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import Field, model_validator
from scipy import signal

from optovolt.characterization import BodeTable
from optovolt.file_formats import PathLike, read_table_csv, write_table_csv
from optovolt.labkit.errors import (
    CoverageError,
    InvalidInputError,
    OutOfBandError,
    RecordIOError,
    UndetectableError,
    UnfilteredSegmentError,
)
from optovolt.labkit.frozen import FloatArray, Frozen
from optovolt.labkit.sentinels import DEFAULT, Sentinel
from optovolt.optovolt_typing import ComplexArray
from optovolt.sensor_model import SeedType, SensorModel, max_output_rms, simulate_output
from optovolt.waveforms import Waveform, ensure_compatible, split_segments

logger = logging.getLogger(__name__)

PSD_HEADER = ("freq_hz", "psd_v2_per_hz")
SENSITIVITY_HEADER = ("freq_hz", "v_min_v")


class PsdEstimate(Frozen):
    """
    A single-sided power spectral density (V^2/Hz) from dc up to the Nyquist frequency, averaged over `n_averages`
    periodograms whose bins are `resolution_bw` apart.
    """

    freqs: FloatArray
    density: FloatArray
    n_averages: int = Field(ge=1)
    resolution_bw: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_density(self) -> "PsdEstimate":
        if self.freqs.size != self.density.size or self.freqs.size == 0:
            raise ValueError("freqs and density must be non-empty and of the same length")
        if np.any(self.density < 0):
            raise ValueError("a power spectral density cannot be negative")
        return self


class AcquisitionPreset(Frozen):
    """
    An anti-aliasing low-pass filter in front of the digitizer together with the sample rate and the analysis band it
    is meant for.
    """

    name: str
    filter_hz: float = Field(gt=0)
    sample_rate: float = Field(gt=0)
    band: tuple[float, float]
    filter_order: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def _check_preset(self) -> "AcquisitionPreset":
        if self.filter_hz >= self.sample_rate / 2:
            raise ValueError(f"the {self.filter_hz} Hz filter does not protect a {self.sample_rate} S/s acquisition")
        if not 0 <= self.band[0] < self.band[1] <= self.filter_hz:
            raise ValueError(f"band {self.band} must lie below the filter corner of {self.filter_hz} Hz")
        return self


PRESETS = {
    "wideband": AcquisitionPreset(name="wideband", filter_hz=10_000.0, sample_rate=50_000.0, band=(1.0, 10_000.0)),
    "narrowband": AcquisitionPreset(name="narrowband", filter_hz=1_000.0, sample_rate=5_000.0, band=(10.0, 1_000.0)),
}


class SensitivityReport(Frozen):
    """
    Input-referred sensitivity of a sensor: the output noise in `band`, the minimum detectable input at a set of
    frequencies and the dynamic range at `reference_freq`.
    """

    band: tuple[float, float]
    band_rms: float = Field(ge=0)
    min_detectable: tuple[tuple[float, float], ...]
    reference_freq: float = Field(gt=0)
    v_max_input: float = Field(gt=0)
    v_min_input: float = Field(gt=0)
    dynamic_range_db: float

    @model_validator(mode="after")
    def _check_dynamic_range(self) -> "SensitivityReport":
        expected = 20 * math.log10(self.v_max_input / self.v_min_input)
        if not math.isclose(self.dynamic_range_db, expected, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"dynamic_range_db is {self.dynamic_range_db}, the input range implies {expected}")
        return self


def averaged_periodogram(segments: Sequence[Waveform], taper: Optional[str] = None) -> PsdEstimate:
    """
    The mean of the single-sided periodograms of the segments.

    Every segment has its mean removed, is transformed and normalised to a density (`|X|^2 / (rate * N)`, doubled
    everywhere but at dc and Nyquist). With a `taper` (any window name `scipy.signal.get_window()` knows), the
    segments are multiplied by the window and the normalisation uses the window power instead of N.

    Segments that declare content above their Nyquist frequency must have gone through an anti-aliasing filter below
    it, otherwise `UnfilteredSegmentError` is raised.
    """
    if not segments:
        raise InvalidInputError("at least one segment is needed for a periodogram")
    ensure_compatible(*segments)

    for index, segment in enumerate(segments):
        _check_antialiasing(segment, index)

    n_samples = segments[0].n_samples
    rate = segments[0].sample_rate
    if n_samples < 2:
        raise InvalidInputError(f"periodogram segments need at least 2 samples, got {n_samples}")

    data = np.stack([segment.samples for segment in segments])
    data = data - data.mean(axis=1, keepdims=True)
    if taper is None:
        scale = 1.0 / (rate * n_samples)
    else:
        window = signal.get_window(taper, n_samples, fftbins=True)
        data = data * window
        scale = 1.0 / (rate * float(np.sum(window**2)))

    density = np.abs(np.fft.rfft(data, axis=1)) ** 2 * scale
    density[:, 1:] *= 2
    if n_samples % 2 == 0:
        density[:, -1] /= 2

    return PsdEstimate(
        freqs=np.fft.rfftfreq(n_samples, d=1.0 / rate),
        density=density.mean(axis=0),
        n_averages=len(segments),
        resolution_bw=rate / n_samples,
    )


def _check_antialiasing(segment: Waveform, index: int) -> None:
    if segment.content_bandwidth_hz is None or segment.content_bandwidth_hz <= segment.nyquist:
        return
    if segment.antialias_filter_hz is None or segment.antialias_filter_hz > segment.nyquist:
        raise UnfilteredSegmentError(
            f"segment {index} declares content up to {segment.content_bandwidth_hz:g} Hz, above its Nyquist "
            f"frequency of {segment.nyquist:g} Hz, but "
            + (
                "it was not low-pass filtered"
                if segment.antialias_filter_hz is None
                else f"its {segment.antialias_filter_hz:g} Hz filter sits above the Nyquist frequency"
            )
        )


def band_rms(psd: PsdEstimate, f_lo: float, f_hi: float) -> float:
    """
    The rms in [f_lo, f_hi]. Bin k covers [f_k - df/2, f_k + df/2] (clipped to the [0, f_last] coverage of the
    estimate) and contributes `density * df` weighted by the fraction of its cover that lies inside the band.
    """
    if not f_lo < f_hi:
        raise InvalidInputError(f"expected f_lo < f_hi, got {f_lo}, {f_hi}")
    f_last = float(psd.freqs[-1])
    if f_lo < 0 or f_hi > f_last * (1 + 1e-12):
        raise OutOfBandError(f"band [{f_lo:g}, {f_hi:g}] Hz is outside of the [0, {f_last:g}] Hz coverage")

    half_bin = psd.resolution_bw / 2
    lower = np.maximum(psd.freqs - half_bin, 0.0)
    upper = np.minimum(psd.freqs + half_bin, f_last)
    overlap = np.clip(np.minimum(upper, f_hi) - np.maximum(lower, f_lo), 0.0, None)
    weights = np.divide(overlap, upper - lower, out=np.zeros_like(overlap), where=upper > lower)

    return math.sqrt(float(np.sum(psd.density * psd.resolution_bw * weights)))


def response_at(
    table: BodeTable,
    freqs: Union[float, Sequence[float], np.ndarray],
    extrapolate_low: bool = False,
    clamp_high: bool = False,
) -> ComplexArray:
    """
    Interpolate a Bode table: the magnitude linearly in (log f, dB), the unwrapped phase linearly in log f.

    :param table: The measured (or tabulated) response.
    :param freqs: Where to evaluate it (Hz, non-negative).
    :param extrapolate_low: Below the lowest row, continue with the first-order high-pass asymptote (+20 dB/decade,
    +90 degrees) instead of raising `CoverageError`. The response at dc is then 0.
    :param clamp_high: Above the highest row, hold the value of the highest row instead of raising `CoverageError`.
    """
    f = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise InvalidInputError("response frequencies must be finite and non-negative")

    f_first, f_last = float(table.freqs[0]), float(table.freqs[-1])
    below = f < f_first
    above = f > f_last
    if np.any(below) and not extrapolate_low:
        raise CoverageError(f"the response table starts at {f_first:g} Hz, {float(f[below].min()):g} Hz requested")
    if np.any(above) and not clamp_high:
        raise CoverageError(f"the response table ends at {f_last:g} Hz, {float(f[above].max()):g} Hz requested")

    log_table = np.log10(table.freqs)
    magnitude_db = table.magnitude_db
    with np.errstate(divide="ignore"):
        log_f = np.log10(np.clip(f, f_first, f_last))
    result_db = np.interp(log_f, log_table, magnitude_db)
    result_phase = np.interp(log_f, log_table, table.phase_deg)

    if np.any(below):
        with np.errstate(divide="ignore"):
            result_db[below] = magnitude_db[0] + 20 * np.log10(f[below] / f_first)
        result_phase[below] = 90.0

    with np.errstate(invalid="ignore"):
        result = 10 ** (result_db / 20) * np.exp(1j * np.radians(result_phase))
    result[~np.isfinite(result)] = 0
    return result


def response_magnitude_at(table: BodeTable, frequency: float) -> float:
    return float(np.abs(response_at(table, frequency)[0]))


def min_detectable_input(noise_rms: float, response: BodeTable, frequency: float) -> float:
    """
    The input rms whose output equals the noise rms: `noise_rms / |H(frequency)|`.
    """
    if noise_rms < 0:
        raise InvalidInputError(f"noise rms cannot be negative, got {noise_rms}")
    magnitude = response_magnitude_at(response, frequency)
    if not magnitude > 0:
        raise UndetectableError(f"the sensor does not respond at {frequency:g} Hz")
    return noise_rms / magnitude


def dynamic_range(v_max_in: float, v_min_in: float) -> float:
    """
    `20 * log10(v_max_in / v_min_in)` in dB.
    """
    if not (v_max_in > 0 and v_min_in > 0):
        raise InvalidInputError(f"input levels must be positive, got {v_max_in} and {v_min_in}")
    if not v_max_in > v_min_in:
        raise InvalidInputError(f"the largest input ({v_max_in}) must exceed the smallest one ({v_min_in})")
    return 20 * math.log10(v_max_in / v_min_in)


def sensitivity_report(
    psd: PsdEstimate,
    response: BodeTable,
    band: tuple[float, float] = (10.0, 3000.0),
    freqs: Optional[Sequence[float]] = None,
    max_output: Union[float, Sentinel] = DEFAULT,
    reference_freq: float = 60.0,
) -> SensitivityReport:
    """
    Combine a noise estimate and a response into the sensitivity of the sensor.

    :param psd: The output noise.
    :param response: The frequency response of the sensor.
    :param band: The band the noise is integrated over.
    :param freqs: Where the minimum detectable input is reported; by default at every response row inside `band`.
    :param max_output: The largest unclipped output rms; by default that of the default sensor geometry.
    :param reference_freq: The frequency at which the dynamic range is stated.
    """
    if max_output is DEFAULT:
        max_output = max_output_rms(SensorModel())

    noise_rms = band_rms(psd, *band)
    if freqs is None:
        freqs = [float(f) for f in response.freqs if band[0] <= f <= band[1]]

    min_detectable = tuple((float(f), min_detectable_input(noise_rms, response, f)) for f in freqs)
    v_min_input = min_detectable_input(noise_rms, response, reference_freq)
    v_max_input = max_output / response_magnitude_at(response, reference_freq)

    return SensitivityReport(
        band=band,
        band_rms=noise_rms,
        min_detectable=min_detectable,
        reference_freq=reference_freq,
        v_max_input=v_max_input,
        v_min_input=v_min_input,
        dynamic_range_db=dynamic_range(v_max_input, v_min_input),
    )


def record_noise_segments(
    model: SensorModel,
    n_segments: int,
    segment_duration: float,
    sample_rate: float,
    seed: SeedType = 0,
) -> list[Waveform]:
    """
    The no-input output of a sensor model recorded directly at `sample_rate` (the synthetic noise has no content
    above the Nyquist frequency, so no filter is involved) and split into disjoint segments.
    """
    n_samples = int(round(segment_duration * sample_rate)) * n_segments
    silence = Waveform(samples=np.zeros(n_samples), sample_rate=sample_rate)
    output = simulate_output(model, silence, seed=seed, settle_s=None).waveform
    return split_segments(output, n_segments)


def acquire_noise_segments(
    model: SensorModel,
    preset: Union[AcquisitionPreset, str],
    n_segments: int,
    segment_duration: float,
    seed: SeedType = 0,
) -> list[Waveform]:
    """
    Emulate a noise acquisition through an anti-aliasing preset: the no-input output of the model is synthesised at
    an integer multiple of the preset rate (at least 4x and at least ten times the resonance), low-pass filtered at
    the preset corner (zero-phase Butterworth) and decimated to the preset rate. The segments carry the filter
    corner and the synthesis bandwidth as metadata.
    """
    if isinstance(preset, str):
        if preset not in PRESETS:
            raise InvalidInputError(f"unknown preset {preset!r}, expected one of {', '.join(PRESETS)}")
        preset = PRESETS[preset]

    factor = max(4, math.ceil(10 * model.f_res / preset.sample_rate))
    high_rate = preset.sample_rate * factor
    n_samples = int(round(segment_duration * preset.sample_rate)) * n_segments

    silence = Waveform(samples=np.zeros(n_samples * factor), sample_rate=high_rate)
    output = simulate_output(model, silence, seed=seed, settle_s=None).waveform

    sos = signal.butter(preset.filter_order, preset.filter_hz, btype="lowpass", fs=high_rate, output="sos")
    filtered = signal.sosfiltfilt(sos, output.samples)[::factor]
    logger.debug("acquired %d samples through the %s preset (decimation by %d)", filtered.size, preset.name, factor)

    acquired = Waveform(
        samples=filtered,
        sample_rate=preset.sample_rate,
        antialias_filter_hz=preset.filter_hz,
        content_bandwidth_hz=high_rate / 2,
    )
    return split_segments(acquired, n_segments)


def write_psd_csv(psd: PsdEstimate, path: PathLike) -> str:
    return write_table_csv(
        path,
        PSD_HEADER,
        [psd.freqs, psd.density],
        metadata={"n_averages": psd.n_averages, "resolution_bw_hz": repr(psd.resolution_bw)},
    )


def read_psd_csv(path: PathLike) -> PsdEstimate:
    columns, metadata = read_table_csv(path, PSD_HEADER)
    try:
        freqs = columns["freq_hz"]
        resolution_bw = float(metadata["resolution_bw_hz"]) if "resolution_bw_hz" in metadata else freqs[1] - freqs[0]
        return PsdEstimate(
            freqs=freqs,
            density=columns["psd_v2_per_hz"],
            n_averages=int(metadata.get("n_averages", "1")),
            resolution_bw=resolution_bw,
        )
    except (ValueError, IndexError) as exc:
        raise RecordIOError(f"{str(path)!r}: not a valid PSD table: {exc}") from exc


def format_sensitivity_report(report: SensitivityReport) -> str:
    """
    The human-readable form of a report.
    """
    lines = [
        f"band: {report.band[0]:g} - {report.band[1]:g} Hz",
        f"output noise: {report.band_rms * 1e3:.3f} mV rms",
        f"minimum detectable input at {report.reference_freq:g} Hz: {report.v_min_input:.4g} V rms",
        f"saturating input at {report.reference_freq:g} Hz: {report.v_max_input:.4g} V rms",
        f"dynamic range: {report.dynamic_range_db:.2f} dB",
    ]
    if report.min_detectable:
        best_freq, best_v_min = min(report.min_detectable, key=lambda item: item[1])
        lines.append(f"best sensitivity: {best_v_min:.4g} V rms at {best_freq:g} Hz")
    return "\n".join(lines) + "\n"


def write_sensitivity_csv(report: SensitivityReport, path: PathLike) -> str:
    return write_table_csv(
        path,
        SENSITIVITY_HEADER,
        [[f for f, _ in report.min_detectable], [v_min for _, v_min in report.min_detectable]],
        metadata={
            "band_lo_hz": repr(report.band[0]),
            "band_hi_hz": repr(report.band[1]),
            "band_rms_v": repr(report.band_rms),
            "reference_freq_hz": repr(report.reference_freq),
            "v_max_input_v": repr(report.v_max_input),
            "v_min_input_v": repr(report.v_min_input),
            "dynamic_range_db": repr(report.dynamic_range_db),
        },
    )

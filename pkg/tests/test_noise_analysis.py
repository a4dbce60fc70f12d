"""
Tests for the noise analysis: periodograms, band integrals, response interpolation and the sensitivity figures.
"""

import math

import numpy as np
import pytest

from optovolt.characterization import BodeTable, log_grid, tabulate_response
from optovolt.file_formats import read_table_csv
from optovolt.labkit.errors import (
    CoverageError,
    InvalidInputError,
    OutOfBandError,
    UndetectableError,
    UnfilteredSegmentError,
)
from optovolt.noise_analysis import (
    acquire_noise_segments,
    averaged_periodogram,
    band_rms,
    dynamic_range,
    format_sensitivity_report,
    min_detectable_input,
    read_psd_csv,
    record_noise_segments,
    response_at,
    response_magnitude_at,
    sensitivity_report,
    write_psd_csv,
    write_sensitivity_csv,
)
from optovolt.sensor_model import SensorModel, default_phase_model, implied_band_rms, max_output_rms
from optovolt.waveforms import Waveform, sine_wave, split_segments


def white_segments(sigma: float, rate: float, n_segments: int, n_samples: int, seed: int = 0) -> list[Waveform]:
    samples = np.random.default_rng(seed).normal(0.0, sigma, n_segments * n_samples)
    return split_segments(Waveform(samples=samples, sample_rate=rate), n_segments)


def flat_table(value: complex = 0.005) -> BodeTable:
    return BodeTable.from_values([10.0, 100.0, 1000.0], [value] * 3)


def test_white_noise_periodogram_level() -> None:
    """
    The single-sided density of white noise of variance sigma^2 is 2 * sigma^2 / rate, the band average of 128
    periodograms matches it within 2% and the bins scatter by about 1/sqrt(128).
    """
    sigma, rate = 0.01, 1000.0
    psd = averaged_periodogram(white_segments(sigma, rate, 128, 1000))

    expected = 2 * sigma**2 / rate
    interior = psd.density[1:-1] / expected
    assert np.mean(interior) == pytest.approx(1.0, abs=0.02)
    assert 0.07 < np.std(interior) < 0.11
    assert psd.n_averages == 128
    assert psd.resolution_bw == pytest.approx(1.0)
    assert psd.freqs[-1] == pytest.approx(500.0)


def test_tapered_periodogram_keeps_the_level() -> None:
    sigma, rate = 0.01, 1000.0
    psd = averaged_periodogram(white_segments(sigma, rate, 64, 1000, seed=1), taper="hann")

    assert np.mean(psd.density[5:-5]) == pytest.approx(2 * sigma**2 / rate, rel=0.03)


@pytest.mark.parametrize("n_samples", [1000, 999])
def test_band_rms_over_full_coverage(n_samples: int) -> None:
    """
    Integrating over the whole coverage gives back the variance of the segments (Parseval).
    """
    segments = white_segments(0.5, 2000.0, 8, n_samples, seed=n_samples)
    psd = averaged_periodogram(segments)

    expected = math.sqrt(np.mean([np.var(segment.samples) for segment in segments]))
    assert band_rms(psd, 0.0, float(psd.freqs[-1])) == pytest.approx(expected, rel=1e-9)


def test_band_rms_of_a_tone() -> None:
    """
    A tone on an exact bin contributes its rms to any band around it and nothing to bands that exclude it.
    """
    segments = split_segments(sine_wave(0.3, 50.0, 1000.0, 4000), 4)
    psd = averaged_periodogram(segments)

    assert band_rms(psd, 45.0, 55.0) == pytest.approx(0.3, rel=1e-9)
    assert band_rms(psd, 100.0, 200.0) < 1e-9


def test_band_rms_errors() -> None:
    psd = averaged_periodogram(white_segments(1.0, 100.0, 2, 100))

    with pytest.raises(InvalidInputError):
        band_rms(psd, 20.0, 10.0)
    with pytest.raises(OutOfBandError):
        band_rms(psd, 10.0, 60.0)


def test_unfiltered_segments_are_rejected() -> None:
    """
    Segments that declare content above Nyquist need an anti-aliasing filter below Nyquist.
    """
    segment = Waveform(samples=np.arange(10.0), sample_rate=100.0, content_bandwidth_hz=200.0)

    with pytest.raises(UnfilteredSegmentError):
        averaged_periodogram([segment])
    with pytest.raises(UnfilteredSegmentError):
        averaged_periodogram([Waveform(**{**segment.frozen_fields_and_values(), "antialias_filter_hz": 80.0})])

    filtered = Waveform(**{**segment.frozen_fields_and_values(), "antialias_filter_hz": 40.0})
    assert averaged_periodogram([filtered]).n_averages == 1


def test_periodogram_input_errors() -> None:
    with pytest.raises(InvalidInputError):
        averaged_periodogram([])


def test_response_at_rows_and_between_them() -> None:
    model = SensorModel()
    table = tabulate_response(model, log_grid(1.0, 10_000.0, 40))

    np.testing.assert_allclose(response_at(table, table.freqs[10:20]), table.values[10:20], rtol=1e-9)
    assert response_magnitude_at(table, 100.0) == pytest.approx(abs(model.frequency_response(100.0)), rel=1e-3)


def test_response_at_outside_the_table() -> None:
    """
    Below the table the high-pass asymptote applies on request, above it the last row is held on request.
    """
    table = flat_table(0.005j)

    with pytest.raises(CoverageError):
        response_at(table, 5.0)
    with pytest.raises(CoverageError):
        response_at(table, 2000.0)

    low = response_at(table, [1.0, 0.0], extrapolate_low=True)
    assert abs(low[0]) == pytest.approx(0.0005)
    assert np.degrees(np.angle(low[0])) == pytest.approx(90.0)
    assert low[1] == 0
    assert response_at(table, 2000.0, clamp_high=True)[0] == pytest.approx(0.005j)


def test_min_detectable_input() -> None:
    assert min_detectable_input(1e-3, flat_table(), 100.0) == pytest.approx(0.2)

    with pytest.raises(UndetectableError):
        min_detectable_input(1e-3, flat_table(0.0), 100.0)


def test_dynamic_range() -> None:
    assert dynamic_range(1.0, 1e-3) == pytest.approx(60.0)

    with pytest.raises(InvalidInputError):
        dynamic_range(1e-3, 1.0)
    with pytest.raises(InvalidInputError):
        dynamic_range(1.0, 0.0)


def test_sensitivity_of_phase_one() -> None:
    """
    The noise of the first phase limits it to about 0.29 V rms at 60 Hz, about 60 dB below saturation.
    """
    model = default_phase_model(1)
    psd = averaged_periodogram(record_noise_segments(model, 16, 1.0, 25_000.0, seed=2))
    response = tabulate_response(model, log_grid(1.0, 10_000.0, 40))

    report = sensitivity_report(psd, response, band=(10.0, 3000.0), max_output=max_output_rms(model))

    assert report.band_rms == pytest.approx(1.40e-3, rel=0.03)
    assert report.v_min_input == pytest.approx(0.293, rel=0.03)
    assert report.v_max_input == pytest.approx(296.0, rel=0.01)
    assert report.dynamic_range_db == pytest.approx(60.1, abs=0.3)
    assert all(10.0 <= frequency <= 3000.0 for frequency, _ in report.min_detectable)

    text = format_sensitivity_report(report)
    assert "dynamic range: 60." in text
    assert "minimum detectable input at 60 Hz" in text


def test_narrowband_acquisition() -> None:
    """
    Segments acquired through the narrowband preset pass the anti-aliasing check and keep the in-band noise.
    """
    model = default_phase_model(2)
    segments = acquire_noise_segments(model, "narrowband", 8, 1.0, seed=4)

    assert segments[0].sample_rate == 5_000.0
    assert segments[0].antialias_filter_hz == 1_000.0
    assert segments[0].content_bandwidth_hz > segments[0].nyquist

    psd = averaged_periodogram(segments)
    assert band_rms(psd, 10.0, 500.0) == pytest.approx(implied_band_rms(model.noise, model, 10.0, 500.0), rel=0.05)

    with pytest.raises(InvalidInputError):
        acquire_noise_segments(model, "ultrawide", 1, 1.0)


def test_csv_outputs(tmp_path) -> None:
    model = default_phase_model(3)
    psd = averaged_periodogram(record_noise_segments(model, 2, 0.2, 20_000.0))

    write_psd_csv(psd, tmp_path / "psd.csv")
    assert read_psd_csv(tmp_path / "psd.csv") == psd

    report = sensitivity_report(psd, tabulate_response(model, [30.0, 60.0, 100.0]), band=(20.0, 200.0))
    write_sensitivity_csv(report, tmp_path / "report.csv")
    columns, metadata = read_table_csv(tmp_path / "report.csv", ("freq_hz", "v_min_v"))
    np.testing.assert_allclose(columns["freq_hz"], [30.0, 60.0, 100.0])
    assert float(metadata["dynamic_range_db"]) == report.dynamic_range_db

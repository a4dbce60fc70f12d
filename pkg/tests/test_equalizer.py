"""
Tests for the apodization windows, the inverse-filter reconstruction and the pulse metrics.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from optovolt.characterization import BodeTable, log_grid, tabulate_response
from optovolt.equalizer import (
    ApodizationSpec,
    ReconstructionResult,
    apodization,
    notch_gain,
    pulse_metrics,
    reconstruct,
    window_high,
    window_low,
    write_metrics_csv,
)
from optovolt.file_formats import read_table_csv
from optovolt.labkit.errors import (
    CoverageError,
    IllConditionedResponseError,
    InvalidInputError,
    NotPulseLikeError,
    OutOfBandError,
)
from optovolt.sensor_model import SensorModel, default_phase_model, simulate_output
from optovolt.waveforms import Waveform, forward_transform, sine_wave, square_pulse

RATE = 25_000.0
AMPLITUDE = 150.0


@pytest.fixture(name="model")
def _model() -> SensorModel:
    return default_phase_model(2)


@pytest.fixture(name="dense_response")
def _dense_response(model: SensorModel) -> BodeTable:
    return tabulate_response(model, log_grid(1.0, 10_000.0, 400))


@pytest.fixture(name="pulse")
def _pulse() -> Waveform:
    return square_pulse(AMPLITUDE, 2.5e-3, RATE)


def equalized(model: SensorModel, response: BodeTable, v_in: Waveform, spec: ApodizationSpec) -> ReconstructionResult:
    v_out = simulate_output(model, v_in, include_noise=False).waveform
    return reconstruct(v_out, response, spec, reference=v_in)


def test_window_low() -> None:
    assert window_low(0.0, 10.0) == 0.0
    assert window_low(5.0, 10.0) == pytest.approx(math.sin(math.pi / 4))
    assert window_low(10.0, 10.0) == 1.0
    assert window_low(1000.0, 10.0) == 1.0
    np.testing.assert_array_equal(window_low([5.0, 20.0], 10.0, shape="rectangular"), [0.0, 1.0])
    assert isinstance(window_low(5.0, 10.0), float)


def test_window_high() -> None:
    assert window_high(0.0, 4000.0) == 1.0
    assert window_high(2000.0, 4000.0) == pytest.approx(math.cos(math.pi / 4))
    assert window_high(4000.0, 4000.0) == 0.0
    assert window_high(5000.0, 4000.0) == 0.0
    np.testing.assert_array_equal(window_high([3999.0, 4000.0], 4000.0, shape="rectangular"), [1.0, 0.0])


def test_windows_on_a_fine_grid() -> None:
    f_low, f_high = 10.0, 4000.0
    freqs = np.linspace(0.0, 5000.0, 10_000)

    expected_low = np.array([math.sin(math.pi * f / (2 * f_low)) if f < f_low else 1.0 for f in freqs])
    expected_high = np.array([math.cos(math.pi * f / (2 * f_high)) if f < f_high else 0.0 for f in freqs])
    np.testing.assert_allclose(window_low(freqs, f_low), expected_low, rtol=0, atol=1e-12)
    np.testing.assert_allclose(window_high(freqs, f_high), expected_high, rtol=0, atol=1e-12)
    assert window_low(f_low / 2, f_low) == pytest.approx(0.7071068, abs=1e-6)
    assert window_high(f_high / 2, f_high) == pytest.approx(0.7071068, abs=1e-6)


@pytest.mark.parametrize("f_low, f_high", [(10.0, 4000.0), (1.0, 100.0), (50.0, 1000.0)])
def test_window_product_is_continuous(f_low: float, f_high: float) -> None:
    """
    On a 0.5 Hz grid no step of `W_L * W_H` exceeds what its slope allows.
    """
    step = 0.5
    freqs = np.arange(0.0, 2 * f_high, step)
    product = np.asarray(window_low(freqs, f_low)) * np.asarray(window_high(freqs, f_high))

    bound = math.pi * step * (1 / (2 * f_low) + 1 / (2 * f_high)) + 1e-12
    assert np.max(np.abs(np.diff(product))) < bound


def test_window_errors() -> None:
    with pytest.raises(InvalidInputError):
        window_low(5.0, 10.0, shape="gaussian")
    with pytest.raises(InvalidInputError):
        window_high(-1.0, 10.0)


def test_notch_gain() -> None:
    notches = [(60.0, 4.0), (180.0, 10.0)]
    gains = notch_gain([60.0, 61.0, 62.0, 100.0, 180.0], notches)

    np.testing.assert_allclose(gains, [0.0, math.sin(math.pi / 4) ** 2, 1.0, 1.0, 0.0], atol=1e-12)


def test_apodization_is_the_product() -> None:
    spec = ApodizationSpec(f_low=10.0, f_high=4000.0, notches=((60.0, 4.0),))
    freqs = np.array([0.0, 5.0, 59.0, 100.0, 3000.0, 4500.0])

    expected = window_low(freqs, 10.0) * window_high(freqs, 4000.0) * notch_gain(freqs, spec.notches)
    np.testing.assert_allclose(apodization(freqs, spec), expected)


def test_apodization_spec_validation() -> None:
    with pytest.raises(ValidationError):
        ApodizationSpec(f_low=4000.0, f_high=10.0)
    with pytest.raises(ValidationError):
        ApodizationSpec(f_low=10.0, f_high=4000.0, notches=((60.0, 0.0),))
    with pytest.raises(ValidationError):
        ApodizationSpec(f_low=10.0, f_high=4000.0, low_shape="cosine")


def test_flat_response_passes_in_band_signals() -> None:
    """
    With a unit response and rectangular windows an in-band sine is reconstructed exactly.
    """
    v_out = sine_wave(1.0, 50.0, 10_000.0, 10_000, offset=3.0)
    response = BodeTable.from_values(log_grid(1.0, 1000.0, 10), np.ones(31))
    spec = ApodizationSpec(f_low=10.0, f_high=1000.0, low_shape="rectangular", high_shape="rectangular")

    result = reconstruct(v_out, response, spec)

    np.testing.assert_allclose(result.estimate.samples, v_out.samples - 3.0, rtol=0, atol=1e-9)
    assert result.estimate.sample_rate == v_out.sample_rate


def test_pulse_reconstruction(model: SensorModel, dense_response: BodeTable, pulse: Waveform) -> None:
    """
    A 2.5 ms pulse is recovered from the ringing sensor output with the overshoot of the cosine window only (about
    2.1 to 2.4%).
    """
    result = equalized(model, dense_response, pulse, ApodizationSpec(f_low=10.0, f_high=4000.0))

    assert result.metrics is not None
    assert 1.5 < result.metrics.amplitude_error_pct < 2.5
    assert result.metrics.fwhm == pytest.approx(pulse_metrics(pulse).fwhm, rel=0.05)
    assert abs(result.metrics.t_peak) < 1.3e-3
    assert result.metrics.residual_ringing_rms < 0.01 * AMPLITUDE


def test_brick_wall_window_rings_more(model: SensorModel, dense_response: BodeTable, pulse: Waveform) -> None:
    v_out = simulate_output(model, pulse, include_noise=False).waveform

    smooth = reconstruct(v_out, dense_response, ApodizationSpec(f_low=10.0, f_high=4000.0), reference=pulse)
    brick_wall = reconstruct(
        v_out,
        dense_response,
        ApodizationSpec(f_low=10.0, f_high=4000.0, high_shape="rectangular"),
        reference=pulse,
    )

    assert brick_wall.metrics.amplitude_error_pct > smooth.metrics.amplitude_error_pct


def test_long_pulse_reconstruction(model: SensorModel, dense_response: BodeTable) -> None:
    """
    A 25 ms pulse keeps its top flat: with the default framing no bin of the record falls below the low-side edge.
    """
    pulse = square_pulse(AMPLITUDE, 25e-3, RATE)

    result = equalized(model, dense_response, pulse, ApodizationSpec(f_low=10.0, f_high=4000.0))

    assert abs(result.metrics.amplitude_error_pct) <= 2.0
    assert result.metrics.residual_ringing_rms <= 0.01 * AMPLITUDE
    assert result.metrics.fwhm == pytest.approx(25e-3, rel=0.02)


def test_short_pulse_reconstruction(model: SensorModel, dense_response: BodeTable) -> None:
    """
    A 250 us pulse has much of its energy above 4 kHz: it comes back somewhat lower and wider.
    """
    pulse = square_pulse(AMPLITUDE, 250e-6, RATE)

    result = equalized(model, dense_response, pulse, ApodizationSpec(f_low=10.0, f_high=4000.0))

    assert abs(result.metrics.amplitude_error_pct) <= 10.0
    reference_fwhm = pulse_metrics(pulse).fwhm
    assert reference_fwhm == pytest.approx(240e-6)
    assert result.metrics.fwhm > reference_fwhm


def test_short_pulse_through_a_narrow_band(model: SensorModel, dense_response: BodeTable) -> None:
    pulse = square_pulse(AMPLITUDE, 250e-6, RATE)

    result = equalized(model, dense_response, pulse, ApodizationSpec(f_low=10.0, f_high=1000.0))

    assert result.metrics.amplitude_error_pct < -50.0


def test_reconstruction_is_linear(model: SensorModel, dense_response: BodeTable) -> None:
    spec = ApodizationSpec(f_low=10.0, f_high=4000.0)
    pulse = square_pulse(AMPLITUDE / 2, 2.5e-3, RATE)
    doubled = pulse.with_samples(2 * pulse.samples)

    single = equalized(model, dense_response, pulse, spec).estimate.samples
    double = equalized(model, dense_response, doubled, spec).estimate.samples

    np.testing.assert_allclose(double, 2 * single, rtol=0, atol=0.005 * np.abs(double).max())


def test_band_limited_signal_is_recovered(model: SensorModel, dense_response: BodeTable) -> None:
    """
    Sines on exact bins where both rectangular windows are 1 pass through the sensor and back unchanged.
    """
    n_samples = int(RATE)
    t = np.arange(n_samples) / RATE
    samples = sum(
        amplitude * np.sin(2 * math.pi * frequency * t + phase)
        for amplitude, frequency, phase in [(10.0, 10.0, 0.0), (20.0, 100.0, 1.0), (5.0, 1000.0, 2.0)]
    )
    v_in = Waveform(samples=samples, sample_rate=RATE)
    spec = ApodizationSpec(f_low=5.0, f_high=4000.0, low_shape="rectangular", high_shape="rectangular")

    estimate = equalized(model, dense_response, v_in, spec).estimate

    expected = samples - samples.mean()
    np.testing.assert_allclose(estimate.samples, expected, rtol=0, atol=0.005 * np.abs(expected).max())


def test_nothing_survives_above_the_high_edge(model: SensorModel, dense_response: BodeTable, pulse: Waveform) -> None:
    result = equalized(model, dense_response, pulse, ApodizationSpec(f_low=10.0, f_high=4000.0))

    stopband = np.abs(result.spectrum.frequencies()) >= 4000.0
    assert np.any(stopband)
    assert np.all(result.spectrum.bins[stopband] == 0)
    np.testing.assert_allclose(forward_transform(result.estimate).bins[stopband], 0, atol=1e-6)


def test_reconstruction_errors(dense_response: BodeTable) -> None:
    v_out = Waveform(samples=np.random.default_rng(0).standard_normal(5000), sample_rate=RATE)

    with pytest.raises(OutOfBandError):
        reconstruct(v_out, dense_response, ApodizationSpec(f_low=10.0, f_high=13_000.0))

    short_table = tabulate_response(SensorModel(), log_grid(1.0, 1000.0, 40))
    with pytest.raises(CoverageError):
        reconstruct(v_out, short_table, ApodizationSpec(f_low=10.0, f_high=4000.0))

    dead_band = BodeTable.from_values([1.0, 10.0, 100.0, 1000.0, 10_000.0], [1.0, 1.0, 1e-9, 1.0, 1.0])
    with pytest.raises(IllConditionedResponseError):
        reconstruct(v_out, dead_band, ApodizationSpec(f_low=10.0, f_high=4000.0))


def test_flat_estimate_has_no_metrics(dense_response: BodeTable) -> None:
    v_out = Waveform(samples=np.full(5000, 2.0), sample_rate=RATE)

    result = reconstruct(v_out, dense_response, ApodizationSpec(f_low=10.0, f_high=4000.0))

    assert result.metrics is None
    assert np.all(result.estimate.samples == 0)


def test_square_pulse_metrics(pulse: Waveform) -> None:
    metrics = pulse_metrics(pulse)

    assert metrics.peak_amplitude == AMPLITUDE
    assert metrics.fwhm == pytest.approx(pulse.samples.astype(bool).sum() / RATE)
    assert metrics.t_peak == pytest.approx(pulse.times()[np.argmax(pulse.samples)])
    assert metrics.residual_ringing_rms == 0.0
    assert metrics.amplitude_error_pct is None


def test_negative_pulse_metrics() -> None:
    metrics = pulse_metrics(square_pulse(-2.0, 1e-3, 10_000.0), reference=square_pulse(-1.0, 1e-3, 10_000.0))

    assert metrics.peak_amplitude == -2.0
    assert metrics.amplitude_error_pct == pytest.approx(100.0)


@pytest.mark.parametrize("samples", [[0.0] * 10, [1.0, 1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 1.0]])
def test_not_pulse_like(samples: list) -> None:
    with pytest.raises(NotPulseLikeError):
        pulse_metrics(Waveform(samples=samples, sample_rate=1000.0))


def test_metrics_csv(tmp_path, pulse: Waveform) -> None:
    write_metrics_csv(pulse_metrics(pulse), tmp_path / "metrics.csv")
    columns, _ = read_table_csv(
        tmp_path / "metrics.csv",
        ("peak_amplitude_v", "fwhm_s", "amplitude_error_pct", "residual_ringing_rms_v", "t_peak_s"),
    )

    assert columns["peak_amplitude_v"][0] == AMPLITUDE
    assert math.isnan(columns["amplitude_error_pct"][0])

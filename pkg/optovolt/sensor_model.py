"""
A parametric model of one phase of the optical voltage sensor: a first-order high-pass stage in series with a
mechanical second-order resonance, a quiescent output level, clipping rails and a calibrated output noise (white
floor shaped by the resonance plus narrowband spurs).
"""

import logging
import math
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np
from pydantic import Field, model_validator
from scipy import integrate

from optovolt.labkit.errors import AliasingRiskError, ConfigError, InvalidInputError
from optovolt.labkit.frozen import Frozen
from optovolt.labkit.sentinels import DEFAULT, Sentinel
from optovolt.optovolt_typing import ComplexArray, RealArray
from optovolt.waveforms import Waveform, forward_transform, inverse_transform, Spectrum

logger = logging.getLogger(__name__)

SeedType = Union[int, Sequence[int]]

# flat-band gain at which a 280 V rms, 60 Hz input just reaches the lower rail of the default model
DEFAULT_GAIN_FLAT = 0.005058
PHASE_1_GAIN_OFFSET_DB = -0.5
RESONANT_PHASE2_F_RES = 2080.0
RESONANT_PHASE2_Q = 60.0
DEFAULT_SPURS = (
    (60.0, 0.35e-3),
    (92.0, 0.08e-3),
    (148.0, 0.08e-3),
    (180.0, 0.2e-3),
    (300.0, 0.15e-3),
    (420.0, 0.1e-3),
)


class NoiseModel(Frozen):
    """
    Output-referred noise of a sensor phase.

    :param base_density: White floor of the single-sided amplitude density at the sensor output (V/sqrt(Hz)).
    :param spurs: Narrowband lines as `(frequency_hz, rms_volts)` pairs.
    :param resonance_boost: How strongly the mechanical resonance lifts the floor: the power density is multiplied by
    `1 + resonance_boost**2 * |RES(f)|**2`.
    """

    base_density: float = Field(default=0.0, ge=0)
    spurs: tuple[tuple[float, float], ...] = ()
    resonance_boost: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def _check_spurs(self) -> "NoiseModel":
        for frequency, rms in self.spurs:
            if not frequency > 0:
                raise ValueError(f"spur frequencies must be positive, got {frequency}")
            if not rms >= 0:
                raise ValueError(f"spur rms values must be non-negative, got {rms} at {frequency} Hz")
        return self

    @property
    def is_silent(self) -> bool:
        return self.base_density == 0 and all(rms == 0 for _, rms in self.spurs)

    def density(self, model: "SensorModel", freqs: Union[float, Sequence[float], np.ndarray]) -> RealArray:
        """
        Single-sided power density of the broadband part of the noise (V^2/Hz), spurs excluded.
        """
        resonance = model.resonance_response(freqs)
        return self.base_density**2 * (1 + self.resonance_boost**2 * np.abs(resonance) ** 2)


class SensorModel(Frozen):
    """
    One sensor phase. Field defaults describe the geometry shared by all the phases (2 kHz resonance with a quality
    factor of 35, 2 Hz high-pass corner, 2 V quiescent point between 0 and 5 V rails); the noise is silent unless
    given.
    """

    gain_flat: float = Field(default=DEFAULT_GAIN_FLAT, gt=0)
    f_corner: float = Field(default=2.0, gt=0)
    f_res: float = Field(default=2000.0, gt=0)
    q_factor: float = Field(default=35.0, gt=0.5)
    v_quiescent: float = 2.0
    v_clip_low: float = 0.0
    v_clip_high: float = 5.0
    noise: NoiseModel = NoiseModel()

    @model_validator(mode="after")
    def _check_invariants(self) -> "SensorModel":
        if not self.f_corner < self.f_res:
            raise ValueError(f"f_corner ({self.f_corner} Hz) must be below f_res ({self.f_res} Hz)")
        if not self.v_clip_low < self.v_quiescent < self.v_clip_high:
            raise ValueError(
                f"expected v_clip_low < v_quiescent < v_clip_high, got "
                f"{self.v_clip_low} < {self.v_quiescent} < {self.v_clip_high}"
            )
        flat_error_db = 20 * math.log10(abs(self.frequency_response(self.flat_band_frequency)[()]) / self.gain_flat)
        if abs(flat_error_db) > 1.0:
            raise ValueError(
                f"the response at {self.flat_band_frequency:.4g} Hz deviates from gain_flat by {flat_error_db:.2f} dB "
                f"(more than 1 dB), the model has no flat band"
            )
        return self

    @property
    def flat_band_frequency(self) -> float:
        """
        Geometric mean of ten times the high-pass corner and a quarter of the resonance frequency.
        """
        return math.sqrt(10 * self.f_corner * self.f_res / 4)

    def high_pass_response(self, freqs: Union[float, Sequence[float], np.ndarray]) -> ComplexArray:
        x = np.asarray(freqs, dtype=np.float64) / self.f_corner
        return 1j * x / (1 + 1j * x)

    def resonance_response(self, freqs: Union[float, Sequence[float], np.ndarray]) -> ComplexArray:
        f = np.asarray(freqs, dtype=np.float64)
        return self.f_res**2 / (self.f_res**2 - f**2 + 1j * f * self.f_res / self.q_factor)

    def frequency_response(self, freqs: Union[float, Sequence[float], np.ndarray]) -> ComplexArray:
        """
        H(f) = gain_flat * HP(f) * RES(f), vectorised. Negative frequencies give the complex conjugate of the
        positive ones, so the result can be applied to a full FFT bin layout directly.
        """
        return self.gain_flat * self.high_pass_response(freqs) * self.resonance_response(freqs)

    def with_updates(self, **changes) -> "SensorModel":
        """
        A copy of this model with some of the fields replaced (the copy is validated again).
        """
        return type(self).model_validate({**self.frozen_fields_and_values(), **changes})


class DividerModel(Frozen):
    """
    The capacitive divider in front of the transducer: a series capacitor `c_series` and the capacitance of the
    piezo element `c_piezo` (farads).
    """

    c_series: float = Field(gt=0)
    c_piezo: float = Field(gt=0)


class SimulationResult(NamedTuple):
    waveform: Waveform
    saturated: bool


def transfer_function(model: SensorModel, frequency: float) -> complex:
    """
    The complex response of the sensor at a single frequency (exactly 0 at dc).
    """
    if not frequency >= 0:
        raise InvalidInputError(f"frequency must be non-negative, got {frequency!r}")
    return complex(model.frequency_response(frequency)[()])


def divider_ratio(divider: DividerModel) -> float:
    """
    The fraction of the input voltage that appears across the piezo element.
    """
    return 1.0 / (1.0 + divider.c_piezo / divider.c_series)


def max_output_rms(model: SensorModel) -> float:
    """
    The largest sinusoidal output (rms) that stays between the rails around the quiescent point.
    """
    headroom = min(model.v_quiescent - model.v_clip_low, model.v_clip_high - model.v_quiescent)
    return headroom / math.sqrt(2)


def saturation_input_rms(model: SensorModel, frequency: float) -> float:
    """
    The rms of a sinusoidal input at `frequency` whose output just reaches a rail (noise not included).
    """
    magnitude = abs(transfer_function(model, frequency))
    if magnitude == 0:
        return math.inf
    return max_output_rms(model) / magnitude


def implied_band_rms(noise: NoiseModel, model: SensorModel, f_lo: float, f_hi: float) -> float:
    """
    The output noise rms in [f_lo, f_hi] that the noise parameters imply: the integral of the broadband density plus
    the power of the spurs that fall into the band.
    """
    if not 0 <= f_lo < f_hi:
        raise InvalidInputError(f"expected 0 <= f_lo < f_hi, got {f_lo}, {f_hi}")

    breakpoints = [model.f_res] if f_lo < model.f_res < f_hi else None
    broadband, _ = integrate.quad(
        lambda f: float(noise.density(model, f)), f_lo, f_hi, points=breakpoints, limit=500
    )
    spurs = sum(rms**2 for frequency, rms in noise.spurs if f_lo <= frequency <= f_hi)
    return math.sqrt(broadband + spurs)


def synthesize_noise(
    noise: NoiseModel,
    model: SensorModel,
    duration: float,
    rate: float,
    seed: SeedType = 0,
) -> Waveform:
    """
    A zero-mean noise record whose averaged single-sided PSD follows `noise.density()` with the spurs on top.

    Gaussian white noise with the base density is shaped in the frequency domain by the resonance term, then every
    spur is added as a sinusoid of fixed amplitude and random phase. Spurs at or above the Nyquist frequency are
    skipped.
    """
    n_samples = int(round(duration * rate))
    if n_samples < 2:
        raise InvalidInputError(f"a noise record needs at least 2 samples, got {duration} s at {rate} Hz")

    rng = np.random.default_rng(seed)
    samples = np.zeros(n_samples)

    if noise.base_density > 0:
        white = rng.standard_normal(n_samples) * noise.base_density * math.sqrt(rate / 2)
        bins = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n_samples, d=1.0 / rate)
        bins *= np.sqrt(1 + noise.resonance_boost**2 * np.abs(model.resonance_response(freqs)) ** 2)
        bins[0] = 0
        samples += np.fft.irfft(bins, n=n_samples)

    phases = rng.uniform(0, 2 * math.pi, size=len(noise.spurs))
    t = np.arange(n_samples) / rate
    for (frequency, rms), phase in zip(noise.spurs, phases):
        if frequency >= rate / 2:
            logger.debug("skipping the %g Hz spur: it is above the Nyquist frequency of %g Hz", frequency, rate / 2)
            continue
        samples += rms * math.sqrt(2) * np.sin(2 * math.pi * frequency * t + phase)

    samples -= samples.mean()
    return Waveform(samples=samples, sample_rate=rate)


def simulate_output(
    model: SensorModel,
    v_in: Waveform,
    seed: SeedType = 0,
    include_noise: bool = True,
    settle_s: Union[float, None, Sentinel] = DEFAULT,
) -> SimulationResult:
    """
    The sensor output for a given input record.

    The input is extended backwards periodically by `settle_s` seconds (5 / f_corner by default, None for no
    extension), filtered by H in the frequency domain and trimmed back to the original window. Then the quiescent
    level and the noise are added and the result is clipped to the rails.
    """
    if v_in.sample_rate < 10 * model.f_res:
        raise AliasingRiskError(
            f"sample rate {v_in.sample_rate:g} Hz is below 10 x f_res = {10 * model.f_res:g} Hz"
        )
    if v_in.n_samples == 0:
        raise InvalidInputError("cannot simulate the response to an empty waveform")

    if settle_s is DEFAULT:
        settle_s = 5 / model.f_corner
    elif settle_s is not None and settle_s < 0:
        raise InvalidInputError(f"settle_s must be non-negative, got {settle_s}")
    n_settle = int(math.ceil((settle_s or 0.0) * v_in.sample_rate))
    n_samples = v_in.n_samples

    padded = np.take(v_in.samples, np.arange(-n_settle, n_samples), mode="wrap")
    spectrum = forward_transform(Waveform(samples=padded, sample_rate=v_in.sample_rate))
    response = model.frequency_response(spectrum.frequencies())
    if spectrum.n_bins % 2 == 0:
        # the Nyquist bin of a real record must stay real
        response[spectrum.n_bins // 2] = response[spectrum.n_bins // 2].real
    filtered = inverse_transform(Spectrum(bins=spectrum.bins * response, bin_spacing=spectrum.bin_spacing))

    output = model.v_quiescent + filtered.samples[n_settle:]
    if include_noise and not model.noise.is_silent:
        noise = synthesize_noise(model.noise, model, n_samples / v_in.sample_rate, v_in.sample_rate, seed)
        output = output + noise.samples

    saturated = bool(np.any(output < model.v_clip_low) or np.any(output > model.v_clip_high))
    if saturated:
        logger.debug("the simulated output of %d samples reaches a rail", n_samples)

    return SimulationResult(
        waveform=Waveform(
            samples=np.clip(output, model.v_clip_low, model.v_clip_high),
            sample_rate=v_in.sample_rate,
            t0=v_in.t0,
        ),
        saturated=saturated,
    )


def default_phase_model(phase: int) -> SensorModel:
    """
    The calibrated model of one of the three sensor phases (1, 2 or 3). Spur levels are non-normative.
    """
    base_densities = {1: 20.7e-6, 2: 23.0e-6, 3: 22.0e-6}
    if phase not in base_densities:
        raise InvalidInputError(f"there are three sensor phases (1, 2, 3), got {phase}")

    gain_flat = DEFAULT_GAIN_FLAT
    if phase == 1:
        gain_flat *= 10 ** (PHASE_1_GAIN_OFFSET_DB / 20)

    return SensorModel(
        gain_flat=gain_flat,
        noise=NoiseModel(base_density=base_densities[phase], spurs=DEFAULT_SPURS, resonance_boost=0.1),
    )


def resonant_phase2_model() -> SensorModel:
    """
    Phase 2 with the resonance of the measured unit: 2.08 kHz and a quality factor of 60, sharp enough for a 5 V rms
    drive at the resonance to reach the lower rail.
    """
    return default_phase_model(2).with_updates(f_res=RESONANT_PHASE2_F_RES, q_factor=RESONANT_PHASE2_Q)


BUILTIN_MODELS = ("default_phase1", "default_phase2", "default_phase3", "resonant_phase2")

_MODEL_KEYS = ("gain_flat", "f_corner", "f_res", "q_factor", "v_quiescent", "v_clip_low", "v_clip_high")
_NOISE_KEYS = ("base_density", "resonance_boost")


def builtin_model(name: str) -> SensorModel:
    if name not in BUILTIN_MODELS:
        raise ConfigError(f"unknown builtin model {name!r}, expected one of {', '.join(BUILTIN_MODELS)}")
    if name == "resonant_phase2":
        return resonant_phase2_model()
    return default_phase_model(int(name[-1]))


def parse_sensor_config(text: str, source: str = "<string>") -> SensorModel:
    """
    Parse the flat `key=value` sensor configuration format. Keys are the `SensorModel` field names plus
    `noise.base_density`, `noise.resonance_boost` and `noise.spurs` (`f1:rms1,f2:rms2,...`); `base=<builtin>` starts
    from one of the builtin models instead of the field defaults. Everything after `#` is a comment.
    """
    values: dict[str, str] = {}
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, separator, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not separator or not key:
            raise ConfigError(f"{source}:{line_number}: expected `key=value`, got {raw_line.strip()!r}")
        if key in values:
            raise ConfigError(f"{source}:{line_number}: duplicate key {key!r}")
        values[key] = value

    model = builtin_model(values.pop("base")) if "base" in values else SensorModel()
    model_changes: dict[str, float] = {}
    noise_changes: dict = {}
    try:
        for key, value in values.items():
            if key in _MODEL_KEYS:
                model_changes[key] = float(value)
            elif key.startswith("noise.") and key[len("noise.") :] in _NOISE_KEYS:
                noise_changes[key[len("noise.") :]] = float(value)
            elif key == "noise.spurs":
                noise_changes["spurs"] = _parse_spurs(value)
            else:
                raise ConfigError(f"{source}: unknown key {key!r}")

        noise = NoiseModel.model_validate({**model.noise.frozen_fields_and_values(), **noise_changes})
        return model.with_updates(noise=noise, **model_changes)
    except ValueError as exc:
        # pydantic.ValidationError is a ValueError as well
        raise ConfigError(f"{source}: {exc}") from exc


def _parse_spurs(value: str) -> tuple[tuple[float, float], ...]:
    spurs = []
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        frequency, separator, rms = item.partition(":")
        if not separator:
            raise ValueError(f"expected `frequency:rms` spur items, got {item!r}")
        spurs.append((float(frequency), float(rms)))
    return tuple(spurs)


def dump_sensor_config(model: SensorModel) -> str:
    """
    The `key=value` text of a model (`parse_sensor_config()` reads it back into an equal model).
    """
    lines = [f"{key}={getattr(model, key)!r}" for key in _MODEL_KEYS]
    lines.extend(f"noise.{key}={getattr(model.noise, key)!r}" for key in _NOISE_KEYS)
    lines.append("noise.spurs=" + ",".join(f"{frequency!r}:{rms!r}" for frequency, rms in model.noise.spurs))
    return "\n".join(lines) + "\n"


def load_sensor_config(path_or_builtin: Union[str, Path]) -> SensorModel:
    """
    Load a sensor model from a configuration file or by the name of a builtin model (`BUILTIN_MODELS`).
    """
    if str(path_or_builtin) in BUILTIN_MODELS:
        return builtin_model(str(path_or_builtin))

    path = Path(path_or_builtin)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read sensor configuration {str(path)!r}: {exc}") from exc
    return parse_sensor_config(text, source=str(path))

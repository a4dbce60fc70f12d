"""
Analyses of the transducer data: choice of the operating point on the displacement/power curve, linearity of the
response on a log-log scale and the resolution arithmetic of the displacement domain.
"""

import logging
import math
from typing import NamedTuple, Sequence

import numpy as np
from pydantic import model_validator
from scipy import stats

from optovolt.characterization import plan_entry
from optovolt.file_formats import PathLike, read_table_csv, write_table_csv
from optovolt.labkit.errors import InvalidInputError, RecordIOError
from optovolt.labkit.frozen import FloatArray, Frozen
from optovolt.optovolt_typing import RealArray
from optovolt.sensor_model import SensorModel, simulate_output
from optovolt.waveforms import forward_transform, sine_wave, value_at_frequency

logger = logging.getLogger(__name__)

CURVE_HEADER = ("displacement_um", "power_norm")
CURVE_SLOPE_HEADER = ("displacement_um", "power_norm", "slope_per_um")
PAIRS_HEADER = ("input_v", "output_v")
FIT_HEADER = ("slope", "slope_stderr", "intercept")

_TIE_TOLERANCE = 1e-9


class DisplacementCurve(Frozen):
    """
    Collected (normalised) optical power as a function of the probe/transducer separation in micrometers.
    """

    displacements: FloatArray
    powers: FloatArray

    @model_validator(mode="after")
    def _check_points(self) -> "DisplacementCurve":
        if self.displacements.size != self.powers.size:
            raise ValueError("displacements and powers must have the same length")
        if np.any(np.diff(self.displacements) <= 0):
            raise ValueError("displacements must be strictly increasing")
        if np.any(self.powers < 0):
            raise ValueError("optical powers cannot be negative")
        return self

    def __len__(self) -> int:
        return int(self.displacements.size)


class OperatingPoint(NamedTuple):
    displacement: float
    slope: float


class LinearityFit(Frozen):
    """
    A straight-line fit of `log10(output)` against `log10(input)`.
    """

    slope: float
    slope_stderr: float
    intercept: float

    @model_validator(mode="after")
    def _check_stderr(self) -> "LinearityFit":
        if not self.slope_stderr >= 0:
            raise ValueError(f"slope_stderr must be non-negative, got {self.slope_stderr}")
        return self


def central_slopes(curve: DisplacementCurve) -> RealArray:
    """
    Central-difference slopes at the interior points (NaN at both ends).
    """
    d, p = curve.displacements, curve.powers
    slopes = np.full(d.size, np.nan)
    if d.size >= 3:
        slopes[1:-1] = (p[2:] - p[:-2]) / (d[2:] - d[:-2])
    return slopes


def operating_point(curve: DisplacementCurve) -> OperatingPoint:
    """
    The midpoint of the segment with the steepest central-difference slope; ties go to the smallest displacement.
    """
    if len(curve) < 3:
        raise InvalidInputError(f"insufficient data: an operating point needs at least 3 points, got {len(curve)}")

    slopes = central_slopes(curve)[1:-1]
    magnitudes = np.abs(slopes)
    best = float(magnitudes.max())
    index = int(np.flatnonzero(magnitudes >= best * (1 - _TIE_TOLERANCE))[0])

    d = curve.displacements
    return OperatingPoint(displacement=float((d[index] + d[index + 2]) / 2), slope=float(slopes[index]))


def loglog_linearity(inputs: Sequence[float], outputs: Sequence[float]) -> LinearityFit:
    """
    Least-squares fit of `log10(outputs)` vs. `log10(inputs)`; the standard error of the slope comes from the
    residual variance.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(outputs, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("inputs and outputs must be one-dimensional and of the same length")
    if x.size < 3:
        raise InvalidInputError(f"a linearity fit needs at least 3 pairs, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidInputError("a log-log fit needs strictly positive inputs and outputs")

    result = stats.linregress(np.log10(x), np.log10(y))
    return LinearityFit(slope=result.slope, slope_stderr=result.stderr, intercept=result.intercept)


def displacement_dynamic_range(max_pp: float, min_detectable: float) -> float:
    """
    `20 * log10(max_pp / min_detectable)` in dB (any common unit).
    """
    if not (max_pp > 0 and min_detectable > 0):
        raise InvalidInputError(f"displacements must be positive, got {max_pp} and {min_detectable}")
    return 20 * math.log10(max_pp / min_detectable)


def resolution_fraction(max_pp: float, min_detectable: float) -> float:
    """
    The smallest detectable displacement as a percentage of the full scale.
    """
    if not (max_pp > 0 and min_detectable > 0):
        raise InvalidInputError(f"displacements must be positive, got {max_pp} and {min_detectable}")
    return 100 * min_detectable / max_pp


def reference_displacement_curve() -> DisplacementCurve:
    """
    A non-normative tabulated curve shaped like a measured probe response: a rise that is steepest at 280 um, a
    plateau near 500 um and a gentle decline beyond it (0 to 1000 um in 20 um steps).
    """
    d = np.arange(0.0, 1000.0 + 1e-9, 20.0)
    powers = 0.5 * (1 + np.tanh((d - 280.0) / 100.0)) * np.exp(-np.maximum(0.0, d - 500.0) / 3000.0)
    return DisplacementCurve(displacements=d, powers=powers)


def drive_amplitude_sweep(
    model: SensorModel,
    input_rms: Sequence[float],
    frequency: float = 100.0,
    seed: int = 0,
    include_noise: bool = False,
) -> tuple[RealArray, RealArray]:
    """
    Drive the model at `frequency` with every input level and measure the output rms at the drive frequency (the
    record is planned like a sweep entry, so the drive sits exactly on a bin).
    """
    entry = plan_entry(frequency, min_sample_rate=10 * model.f_res)
    outputs = []
    for index, rms in enumerate(input_rms):
        v_in = sine_wave(rms, entry.probe_freq, entry.sample_rate, entry.n_samples)
        result = simulate_output(model, v_in, seed=(seed, index), include_noise=include_noise, settle_s=None)
        if result.saturated:
            logger.warning("a %g V rms drive saturates the sensor", rms)
        bin_out = value_at_frequency(forward_transform(result.waveform), entry.probe_freq)
        outputs.append(abs(bin_out.value) * math.sqrt(2) / entry.n_samples)
    return np.asarray(input_rms, dtype=np.float64), np.asarray(outputs)


def read_curve_csv(path: PathLike) -> DisplacementCurve:
    columns, _ = read_table_csv(path, CURVE_HEADER)
    try:
        return DisplacementCurve(displacements=columns["displacement_um"], powers=columns["power_norm"])
    except ValueError as exc:
        raise RecordIOError(f"{str(path)!r}: not a valid displacement curve: {exc}") from exc


def write_curve_csv(curve: DisplacementCurve, path: PathLike) -> str:
    """
    Write a curve together with its central-difference slopes (plot data).
    """
    return write_table_csv(path, CURVE_SLOPE_HEADER, [curve.displacements, curve.powers, central_slopes(curve)])


def read_pairs_csv(path: PathLike) -> tuple[RealArray, RealArray]:
    columns, _ = read_table_csv(path, PAIRS_HEADER)
    return columns["input_v"], columns["output_v"]


def write_fit_csv(fit: LinearityFit, path: PathLike) -> str:
    return write_table_csv(path, FIT_HEADER, [[fit.slope], [fit.slope_stderr], [fit.intercept]])

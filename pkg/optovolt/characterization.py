"""
Swept-sine characterization: planning of the acquisitions, estimation of the response at every probe frequency
from paired input/output records and assembly of the averaged estimates into a Bode table.
"""

import asyncio
import logging
import math
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np
from pydantic import Field, model_validator

from optovolt.file_formats import (
    PathLike,
    read_table_csv,
    read_waveform_csv,
    write_table_csv,
    write_waveform_csv,
)
from optovolt.labkit.errors import (
    CoverageError,
    DivisionDegenerateError,
    InvalidInputError,
    PlanningError,
    RecordIOError,
)
from optovolt.labkit.frozen import ComplexArray, FloatArray, Frozen
from optovolt.labkit.lab import SensorLab
from optovolt.optovolt_typing import RealArray, TraceSource
from optovolt.sensor_model import SensorModel, simulate_output
from optovolt.waveforms import (
    FrequencyGrid,
    Waveform,
    ensure_compatible,
    forward_transform,
    sine_wave,
    value_at_frequency,
)

logger = logging.getLogger(__name__)

MIN_PERIODS = 28
TARGET_PERIODS = 50
MAX_PERIODS = 72
MIN_SAMPLES_PER_PERIOD = 35
DEFAULT_GRID = "1:10000:40"
BODE_HEADER = ("freq_hz", "mag_db", "phase_deg", "re", "im")
PLAN_HEADER = ("probe_freq_hz", "sample_rate_hz", "n_samples", "n_periods")
PLAN_FILE_NAME = "plan.csv"

_BIN_TOLERANCE = 1e-9


class SweepEntry(Frozen):
    """
    The acquisition settings of one probe frequency.
    """

    probe_freq: float = Field(gt=0)
    sample_rate: float = Field(gt=0)
    n_samples: int = Field(gt=0)
    n_periods: int = Field(gt=0)

    @property
    def samples_per_period(self) -> float:
        return self.sample_rate / self.probe_freq

    @model_validator(mode="after")
    def _check_protocol(self) -> "SweepEntry":
        if self.n_periods < MIN_PERIODS:
            raise ValueError(f"{self.n_periods} periods at {self.probe_freq} Hz, at least {MIN_PERIODS} are required")
        if self.samples_per_period < MIN_SAMPLES_PER_PERIOD * (1 - _BIN_TOLERANCE):
            raise ValueError(
                f"{self.samples_per_period:.4g} samples per period at {self.probe_freq} Hz, "
                f"at least {MIN_SAMPLES_PER_PERIOD} are required"
            )
        cycles = self.n_samples * self.probe_freq / self.sample_rate
        if abs(cycles - self.n_periods) > _BIN_TOLERANCE * max(cycles, 1.0):
            raise ValueError(
                f"{self.probe_freq} Hz does not sit on a bin of {self.n_samples} samples at {self.sample_rate} Hz "
                f"({cycles!r} periods instead of {self.n_periods})"
            )
        return self


class SweepPlan(Frozen):
    entries: tuple[SweepEntry, ...]
    n_averages: int = Field(default=16, ge=1)

    @model_validator(mode="after")
    def _check_order(self) -> "SweepPlan":
        freqs = [entry.probe_freq for entry in self.entries]
        if any(later <= earlier for earlier, later in zip(freqs, freqs[1:])):
            raise ValueError("sweep entries must have strictly increasing probe frequencies")
        return self


class BodeRow(NamedTuple):
    freq: float
    magnitude_db: float
    phase_deg: float
    complex_value: complex


class BodeTable(Frozen):
    """
    A frequency response on a grid of positive frequencies. The phase is unwrapped continuously across the rows (it
    may therefore leave the principal range), the magnitude is derived from the complex values.
    """

    freqs: FloatArray
    values: ComplexArray
    phase_deg: FloatArray

    @model_validator(mode="after")
    def _check_rows(self) -> "BodeTable":
        if not self.freqs.size == self.values.size == self.phase_deg.size:
            raise ValueError("freqs, values and phase_deg must have the same length")
        if self.freqs.size == 0:
            raise ValueError("a Bode table needs at least one row")
        if np.any(self.freqs <= 0) or np.any(np.diff(self.freqs) <= 0):
            raise ValueError("Bode table frequencies must be positive and strictly increasing")
        mismatch = np.abs(np.exp(1j * np.radians(self.phase_deg)) - np.exp(1j * np.angle(self.values)))
        if np.any(mismatch[self.values != 0] > 1e-6):
            raise ValueError("phase_deg does not agree with the phase of the complex values")
        return self

    @classmethod
    def from_values(cls, freqs: Sequence[float], values: Sequence[complex]) -> "BodeTable":
        """
        Build a table from complex response values; the phase is unwrapped starting from its principal value at the
        first row.
        """
        values = np.asarray(values, dtype=np.complex128)
        return cls(freqs=freqs, values=values, phase_deg=np.degrees(np.unwrap(np.angle(values))))

    @property
    def magnitude(self) -> RealArray:
        return np.abs(self.values)

    @property
    def magnitude_db(self) -> RealArray:
        with np.errstate(divide="ignore"):
            return 20 * np.log10(self.magnitude)

    def __len__(self) -> int:
        return int(self.freqs.size)

    def rows(self) -> Iterator[BodeRow]:
        for freq, magnitude_db, phase_deg, value in zip(self.freqs, self.magnitude_db, self.phase_deg, self.values):
            yield BodeRow(float(freq), float(magnitude_db), float(phase_deg), complex(value))


class SweepPoint(Frozen):
    """
    The averaged response estimate at one entry of a sweep plan.
    """

    entry_index: int
    probe_freq: float
    value: complex
    n_traces: int


class SyntheticSource:
    """
    Traces produced by driving a sensor model with a sine of `drive_rms` on top of `drive_offset`. All the traces of
    an entry share the generator phase; the output noise of every trace is seeded from `(seed, entry, trace)`.
    """

    def __init__(
        self,
        model: SensorModel,
        drive_rms: float = 2.0,
        drive_offset: float = 0.0,
        seed: int = 0,
        include_noise: bool = True,
    ) -> None:
        self.model = model
        self.drive_rms = drive_rms
        self.drive_offset = drive_offset
        self.seed = seed
        self.include_noise = include_noise

    def load_trace(self, entry_index: int, entry: SweepEntry, trace_index: int) -> tuple[Waveform, Waveform]:
        v_in = sine_wave(
            self.drive_rms, entry.probe_freq, entry.sample_rate, entry.n_samples, offset=self.drive_offset
        )
        # records hold a whole number of periods, so they are already in steady state
        result = simulate_output(
            self.model,
            v_in,
            seed=(self.seed, entry_index, trace_index),
            include_noise=self.include_noise,
            settle_s=None,
        )
        if result.saturated:
            logger.warning("trace %d at %g Hz saturates the sensor", trace_index, entry.probe_freq)
        return v_in, result.waveform


class RecordedSource:
    """
    Traces read from a directory written by `export_sweep_records()` (or by an acquisition system that follows the
    same naming: `pNNN_tMM_in.csv` / `pNNN_tMM_out.csv` for entry NNN and trace MM).
    """

    def __init__(self, directory: PathLike) -> None:
        self.directory = Path(directory)

    def load_trace(self, entry_index: int, entry: SweepEntry, trace_index: int) -> tuple[Waveform, Waveform]:
        in_path, out_path = trace_paths(self.directory, entry_index, trace_index)
        records = []
        for path in (in_path, out_path):
            try:
                record = read_waveform_csv(path)
            except RecordIOError as exc:
                raise RecordIOError(f"trace {trace_index} at {entry.probe_freq:g} Hz: {exc}") from exc
            if record.sample_rate != entry.sample_rate or record.n_samples != entry.n_samples:
                raise RecordIOError(
                    f"trace {trace_index} at {entry.probe_freq:g} Hz: {str(path)!r} holds {record.n_samples} samples "
                    f"at {record.sample_rate:g} Hz, the plan expects {entry.n_samples} at {entry.sample_rate:g} Hz"
                )
            records.append(record)
        return records[0], records[1]


def trace_paths(directory: PathLike, entry_index: int, trace_index: int) -> tuple[Path, Path]:
    stem = f"p{entry_index:03d}_t{trace_index:02d}"
    return Path(directory) / f"{stem}_in.csv", Path(directory) / f"{stem}_out.csv"


def log_grid(start: float, stop: float, per_decade: float) -> RealArray:
    """
    Logarithmically spaced frequencies from `start` to `stop` (both included), `per_decade` points per decade.
    """
    if not 0 < start < stop or per_decade <= 0:
        raise InvalidInputError(f"expected 0 < start < stop and per_decade > 0, got {start}, {stop}, {per_decade}")
    n_points = max(2, int(round(per_decade * math.log10(stop / start))) + 1)
    return np.logspace(math.log10(start), math.log10(stop), n_points)


def parse_grid(spec: str) -> FrequencyGrid:
    """
    Parse a grid specification `start:stop:per_decade[,start:stop:per_decade...]` into a frequency grid. Segments
    may overlap; frequencies closer than one part in 1e9 are merged.
    """
    segments = []
    for segment in spec.split(","):
        parts = segment.strip().split(":")
        try:
            if len(parts) != 3:
                raise ValueError(f"expected `start:stop:per_decade`, got {segment.strip()!r}")
            segments.append(log_grid(*(float(part) for part in parts)))
        except ValueError as exc:
            raise InvalidInputError(f"bad grid specification {spec!r}: {exc}") from exc

    freqs = np.sort(np.concatenate(segments))
    keep = np.concatenate([[True], np.diff(freqs) > _BIN_TOLERANCE * freqs[1:]])
    return FrequencyGrid(frequencies=freqs[keep])


def _rate_for(required: float, max_sample_rate: float) -> float:
    """
    The smallest rate of the 1-2-5 series (starting at 1 S/s) that is not below `required`.
    """
    exponent = max(0, int(math.floor(math.log10(max(required, 1.0)))))
    while True:
        for mantissa in (1, 2, 5):
            rate = float(mantissa * 10**exponent)
            if rate >= required * (1 - _BIN_TOLERANCE):
                if rate > max_sample_rate:
                    raise PlanningError(
                        f"a rate of {required:g} S/s is needed but max_sample_rate is {max_sample_rate:g} S/s"
                    )
                return rate
        exponent += 1


def _period_candidates() -> Iterator[int]:
    yield TARGET_PERIODS
    for offset in range(1, max(TARGET_PERIODS - MIN_PERIODS, MAX_PERIODS - TARGET_PERIODS) + 1):
        for candidate in (TARGET_PERIODS - offset, TARGET_PERIODS + offset):
            if MIN_PERIODS <= candidate <= MAX_PERIODS:
                yield candidate


def plan_entry(
    frequency: float,
    min_sample_rate: float = 0.0,
    max_sample_rate: float = 1e9,
    max_samples: int = 50_000_000,
) -> SweepEntry:
    """
    The acquisition settings for one probe frequency: the rate is the smallest 1-2-5 value that gives at least 35
    samples per period (and is not below `min_sample_rate`), the record holds as close to 50 periods as possible
    while the probe frequency falls exactly on a bin. If no period count between 28 and 72 achieves that, the
    probe frequency is moved to the bin closest to 50 periods.
    """
    if not (math.isfinite(frequency) and frequency > 0):
        raise PlanningError(f"probe frequencies must be positive and finite, got {frequency!r}")

    rate = _rate_for(max(MIN_SAMPLES_PER_PERIOD * frequency, min_sample_rate), max_sample_rate)

    for n_periods in _period_candidates():
        exact = n_periods * rate / frequency
        n_samples = int(round(exact))
        if abs(exact - n_samples) <= _BIN_TOLERANCE * exact:
            break
    else:
        n_periods = TARGET_PERIODS
        n_samples = int(round(n_periods * rate / frequency))
        snapped = n_periods * rate / n_samples
        logger.debug("probe frequency %r Hz snapped to the bin at %r Hz", frequency, snapped)
        frequency = snapped

    if n_samples > max_samples:
        raise PlanningError(
            f"{frequency:g} Hz needs {n_samples} samples per record, more than max_samples={max_samples}"
        )
    return SweepEntry(probe_freq=frequency, sample_rate=rate, n_samples=n_samples, n_periods=n_periods)


def plan_sweep(
    freqs: Union[FrequencyGrid, Sequence[float]],
    n_averages: int = 16,
    min_sample_rate: float = 0.0,
    max_sample_rate: float = 1e9,
    max_samples: int = 50_000_000,
) -> SweepPlan:
    """
    Plan the acquisitions of a swept-sine characterization (see `plan_entry()`). Probe frequencies that end up on
    the same bin after snapping are planned only once.

    :param freqs: The probe frequencies.
    :param n_averages: How many traces are recorded (and averaged) at every probe frequency.
    :param min_sample_rate: The lowest acceptable sample rate (e.g. ten times the resonance of a simulated sensor).
    :param max_sample_rate: The highest sample rate the acquisition supports.
    :param max_samples: The longest record the acquisition supports.
    """
    if not isinstance(freqs, FrequencyGrid):
        freqs = FrequencyGrid(frequencies=freqs)
    if n_averages < 1:
        raise PlanningError(f"at least one trace per probe frequency is needed, got n_averages={n_averages}")

    entries: list[SweepEntry] = []
    for frequency in freqs.frequencies:
        entry = plan_entry(
            float(frequency),
            min_sample_rate=min_sample_rate,
            max_sample_rate=max_sample_rate,
            max_samples=max_samples,
        )
        if entries and entry.probe_freq <= entries[-1].probe_freq:
            logger.debug("dropping %g Hz: it lands on the already planned %g Hz", frequency, entries[-1].probe_freq)
            continue
        entries.append(entry)

    return SweepPlan(entries=tuple(entries), n_averages=n_averages)


def estimate_response_point(v_in: Waveform, v_out: Waveform, probe_freq: float) -> complex:
    """
    The ratio of the output and input spectra at the bin of the probe frequency. The input channel defines the zero
    of the phase.
    """
    ensure_compatible(v_in, v_out)
    bin_in = value_at_frequency(forward_transform(v_in), probe_freq)
    bin_out = value_at_frequency(forward_transform(v_out), probe_freq)

    floor = 1e-6 * v_in.n_samples * float(np.max(np.abs(v_in.samples)))
    if not abs(bin_in.value) > floor:
        raise DivisionDegenerateError(
            f"the input has no content at {probe_freq:g} Hz (|V_in| = {abs(bin_in.value):.3g}, floor {floor:.3g})"
        )
    if abs(bin_in.frequency - probe_freq) > _BIN_TOLERANCE * probe_freq:
        logger.debug("probe frequency %r Hz read from the bin at %r Hz", probe_freq, bin_in.frequency)
    return bin_out.value / bin_in.value


def _estimate_entry(source: TraceSource, entry_index: int, entry: SweepEntry, n_averages: int) -> complex:
    estimates = [
        estimate_response_point(*source.load_trace(entry_index, entry, trace_index), entry.probe_freq)
        for trace_index in range(n_averages)
    ]
    # complex mean: the traces are synchronised, uncorrelated noise averages out
    return complex(np.mean(estimates))


def as_trace_source(model_or_data: Union[SensorModel, PathLike, TraceSource]) -> TraceSource:
    if isinstance(model_or_data, SensorModel):
        return SyntheticSource(model_or_data)
    if isinstance(model_or_data, (str, Path)):
        return RecordedSource(model_or_data)
    return model_or_data


async def arun_sweep(model_or_data: Union[SensorModel, PathLike, TraceSource], plan: SweepPlan) -> BodeTable:
    """
    Estimate the response at every entry of the plan and assemble the Bode table. The entries are evaluated
    concurrently on the current `SensorLab` (in worker threads); `on_point_estimated` handlers of the lab are
    scheduled as the points become available.
    """
    source = as_trace_source(model_or_data)
    lab = SensorLab.get_current()

    async def estimate_point(entry_index: int, entry: SweepEntry) -> SweepPoint:
        value = await lab.ato_thread(_estimate_entry, source, entry_index, entry, plan.n_averages)
        point = SweepPoint(entry_index=entry_index, probe_freq=entry.probe_freq, value=value, n_traces=plan.n_averages)
        lab.trigger_point_estimated(point)
        return point

    tasks = [lab.start_asap(estimate_point(index, entry)) for index, entry in enumerate(plan.entries)]
    try:
        points = await asyncio.gather(*tasks)
    except BaseException:
        for task in tasks:
            task.cancel()
        raise

    return BodeTable.from_values([point.probe_freq for point in points], [point.value for point in points])


def run_sweep(
    model_or_data: Union[SensorModel, PathLike, TraceSource],
    plan: SweepPlan,
    lab: Optional[SensorLab] = None,
) -> BodeTable:
    """
    Blocking version of `arun_sweep()` (runs its own event loop in a fresh or the given lab).
    """
    return (lab or SensorLab()).run(arun_sweep(model_or_data, plan))


def tabulate_response(model: SensorModel, freqs: Union[FrequencyGrid, Sequence[float]]) -> BodeTable:
    """
    The exact Bode table of a sensor model.
    """
    if isinstance(freqs, FrequencyGrid):
        freqs = freqs.frequencies
    return BodeTable.from_values(freqs, model.frequency_response(freqs))


def flat_level_db(table: BodeTable, flat_band: tuple[float, float] = (20.0, 500.0)) -> float:
    """
    The median magnitude (dB) of the rows within `flat_band`.
    """
    in_band = (table.freqs >= flat_band[0]) & (table.freqs <= flat_band[1])
    if not np.any(in_band):
        raise CoverageError(f"the Bode table has no rows between {flat_band[0]:g} and {flat_band[1]:g} Hz")
    return float(np.median(table.magnitude_db[in_band]))


def effective_bandwidth(
    table: BodeTable,
    flat_band: tuple[float, float] = (20.0, 500.0),
    tolerance_db: float = 0.2,
) -> tuple[float, float]:
    """
    The contiguous band around the flat region in which the magnitude stays at or above the flat level less
    `tolerance_db`. Edges are interpolated linearly in (log f, dB); an edge that is not reached within the table is
    reported as the table boundary.
    """
    threshold = flat_level_db(table, flat_band) - tolerance_db
    magnitude_db = table.magnitude_db
    log_freqs = np.log10(table.freqs)

    center = int(np.argmin(np.abs(log_freqs - (math.log10(flat_band[0]) + math.log10(flat_band[1])) / 2)))
    if magnitude_db[center] < threshold:
        raise CoverageError(f"the magnitude at {table.freqs[center]:g} Hz is below the flat level")

    def crossing(inside: int, outside: int) -> float:
        fraction = (magnitude_db[inside] - threshold) / (magnitude_db[inside] - magnitude_db[outside])
        return float(10 ** (log_freqs[inside] + fraction * (log_freqs[outside] - log_freqs[inside])))

    low = center
    while low > 0 and magnitude_db[low - 1] >= threshold:
        low -= 1
    f_low = crossing(low, low - 1) if low > 0 else float(table.freqs[0])

    high = center
    while high < len(table) - 1 and magnitude_db[high + 1] >= threshold:
        high += 1
    f_high = crossing(high, high + 1) if high < len(table) - 1 else float(table.freqs[-1])

    return f_low, f_high


def resonance_peak(table: BodeTable, flat_band: tuple[float, float] = (20.0, 500.0)) -> tuple[float, float]:
    """
    The frequency of the highest row and its height above the flat level (dB).
    """
    index = int(np.argmax(table.magnitude))
    return float(table.freqs[index]), float(table.magnitude_db[index] - flat_level_db(table, flat_band))


def write_bode_csv(table: BodeTable, path: PathLike) -> str:
    return write_table_csv(
        path,
        BODE_HEADER,
        [table.freqs, table.magnitude_db, table.phase_deg, table.values.real, table.values.imag],
    )


def read_bode_csv(path: PathLike) -> BodeTable:
    """
    Read a Bode table. The complex values are taken from the `re`/`im` columns, the phase column must agree with
    them (it carries the unwrapping).
    """
    columns, _ = read_table_csv(path, BODE_HEADER)
    try:
        return BodeTable(
            freqs=columns["freq_hz"],
            values=columns["re"] + 1j * columns["im"],
            phase_deg=columns["phase_deg"],
        )
    except ValueError as exc:
        raise RecordIOError(f"{str(path)!r}: not a valid Bode table: {exc}") from exc


def write_sweep_plan_csv(plan: SweepPlan, path: PathLike) -> str:
    return write_table_csv(
        path,
        PLAN_HEADER,
        [
            [entry.probe_freq for entry in plan.entries],
            [entry.sample_rate for entry in plan.entries],
            np.array([entry.n_samples for entry in plan.entries], dtype=np.int64),
            np.array([entry.n_periods for entry in plan.entries], dtype=np.int64),
        ],
        metadata={"n_averages": plan.n_averages},
    )


def read_sweep_plan_csv(path: PathLike) -> SweepPlan:
    columns, metadata = read_table_csv(path, PLAN_HEADER)
    try:
        return SweepPlan(
            entries=tuple(
                SweepEntry(
                    probe_freq=probe_freq,
                    sample_rate=sample_rate,
                    n_samples=int(n_samples),
                    n_periods=int(n_periods),
                )
                for probe_freq, sample_rate, n_samples, n_periods in zip(*(columns[name] for name in PLAN_HEADER))
            ),
            n_averages=int(metadata.get("n_averages", "1")),
        )
    except ValueError as exc:
        raise RecordIOError(f"{str(path)!r}: not a valid sweep plan: {exc}") from exc


def export_sweep_records(source: TraceSource, plan: SweepPlan, directory: PathLike) -> Path:
    """
    Write every trace of the plan (and the plan itself) into a directory that `RecordedSource` can read.
    """
    directory = Path(directory)
    write_sweep_plan_csv(plan, directory / PLAN_FILE_NAME)
    for entry_index, entry in enumerate(plan.entries):
        for trace_index in range(plan.n_averages):
            v_in, v_out = source.load_trace(entry_index, entry, trace_index)
            in_path, out_path = trace_paths(directory, entry_index, trace_index)
            write_waveform_csv(v_in, in_path)
            write_waveform_csv(v_out, out_path)
    return directory

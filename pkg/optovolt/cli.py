"""
The `optovolt` command line: one subcommand per workflow (simulate, characterize, noise, equalize, transducer).
Every subcommand writes tidy CSV files and, on failure, prints exactly one line
`error category=<category> exit=<code> message=<text>` to stderr.
"""

import logging
import sys
from pathlib import Path
from typing import Any, ClassVar, Literal, Optional, Sequence

import click
from pydantic import ValidationError, model_validator

from optovolt.characterization import (
    DEFAULT_GRID,
    PLAN_FILE_NAME,
    RecordedSource,
    SweepPoint,
    SyntheticSource,
    export_sweep_records,
    log_grid,
    parse_grid,
    plan_sweep,
    read_bode_csv,
    read_sweep_plan_csv,
    run_sweep,
    tabulate_response,
    write_bode_csv,
)
from optovolt.equalizer import ApodizationSpec, reconstruct, write_metrics_csv
from optovolt.file_formats import read_waveform_csv, write_waveform_csv
from optovolt.labkit import errors
from optovolt.labkit.errors import NotPulseLikeError, OptovoltError, RecordIOError
from optovolt.labkit.frozen import Frozen
from optovolt.labkit.lab import SensorLab
from optovolt.labkit.sentinels import DEFAULT
from optovolt.noise_analysis import (
    PRESETS,
    acquire_noise_segments,
    averaged_periodogram,
    band_rms,
    format_sensitivity_report,
    record_noise_segments,
    sensitivity_report,
    write_psd_csv,
    write_sensitivity_csv,
)
from optovolt.sensor_model import load_sensor_config, max_output_rms, simulate_output
from optovolt.transducer import (
    displacement_dynamic_range,
    loglog_linearity,
    operating_point,
    read_curve_csv,
    read_pairs_csv,
    reference_displacement_curve,
    resolution_fraction,
    write_curve_csv,
    write_fit_csv,
)
from optovolt.waveforms import sine_wave, square_pulse

logger = logging.getLogger(__name__)

USAGE_EXIT_CODE = 2
REFERENCE_CURVE = "reference"


def _exit_code_table() -> str:
    error_classes = sorted(
        (cls for cls in vars(errors).values() if isinstance(cls, type) and issubclass(cls, OptovoltError)),
        key=lambda cls: cls.exit_code,
    )
    rows = [f"{USAGE_EXIT_CODE}  usage"] + [f"{cls.exit_code}  {cls.category}" for cls in error_classes]
    return "\b\nExit codes:\n0  success\n" + "\n".join(rows)


class RunConfig(Frozen):
    """
    The validated configuration of one subcommand. Subclasses declare their options as fields, the files they read
    (which are checked before anything runs) and what they do.
    """

    subcommand: ClassVar[str] = ""

    seed: int = 0

    def input_paths(self) -> list[str]:
        return []

    def preflight(self) -> None:
        for path in self.input_paths():
            if not Path(path).exists():
                raise RecordIOError(f"{self.subcommand}: {path!r} does not exist")

    def execute(self) -> None:
        raise NotImplementedError


def _wrote(path: Path, fingerprint: str) -> None:
    logger.info("wrote %s (sha256 %s)", path, fingerprint)


class SimulateConfig(RunConfig):
    subcommand: ClassVar[str] = "simulate"

    model: str = "default_phase2"
    pulse: Optional[tuple[float, float]] = None
    sine: Optional[tuple[float, float]] = None
    duration: float = 1.0
    padding: Optional[float] = None
    rate: float = 25_000.0
    noise: bool = True
    out_dir: str = "."

    @model_validator(mode="after")
    def _check_drive(self) -> "SimulateConfig":
        if (self.pulse is None) == (self.sine is None):
            raise ValueError("exactly one of --pulse and --sine is required")
        return self

    def execute(self) -> None:
        model = load_sensor_config(self.model)
        if self.pulse is not None:
            amplitude, width = self.pulse
            kwargs = {} if self.padding is None else {"padding": self.padding}
            v_in = square_pulse(amplitude, width, self.rate, **kwargs)
        else:
            rms, frequency = self.sine
            v_in = sine_wave(rms, frequency, self.rate, int(round(self.duration * self.rate)))

        result = simulate_output(model, v_in, seed=self.seed, include_noise=self.noise)
        if result.saturated:
            logger.warning("the simulated output saturates")

        out_dir = Path(self.out_dir)
        _wrote(out_dir / "in.csv", write_waveform_csv(v_in, out_dir / "in.csv"))
        _wrote(out_dir / "out.csv", write_waveform_csv(result.waveform, out_dir / "out.csv"))


class CharacterizeConfig(RunConfig):
    subcommand: ClassVar[str] = "characterize"

    model: Optional[str] = None
    data: Optional[str] = None
    grid: str = DEFAULT_GRID
    averages: int = 16
    drive_rms: float = 2.0
    noise: bool = True
    max_workers: Optional[int] = None
    export_records: Optional[str] = None
    out: str

    @model_validator(mode="after")
    def _check_source(self) -> "CharacterizeConfig":
        if (self.model is None) == (self.data is None):
            raise ValueError("exactly one of --model and --data is required")
        if self.export_records is not None and self.model is None:
            raise ValueError("--export-records needs --model")
        return self

    def input_paths(self) -> list[str]:
        if self.data is not None:
            return [self.data, str(Path(self.data) / PLAN_FILE_NAME)]
        return []

    def execute(self) -> None:
        if self.model is not None:
            model = load_sensor_config(self.model)
            plan = plan_sweep(parse_grid(self.grid), n_averages=self.averages, min_sample_rate=10 * model.f_res)
            source = SyntheticSource(model, drive_rms=self.drive_rms, seed=self.seed, include_noise=self.noise)
            if self.export_records is not None:
                export_sweep_records(source, plan, self.export_records)
                logger.info("exported the sweep records to %s", self.export_records)
        else:
            plan = read_sweep_plan_csv(Path(self.data) / PLAN_FILE_NAME)
            source = RecordedSource(self.data)

        lab = SensorLab(max_workers=self.max_workers)

        @lab.on_point_estimated
        async def log_point(point: SweepPoint) -> None:
            logger.debug("%g Hz: %r", point.probe_freq, point.value)

        table = run_sweep(source, plan, lab=lab)
        _wrote(Path(self.out), write_bode_csv(table, self.out))


class NoiseConfig(RunConfig):
    subcommand: ClassVar[str] = "noise"

    input: Optional[str] = None
    model: Optional[str] = None
    segments: int = 128
    segment_duration: float = 1.0
    rate: float = 25_000.0
    preset: Optional[Literal["wideband", "narrowband"]] = None
    band: Optional[tuple[float, float]] = None
    taper: Optional[str] = None
    response: Optional[str] = None
    freqs: Optional[tuple[float, ...]] = None
    reference_freq: float = 60.0
    out: str
    report: Optional[str] = None

    @model_validator(mode="after")
    def _check_source(self) -> "NoiseConfig":
        if (self.model is None) == (self.input is None):
            raise ValueError("exactly one of --model and --input is required")
        if self.preset is not None and self.model is None:
            raise ValueError("--preset needs --model")
        return self

    def input_paths(self) -> list[str]:
        return [path for path in (self.input, self.response) if path is not None]

    def execute(self) -> None:
        model = None
        if self.model is not None:
            model = load_sensor_config(self.model)
            if self.preset is not None:
                segments = acquire_noise_segments(model, self.preset, self.segments, self.segment_duration, self.seed)
            else:
                segments = record_noise_segments(model, self.segments, self.segment_duration, self.rate, self.seed)
        else:
            files = sorted(Path(self.input).glob("*.csv"))
            if not files:
                raise RecordIOError(f"{self.input!r} holds no waveform records")
            segments = [read_waveform_csv(path) for path in files]

        band = self.band
        if band is None:
            band = PRESETS[self.preset].band if self.preset is not None else (10.0, 3000.0)

        psd = averaged_periodogram(segments, taper=self.taper)
        _wrote(Path(self.out), write_psd_csv(psd, self.out))
        click.echo(f"band_rms_v={band_rms(psd, *band)!r}")

        if self.response is not None:
            response = read_bode_csv(self.response)
        elif model is not None:
            response = tabulate_response(model, log_grid(1.0, 10_000.0, 40))
        else:
            return

        report = sensitivity_report(
            psd,
            response,
            band=band,
            freqs=self.freqs,
            max_output=max_output_rms(model) if model is not None else DEFAULT,
            reference_freq=self.reference_freq,
        )
        click.echo(format_sensitivity_report(report), nl=False)
        if self.report is not None:
            _wrote(Path(self.report), write_sensitivity_csv(report, self.report))


class EqualizeConfig(RunConfig):
    subcommand: ClassVar[str] = "equalize"

    input: str
    response: str
    flow: float = 10.0
    fhigh: float = 4000.0
    notches: tuple[tuple[float, float], ...] = ()
    low_shape: Literal["sine", "rectangular"] = "sine"
    high_shape: Literal["cosine", "rectangular"] = "cosine"
    reference: Optional[str] = None
    out: str
    metrics: Optional[str] = None

    def input_paths(self) -> list[str]:
        return [path for path in (self.input, self.response, self.reference) if path is not None]

    def execute(self) -> None:
        spec = ApodizationSpec(
            f_low=self.flow,
            f_high=self.fhigh,
            notches=self.notches,
            low_shape=self.low_shape,
            high_shape=self.high_shape,
        )
        v_out = read_waveform_csv(self.input)
        reference = read_waveform_csv(self.reference) if self.reference is not None else None
        result = reconstruct(v_out, read_bode_csv(self.response), spec, reference=reference)

        _wrote(Path(self.out), write_waveform_csv(result.estimate, self.out))
        if self.metrics is not None:
            if result.metrics is None:
                raise NotPulseLikeError("the estimate holds no pulse, there are no metrics to write")
            _wrote(Path(self.metrics), write_metrics_csv(result.metrics, self.metrics))


class TransducerConfig(RunConfig):
    subcommand: ClassVar[str] = "transducer"

    curve: Optional[str] = None
    linearity: Optional[str] = None
    displacement_range: Optional[tuple[float, float]] = None
    out: Optional[str] = None
    fit_out: Optional[str] = None

    @model_validator(mode="after")
    def _check_analysis(self) -> "TransducerConfig":
        if self.curve is None and self.linearity is None and self.displacement_range is None:
            raise ValueError("at least one of --curve, --linearity and --range is required")
        if self.out is not None and self.curve is None:
            raise ValueError("--out needs --curve")
        if self.fit_out is not None and self.linearity is None:
            raise ValueError("--fit-out needs --linearity")
        return self

    def input_paths(self) -> list[str]:
        paths = [self.linearity] if self.linearity is not None else []
        if self.curve is not None and self.curve != REFERENCE_CURVE:
            paths.append(self.curve)
        return paths

    def execute(self) -> None:
        if self.curve is not None:
            curve = reference_displacement_curve() if self.curve == REFERENCE_CURVE else read_curve_csv(self.curve)
            point = operating_point(curve)
            click.echo(f"operating_point_um={point.displacement!r} slope_per_um={point.slope!r}")
            if self.out is not None:
                _wrote(Path(self.out), write_curve_csv(curve, self.out))

        if self.linearity is not None:
            fit = loglog_linearity(*read_pairs_csv(self.linearity))
            click.echo(f"slope={fit.slope!r} slope_stderr={fit.slope_stderr!r} intercept={fit.intercept!r}")
            if self.fit_out is not None:
                _wrote(Path(self.fit_out), write_fit_csv(fit, self.fit_out))

        if self.displacement_range is not None:
            max_pp, min_detectable = self.displacement_range
            click.echo(
                f"dynamic_range_db={displacement_dynamic_range(max_pp, min_detectable)!r} "
                f"resolution_pct={resolution_fraction(max_pp, min_detectable)!r}"
            )


def _failure_line(category: str, exit_code: int, message: Any) -> str:
    text = " ".join(str(message).split())
    return f"error category={category} exit={exit_code} message={text}"


def run(config: RunConfig) -> int:
    """
    Execute a subcommand and return its exit status (0 on success, the code of the error category otherwise).
    """
    try:
        config.preflight()
        config.execute()
    except OptovoltError as exc:
        logger.debug("%s failed", config.subcommand, exc_info=True)
        click.echo(_failure_line(exc.category, exc.exit_code, exc), err=True)
        return exc.exit_code
    except Exception as exc:  # pylint: disable=broad-except
        logger.debug("%s failed", config.subcommand, exc_info=True)
        click.echo(_failure_line(OptovoltError.category, OptovoltError.exit_code, exc), err=True)
        return OptovoltError.exit_code
    return 0


def _run_command(config_class: type, **options) -> None:
    try:
        config = config_class(**options)
    except ValidationError as exc:
        messages = "; ".join(error["msg"] for error in exc.errors())
        raise click.UsageError(messages) from exc
    click.get_current_context().exit(run(config))


def _pair(_ctx: click.Context, param: click.Parameter, value: Any) -> Any:
    """
    Parse `a:b` option values (a tuple of them for options that can be repeated).
    """
    if value is None:
        return None
    if isinstance(value, tuple):
        return tuple(_pair(_ctx, param, item) for item in value)
    first, separator, second = value.partition(":")
    try:
        if not separator:
            raise ValueError(value)
        return float(first), float(second)
    except ValueError as exc:
        raise click.BadParameter(f"expected `number:number`, got {value!r}", param=param) from exc


def _float_list(_ctx: click.Context, param: click.Parameter, value: Optional[str]) -> Optional[tuple[float, ...]]:
    if value is None:
        return None
    try:
        return tuple(float(item) for item in value.split(",") if item.strip())
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}", param=param) from exc


@click.group(epilog=_exit_code_table(), context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="WARNING",
    show_default=True,
    help="Verbosity of the log written to stderr.",
)
def cli(log_level: str) -> None:
    """
    Characterize, simulate and equalize intensity-modulated optical voltage sensors.
    """
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command(epilog=_exit_code_table())
@click.option("--model", default="default_phase2", show_default=True, help="Builtin model name or config file.")
@click.option("--pulse", callback=_pair, help="Centered square pulse AMPLITUDE_V:DURATION_S.")
@click.option("--sine", callback=_pair, help="Sine drive RMS_V:FREQUENCY_HZ.")
@click.option("--duration", type=float, default=1.0, show_default=True, help="Record length of a sine drive (s).")
@click.option(
    "--padding",
    type=float,
    help="Zero padding on each side of the pulse (s) [default: one pulse width, at least 10 ms].",
)
@click.option("--rate", type=float, default=25_000.0, show_default=True, help="Sample rate (Hz).")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the output noise.")
@click.option("--noise/--no-noise", default=True, show_default=True, help="Add the calibrated output noise.")
@click.option(
    "--out-dir", type=click.Path(file_okay=False), default=".", show_default=True, help="Where in.csv and out.csv go."
)
def simulate(**options) -> None:
    """
    Drive a sensor model and write the input and output waveforms.
    """
    _run_command(SimulateConfig, **options)


@cli.command(epilog=_exit_code_table())
@click.option("--model", help="Builtin model name or config file (synthetic sweep).")
@click.option("--data", type=click.Path(), help="Directory of recorded traces with a plan.csv.")
@click.option("--grid", default=DEFAULT_GRID, show_default=True, help="START:STOP:PER_DECADE[,...] (Hz).")
@click.option("--averages", type=int, default=16, show_default=True, help="Traces per probe frequency.")
@click.option("--drive-rms", type=float, default=2.0, show_default=True, help="Synthetic drive level (V rms).")
@click.option("--noise/--no-noise", default=True, show_default=True, help="Synthetic output noise.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the synthetic noise.")
@click.option("--max-workers", type=int, help="Probe frequencies evaluated at once [default: CPU count].")
@click.option("--export-records", type=click.Path(file_okay=False), help="Also write the synthetic traces here.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Bode table CSV.")
def characterize(**options) -> None:
    """
    Measure a frequency response by a swept sine and write the Bode table.
    """
    _run_command(CharacterizeConfig, **options)


@cli.command(epilog=_exit_code_table())
@click.option("--input", type=click.Path(), help="Directory of waveform segments (*.csv).")
@click.option("--model", help="Builtin model name or config file (synthetic no-input output).")
@click.option("--segments", type=int, default=128, show_default=True, help="Number of averaged periodograms.")
@click.option("--segment-duration", type=float, default=1.0, show_default=True, help="Segment length (s).")
@click.option("--rate", type=float, default=25_000.0, show_default=True, help="Sample rate without a preset (Hz).")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), help="Anti-aliasing acquisition preset.")
@click.option("--band", callback=_pair, help="F_LO:F_HI (Hz) [default: 10:3000 or the band of the preset].")
@click.option("--taper", help="Periodogram window (scipy.signal.get_window name) [default: none].")
@click.option("--response", type=click.Path(), help="Bode table for the sensitivity report.")
@click.option("--freqs", callback=_float_list, help="Comma-separated report frequencies (Hz).")
@click.option("--reference-freq", type=float, default=60.0, show_default=True, help="Dynamic range frequency.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the synthetic noise.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="PSD CSV.")
@click.option("--report", type=click.Path(dir_okay=False), help="Sensitivity report CSV.")
def noise(**options) -> None:
    """
    Estimate the output noise PSD, its band rms and the sensitivity of the sensor.
    """
    _run_command(NoiseConfig, **options)


@cli.command(epilog=_exit_code_table())
@click.option("--input", type=click.Path(), required=True, help="Sensor output waveform CSV.")
@click.option("--response", type=click.Path(), required=True, help="Bode table CSV.")
@click.option("--flow", type=float, default=10.0, show_default=True, help="Low-side window edge (Hz).")
@click.option("--fhigh", type=float, default=4000.0, show_default=True, help="High-side window edge (Hz).")
@click.option("--notch", "notches", multiple=True, callback=_pair, help="Notch CENTER_HZ:WIDTH_HZ (repeatable).")
@click.option("--low-shape", type=click.Choice(["sine", "rectangular"]), default="sine", show_default=True)
@click.option("--high-shape", type=click.Choice(["cosine", "rectangular"]), default="cosine", show_default=True)
@click.option("--reference", type=click.Path(), help="True input waveform CSV (for the amplitude error).")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Estimated input waveform CSV.")
@click.option("--metrics", type=click.Path(dir_okay=False), help="Pulse metrics CSV.")
def equalize(**options) -> None:
    """
    Reconstruct the input waveform from a sensor output by apodized inverse filtering.
    """
    _run_command(EqualizeConfig, **options)


@cli.command(epilog=_exit_code_table())
@click.option("--curve", help=f"Displacement curve CSV (`{REFERENCE_CURVE}` for the builtin fixture).")
@click.option("--linearity", type=click.Path(), help="CSV of input_v,output_v pairs.")
@click.option("--range", "displacement_range", callback=_pair, help="MAX_PP:MIN_DETECTABLE displacement (same unit).")
@click.option("--out", type=click.Path(dir_okay=False), help="Curve with central-difference slopes (CSV).")
@click.option("--fit-out", type=click.Path(dir_okay=False), help="Linearity fit CSV.")
def transducer(**options) -> None:
    """
    Operating point, linearity and displacement dynamic range of the transducer.
    """
    _run_command(TransducerConfig, **options)


def main(args: Optional[Sequence[str]] = None) -> None:
    """
    Console entry point. Usage errors are reported on one line like every other failure.
    """
    try:
        exit_code = cli.main(args=args, prog_name="optovolt", standalone_mode=False)
    except click.ClickException as exc:
        click.echo(_failure_line("usage", USAGE_EXIT_CODE, exc.format_message()), err=True)
        exit_code = USAGE_EXIT_CODE
    except click.Abort:
        exit_code = 1
    sys.exit(exit_code or 0)

"""
Tests for the transducer analyses: operating point, log-log linearity and displacement resolution.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from optovolt.file_formats import read_table_csv
from optovolt.labkit.errors import InvalidInputError, RecordIOError
from optovolt.sensor_model import SensorModel
from optovolt.transducer import (
    CURVE_SLOPE_HEADER,
    FIT_HEADER,
    DisplacementCurve,
    displacement_dynamic_range,
    drive_amplitude_sweep,
    loglog_linearity,
    operating_point,
    read_curve_csv,
    read_pairs_csv,
    reference_displacement_curve,
    resolution_fraction,
    write_curve_csv,
    write_fit_csv,
)


def test_operating_point_of_the_reference_curve() -> None:
    """
    The reference curve rises fastest at 280 um.
    """
    point = operating_point(reference_displacement_curve())

    assert point.displacement == pytest.approx(280.0)
    assert point.slope == pytest.approx(0.5 * 2 * math.tanh(0.2) / 40.0, rel=1e-9)


def test_ties_go_to_the_smallest_displacement() -> None:
    curve = DisplacementCurve(displacements=[0.0, 1.0, 2.0, 3.0, 4.0], powers=[0.0, 1.0, 2.0, 3.0, 4.0])

    assert operating_point(curve) == (1.0, 1.0)


def test_falling_curve_has_a_negative_slope() -> None:
    curve = DisplacementCurve(displacements=[0.0, 10.0, 20.0, 30.0], powers=[1.0, 0.9, 0.5, 0.4])

    point = operating_point(curve)
    assert point.displacement == pytest.approx(10.0)
    assert point.slope == pytest.approx(-0.025)


def test_operating_point_needs_three_points() -> None:
    with pytest.raises(InvalidInputError, match="insufficient data"):
        operating_point(DisplacementCurve(displacements=[0.0, 1.0], powers=[0.0, 1.0]))


@pytest.mark.parametrize(
    "displacements, powers",
    [([0.0, 1.0], [1.0]), ([0.0, 0.0, 1.0], [1.0, 1.0, 1.0]), ([0.0, 1.0, 2.0], [1.0, -0.1, 1.0])],
)
def test_invalid_curves(displacements: list, powers: list) -> None:
    with pytest.raises(ValidationError):
        DisplacementCurve(displacements=displacements, powers=powers)


def test_loglog_linearity_of_an_exact_power_law() -> None:
    inputs = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    fit = loglog_linearity(inputs, 3.0 * inputs)

    assert fit.slope == pytest.approx(1.0)
    assert fit.intercept == pytest.approx(math.log10(3.0))
    assert fit.slope_stderr == pytest.approx(0.0, abs=1e-9)


def test_loglog_linearity_errors() -> None:
    with pytest.raises(InvalidInputError):
        loglog_linearity([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        loglog_linearity([1.0, 2.0, 0.0], [1.0, 2.0, 3.0])
    with pytest.raises(InvalidInputError):
        loglog_linearity([1.0, 2.0, 3.0], [1.0, 2.0])


def test_displacement_resolution() -> None:
    """
    3 um of full scale resolved down to 1.5 nm is about 66 dB, or 0.05% of the scale.
    """
    assert displacement_dynamic_range(3e-6, 1.5e-9) == pytest.approx(66.0206, abs=1e-4)
    assert resolution_fraction(3e-6, 1.5e-9) == pytest.approx(0.05)

    with pytest.raises(InvalidInputError):
        displacement_dynamic_range(0.0, 1e-9)
    with pytest.raises(InvalidInputError):
        resolution_fraction(3e-6, -1.0)


def test_drive_amplitude_sweep_is_linear() -> None:
    model = SensorModel()
    inputs, outputs = drive_amplitude_sweep(model, [1.0, 10.0, 100.0])

    np.testing.assert_allclose(outputs, abs(model.frequency_response(100.0)) * inputs, rtol=1e-9)
    assert loglog_linearity(inputs, outputs).slope == pytest.approx(1.0)


def test_curve_csv(tmp_path) -> None:
    path = tmp_path / "curve.csv"
    path.write_text("displacement_um,power_norm\n0,0.1\n50,0.4\n100,0.9\n", encoding="utf-8")

    curve = read_curve_csv(path)
    np.testing.assert_array_equal(curve.displacements, [0.0, 50.0, 100.0])

    write_curve_csv(curve, tmp_path / "slopes.csv")
    columns, _ = read_table_csv(tmp_path / "slopes.csv", CURVE_SLOPE_HEADER)
    assert math.isnan(columns["slope_per_um"][0])
    assert columns["slope_per_um"][1] == pytest.approx(0.008)
    assert math.isnan(columns["slope_per_um"][2])


def test_invalid_curve_csv(tmp_path) -> None:
    path = tmp_path / "curve.csv"
    path.write_text("displacement_um,power_norm\n10,0.1\n0,0.4\n", encoding="utf-8")

    with pytest.raises(RecordIOError, match="not a valid displacement curve"):
        read_curve_csv(path)


def test_pairs_and_fit_csv(tmp_path) -> None:
    path = tmp_path / "pairs.csv"
    path.write_text("input_v,output_v\n1,0.005\n10,0.05\n100,0.5\n", encoding="utf-8")

    inputs, outputs = read_pairs_csv(path)
    fit = loglog_linearity(inputs, outputs)
    write_fit_csv(fit, tmp_path / "fit.csv")

    columns, _ = read_table_csv(tmp_path / "fit.csv", FIT_HEADER)
    assert columns["slope"][0] == fit.slope
    assert columns["intercept"][0] == pytest.approx(math.log10(0.005))

"""
This module contains the custom errors raised by the optovolt library. Every error carries a machine-readable
`category` and the exit code the command line uses for it.
"""


class OptovoltError(Exception):
    """
    Base class for errors in the optovolt library.
    """

    category: str = "internal"
    exit_code: int = 1


class InvalidInputError(OptovoltError, ValueError):
    """
    Raised when an argument violates a documented precondition (empty waveform, non-positive value etc.)
    """

    category = "invalid-input"
    exit_code = 3


class MismatchError(OptovoltError):
    """
    Raised when two or more waveforms that are supposed to share a sample rate and a length do not.
    """

    category = "mismatch"
    exit_code = 4


class SymmetryViolationError(OptovoltError):
    """
    Raised when a real waveform is requested from a spectrum that is not Hermitian.
    """

    category = "symmetry-violation"
    exit_code = 5


class OutOfBandError(OptovoltError):
    """
    Raised when a frequency lies outside of the range a spectrum or a frequency grid covers.
    """

    category = "out-of-band"
    exit_code = 6


class AliasingRiskError(OptovoltError):
    """
    Raised when the sample rate of a simulation is too low compared to the sensor resonance.
    """

    category = "aliasing-risk"
    exit_code = 7


class PlanningError(OptovoltError):
    """
    Raised when no acquisition setting satisfies the sweep protocol for a probe frequency.
    """

    category = "planning"
    exit_code = 8


class DivisionDegenerateError(OptovoltError):
    """
    Raised when the probe frequency is absent from the input record, so the response ratio is undefined.
    """

    category = "division-degenerate"
    exit_code = 9


class RecordIOError(OptovoltError, OSError):
    """
    Raised when a recorded waveform file is missing, unreadable or incompatible with the sweep plan.
    """

    category = "record-io"
    exit_code = 10


class UndetectableError(OptovoltError):
    """
    Raised when the sensor has zero response at the frequency a minimum detectable input is asked for.
    """

    category = "undetectable"
    exit_code = 11


class CoverageError(OptovoltError):
    """
    Raised when a Bode table does not cover the frequencies an operation needs.
    """

    category = "coverage"
    exit_code = 12


class IllConditionedResponseError(OptovoltError):
    """
    Raised when the response is too close to zero inside the equalization passband to be divided out.
    """

    category = "ill-conditioned"
    exit_code = 13


class NotPulseLikeError(OptovoltError):
    """
    Raised when a waveform does not contain a single dominant pulse with two half-maximum crossings.
    """

    category = "not-pulse-like"
    exit_code = 14


class UnfilteredSegmentError(OptovoltError):
    """
    Raised when a noise segment declares content above its Nyquist frequency without an anti-aliasing filter below
    Nyquist.
    """

    category = "unfiltered-segment"
    exit_code = 15


class ConfigError(OptovoltError):
    """
    Raised when a sensor configuration file or a command line configuration cannot be interpreted.
    """

    category = "config"
    exit_code = 16

"""
Types of the optovolt package.
"""

from typing import TYPE_CHECKING, Protocol

import numpy as np
import numpy.typing as npt

if TYPE_CHECKING:
    from optovolt.characterization import SweepEntry, SweepPoint
    from optovolt.waveforms import Waveform

RealArray = npt.NDArray[np.float64]
ComplexArray = npt.NDArray[np.complex128]


class PointEstimatedEventHandler(Protocol):
    """
    A protocol for sweep point event handlers. Such a handler is scheduled (without blocking the sweep) every time the
    response at one probe frequency has been estimated and averaged over all of its traces.
    """

    async def __call__(self, point: "SweepPoint") -> None: ...


class TraceSource(Protocol):
    """
    A protocol for the sources of paired input/output records consumed by a frequency sweep. A source is either
    synthetic (a sensor model driven by a generator) or recorded (a directory of waveform files).
    """

    def load_trace(self, entry_index: int, entry: "SweepEntry", trace_index: int) -> tuple["Waveform", "Waveform"]:
        """
        Return the `(v_in, v_out)` pair of records of the given trace at the given sweep entry.
        """

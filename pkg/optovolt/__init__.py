"""
Make all the functions and classes of the sensor models, the waveform tools and the analyses available at the package
level.
"""

from optovolt import characterization, equalizer, noise_analysis, sensor_model, transducer, waveforms
from optovolt.characterization import *
from optovolt.equalizer import *
from optovolt.labkit import errors
from optovolt.labkit.errors import *
from optovolt.labkit.lab import SensorLab
from optovolt.noise_analysis import *
from optovolt.sensor_model import *
from optovolt.transducer import *
from optovolt.waveforms import *

__all__ = (
    ["SensorLab"]
    + [name for name in dir(errors) if not name.startswith("_")]
    + [name for name in dir(waveforms) if not name.startswith("_")]
    + [name for name in dir(sensor_model) if not name.startswith("_")]
    + [name for name in dir(characterization) if not name.startswith("_")]
    + [name for name in dir(noise_analysis) if not name.startswith("_")]
    + [name for name in dir(equalizer) if not name.startswith("_")]
    + [name for name in dir(transducer) if not name.startswith("_")]
)

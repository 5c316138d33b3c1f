"""Link-level OTFS simulation with oscillator phase noise.

Modem transforms and QAM live in :mod:`otfspn.grid`; oscillator models in
:mod:`otfspn.oscillator`; the delay-Doppler interference/SINR analysis in
:mod:`otfspn.dd_analysis`; doubly dispersive channels in
:mod:`otfspn.channel`; the two-stage Wiener estimator and its baselines in
:mod:`otfspn.estimation`; equalizers, coding and metrics in
:mod:`otfspn.equalization`; scenario configuration, Monte Carlo execution
and the figure presets in :mod:`otfspn.harness`.
"""

from .grid import Frame, GridConfig, QamConfig
from .oscillator import PhaseNoiseModel, PhasePath
from .channel import ChannelProfile

__all__ = [
    "Frame", "GridConfig", "QamConfig",
    "PhaseNoiseModel", "PhasePath", "ChannelProfile",
]

__version__ = "0.1.0"

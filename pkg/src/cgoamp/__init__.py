"""OAMP-family MIMO-OFDM detectors with conjugate-gradient linear estimation."""
from .cg import CgConfig, cg_solve
from .channel import ChannelRealization, RealLinearSystem, Scenario
from .constellation import Constellation, make_constellation
from .detector import DetectorConfig, NetParams, detect, make_detector

__all__ = ["CgConfig", "cg_solve", "ChannelRealization", "RealLinearSystem", "Scenario",
           "Constellation", "make_constellation", "DetectorConfig", "NetParams", "detect",
           "make_detector"]

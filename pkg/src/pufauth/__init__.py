"""Threshold-based SRAM PUF authentication with Hamming helper data and majority voting."""

from .calibration import (
    CalibrationResult,
    GenuineSample,
    ImpostorModel,
    calibrate,
    far,
    sm_ec,
    tau_max,
    tau_min,
)
from .hamming import ALL_VARIANTS, DecodeReport, HammingVariant, HelperData, decode, enroll_helper
from .puf_model import NoiseProfile, PufDevice, Response, generate_device, normalized_hd, sample_response, uniformity
from .stabilizer import MajorityAccumulator, stabilized_read

__version__ = "0.1.0"

__all__ = [
    "ALL_VARIANTS", "CalibrationResult", "DecodeReport", "GenuineSample", "HammingVariant",
    "HelperData", "ImpostorModel", "MajorityAccumulator", "NoiseProfile", "PufDevice", "Response",
    "calibrate", "decode", "enroll_helper", "far", "generate_device", "normalized_hd",
    "sample_response", "sm_ec", "stabilized_read", "tau_max", "tau_min", "uniformity",
]

"""Gravity-prior calibration toolkit.

IMU gravity priors from a Mahony filter, per-sequence Procrustes alignment to
camera-frame labels, and a small FiLM-conditioned gated calibrator trained
with numpy.
"""

__version__ = "0.1.0"

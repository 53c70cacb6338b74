"""Conversion between linear frequencies (MHz) and angular rates (rad/ns)."""
from math import pi

MHZ_TO_RAD_PER_NS = 2 * pi * 1e-3


def to_angular(f_mhz):
    return f_mhz * MHZ_TO_RAD_PER_NS


def to_mhz(w_rad_ns):
    return w_rad_ns / MHZ_TO_RAD_PER_NS

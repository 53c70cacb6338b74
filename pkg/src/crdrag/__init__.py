"""Recursive multi-derivative DRAG pulses for cross-resonance gates."""

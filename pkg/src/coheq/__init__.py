"""Coherent optical link equalization toolkit.

Simulates a dual-polarization 16QAM link (split-step Fourier propagation),
provides the baseline receiver DSP (chromatic dispersion compensation,
digital back-propagation), trains biLSTM and CNN equalizers from scratch,
approximates their activation functions for hardware (Taylor / piecewise
linear / lookup table) with approximation-aware retraining, runs int32
fixed-point inference, and accounts for throughput and complexity.
"""

__version__ = "0.1.0"

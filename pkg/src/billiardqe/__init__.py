"""billiardqe: boundary-integral spectra and quantum-ergodicity diagnostics on planar billiards."""

__version__ = "0.1.0"

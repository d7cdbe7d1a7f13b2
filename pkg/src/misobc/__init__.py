"""Rate and simulation toolkit for a two-user broadcast channel with delayed CSI.

The package certifies, numerically, that a three-phase retrospective
transmission scheme with a fixed-distortion quantizer stays within a
constant per-user gap of an outer bound at every transmit power:

* :mod:`misobc.core`      reproducible random streams and closed-form
  log-det arithmetic for 1x2 and 2x2 channels
* :mod:`misobc.capacity`  ergodic rate curves, paired sweeps and scalar
  rate-distortion helpers
* :mod:`misobc.quantizer` subtractive dithered scalar quantization with
  a binary index stream format
* :mod:`misobc.regions`   rate-region polytopes, erosion and the
  per-user gap between achievable and outer regions
* :mod:`misobc.scheme`    block-level simulation of the three-phase
  scheme with causality auditing and mutual-information accounting
* :mod:`misobc.cli`       command line front end
"""

from .core import DomainError

__all__ = ["DomainError"]
__version__ = "0.1.0"

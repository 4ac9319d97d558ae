"""Rotation-invariant nonparametric CUSUM charts for circular data.

Detects changes in mean direction and in concentration of a streaming
angular process, with Monte Carlo calibration of control limits and
run-length simulation across wrapped stable, wrapped Student-t, skewed
and mixture circular distributions.
"""

from circusum.circular import (
    DegenerateSampleError,
    TrigAccumulator,
    a_inverse,
    a_ratio,
    atan2_paper,
    bessel_i0,
    bessel_i1,
    bessel_k,
    mean_direction,
    mean_resultant_length,
    normalize_angle,
    resultant_length,
    sample_concentration,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateSampleError",
    "TrigAccumulator",
    "a_inverse",
    "a_ratio",
    "atan2_paper",
    "bessel_i0",
    "bessel_i1",
    "bessel_k",
    "mean_direction",
    "mean_resultant_length",
    "normalize_angle",
    "resultant_length",
    "sample_concentration",
    "__version__",
]

"""Hot numerical kernels for convolution and 2x2 max-pooling.

Two interchangeable backends exist:

* ``_fast`` — a compiled Cython extension.
* ``python_backend`` — pure numpy, always available.

Benchmarks (``benchmarks/bench_kernels.py``) show the numpy im2col
convolution beats the serial compiled loops (BLAS does the heavy lifting)
while the compiled pooling kernels are several times faster than the numpy
scatter.  The default therefore mixes the two: numpy convolution plus
compiled pooling when the extension is available.  Set the environment
variable ``MIXDISTILL_BACKEND`` to ``python`` or ``cython`` to force one
uniform backend (``cython`` raises if the extension is missing).  All
kernels operate on float64 NHWC arrays; convolutions are valid-mode with
stride 1.
"""

import os

from . import python_backend

try:
    from . import _fast
except ImportError:
    _fast = None

_requested = os.environ.get("MIXDISTILL_BACKEND", "").lower()

if _requested == "python" or (_requested == "" and _fast is None):
    _conv, _pool, BACKEND = python_backend, python_backend, "python"
elif _requested == "cython":
    if _fast is None:
        raise ImportError("MIXDISTILL_BACKEND=cython but the extension is not built")
    _conv, _pool, BACKEND = _fast, _fast, "cython"
elif _requested == "":
    _conv, _pool, BACKEND = python_backend, _fast, "mixed"
else:
    raise ImportError(f"unknown MIXDISTILL_BACKEND value {_requested!r}")

conv2d_forward = _conv.conv2d_forward
conv2d_backward = _conv.conv2d_backward
maxpool2_forward = _pool.maxpool2_forward
maxpool2_backward = _pool.maxpool2_backward

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "python_backend",
]

"""Kernel backend selection.

The hot pursuit kernels exist twice: compiled (``bbsc._core``, Cython)
and pure NumPy (``bbsc._core_py``). The compiled module is preferred
when importable; ``BBSC_PURE_PYTHON=1`` forces the fallback. Everything
above this module calls ``backend.kernels`` and never imports either
implementation directly.
"""

import os

if os.environ.get("BBSC_PURE_PYTHON", "") not in ("", "0"):
    from bbsc import _core_py as kernels

    BACKEND = "python"
else:
    try:
        from bbsc import _core as kernels  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        from bbsc import _core_py as kernels  # type: ignore[no-redef]

        BACKEND = "python"

ACT_IDENTITY = kernels.ACT_IDENTITY
ACT_RELU = kernels.ACT_RELU
ACT_SIGMOID = kernels.ACT_SIGMOID
ACT_SOFTMAX = kernels.ACT_SOFTMAX

forward_batch = kernels.forward_batch
gauss_marginal_scores = kernels.gauss_marginal_scores
bern_scores = kernels.bern_scores
poiss_scores = kernels.poiss_scores

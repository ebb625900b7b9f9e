"""Kernel backend selection.

The compiled extension is preferred; the NumPy implementation is used when
the extension is unavailable or ``LOCALSGD_PURE_PYTHON=1`` is set.
"""

import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)


def _load():
    if os.environ.get("LOCALSGD_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py
    try:
        from . import _kernels
    except ImportError:
        logger.debug("compiled kernels unavailable, using NumPy fallback")
        return _kernels_py
    return _kernels


backend = _load()
BACKEND = backend.BACKEND

logistic_loss_sum = backend.logistic_loss_sum
logistic_grad_sum = backend.logistic_grad_sum
logistic_hvp_sum = backend.logistic_hvp_sum

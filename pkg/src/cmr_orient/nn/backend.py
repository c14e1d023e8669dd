"""Kernel backend selection.

The compiled extension is used when it was built; otherwise (or when
``CMR_ORIENT_PURE_PYTHON=1``) the numpy fallback is. Both give identical
results, so the choice only affects speed.
"""

import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def load(name: str | None = None):
    """Return the kernel module called ``name`` ("cython" or "python"), or the default."""
    if name is None:
        force_pure = os.environ.get("CMR_ORIENT_PURE_PYTHON", "").strip() not in ("", "0")
        name = "python" if force_pure or _compiled is None else "cython"
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available() -> list:
    return ["python"] + (["cython"] if _compiled is not None else [])


kernels = load()
BACKEND = "cython" if kernels is _compiled else "python"
logger.debug("using %s kernels", BACKEND)

"""Select the compiled kernels when available.

Set ``STREAMRX_PURE_PYTHON=1`` to force the NumPy fallback.
"""

import os

from . import _pykernels as py

ext = None
if os.environ.get("STREAMRX_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _kernels as ext  # noqa: F811
    except ImportError:
        ext = None

BACKEND = "compiled" if ext is not None else "python"

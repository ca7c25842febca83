"""Hot kernels for the entropy replacement game.

The compiled extension is used when it was built; otherwise (or when
``DOGCLR_PURE_PYTHON=1``) the numpy implementation is loaded. ``BACKEND``
names the active one.
"""

import os

from . import _pykernels as python

compiled = None
if not os.environ.get("DOGCLR_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

replacement_scan = _impl.replacement_scan
sequential_replace = _impl.sequential_replace

__all__ = ["BACKEND", "replacement_scan", "sequential_replace", "python", "compiled"]

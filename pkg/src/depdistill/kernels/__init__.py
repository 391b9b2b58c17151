"""Hot kernels: compiled extension when available, numpy fallback otherwise.

Set ``DEPDISTILL_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels as python

compiled = None
if os.environ.get("DEPDISTILL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

chu_liu_edmonds = _impl.chu_liu_edmonds
count_nonprojective = _impl.count_nonprojective

"""Kernel backend selection: compiled Cython core with a numpy fallback.

The compiled module is used when it imported successfully and the
``MAQAM_ASA_PURE`` environment variable is unset/0. Both backends implement
the same contracts (see pure.py); results agree to floating-point roundoff.
"""

import os

from . import pure as _pure

_force_pure = os.environ.get("MAQAM_ASA_PURE", "0") not in ("0", "", "false")

if not _force_pure:
    try:
        from . import _ckernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _pure
        BACKEND = "numpy"
else:
    _impl = _pure
    BACKEND = "numpy"

im2col3 = _impl.im2col3
col2im3 = _impl.col2im3
maxpool2 = _impl.maxpool2
maxpool2_backward = _impl.maxpool2_backward

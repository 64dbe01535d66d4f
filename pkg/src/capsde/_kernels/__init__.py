"""Kernel backend selection.

The environment variable CAPSDE_KERNELS picks the implementation of the
hot loops:

* ``auto`` (default): compiled extension if importable, numpy otherwise;
* ``compiled``: require the extension, fail loudly if missing;
* ``python``: force the numpy reference implementation.

Both backends produce deterministic output for a fixed seed; they agree
with each other to rounding level but not necessarily bit for bit.
"""

import os

_requested = os.environ.get("CAPSDE_KERNELS", "auto").lower()
if _requested not in ("auto", "compiled", "python"):
    raise ImportError(
        f"CAPSDE_KERNELS must be 'auto', 'compiled' or 'python' "
        f"(got {_requested!r})")

if _requested == "python":
    from . import _fallback as _impl
    BACKEND = "python"
else:
    try:
        from . import _compiled as _impl
        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        from . import _fallback as _impl
        BACKEND = "python"

march_log_lattice = _impl.march_log_lattice
march_toy_lattice = _impl.march_toy_lattice
feedback_euler_block = _impl.feedback_euler_block
malliavin_block = _impl.malliavin_block

"""Integration backend selection.

The compiled extension carries the hot loop; the pure NumPy twin in
`_kernel_py` implements the identical algorithm and is used automatically
when the extension has not been built. Set SYMPCOOL_BACKEND=python or
=compiled to force a choice (forcing 'compiled' without the extension built
raises at import).
"""

import os

from ._kernel_py import (  # noqa: F401  (status codes re-exported either way)
    STATUS_TIMED_OUT,
    STATUS_CRYSTALLIZED,
    STATUS_LOST,
    STATUS_CLOSE_ENCOUNTER,
    STATUS_STEP_UNDERFLOW,
)

_forced = os.environ.get("SYMPCOOL_BACKEND", "").strip().lower()

if _forced == "python":
    from ._kernel_py import integrate_scaled

    BACKEND_NAME = "python"
elif _forced == "compiled":
    from ._kernel import integrate_scaled

    BACKEND_NAME = "compiled"
elif _forced == "":
    try:
        from ._kernel import integrate_scaled

        BACKEND_NAME = "compiled"
    except ImportError:
        from ._kernel_py import integrate_scaled

        BACKEND_NAME = "python"
else:
    raise RuntimeError(
        f"SYMPCOOL_BACKEND={_forced!r} not recognized (use 'python' or 'compiled')"
    )

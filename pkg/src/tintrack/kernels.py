"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; setting the
environment variable ``TINTRACK_NO_EXT`` forces the pure-Python fallback.
"""

import os

if os.environ.get("TINTRACK_NO_EXT"):
    from . import _kernels_py as _impl

    HAVE_COMPILED = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        HAVE_COMPILED = True
    except ImportError:
        from . import _kernels_py as _impl

        HAVE_COMPILED = False

BACKEND = "compiled" if HAVE_COMPILED else "python"

fps_select = _impl.fps_select
run_counts = _impl.run_counts
vertex_type_code = _impl.vertex_type_code

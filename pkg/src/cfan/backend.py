"""Kernel backend selection.

The compiled extension ``cfan._kernels_c`` and the pure numpy module
``cfan._kernels_py`` export the same functions. One of them is chosen
once, at import time, controlled by the ``CFAN_BACKEND`` environment
variable:

    auto    (default) compiled if available, numpy otherwise
    c       compiled, error if the extension is missing
    python  numpy, always available

Both backends are deterministic run to run; they agree with each other
to ~1e-12 relative (summation order differs), so pipelines that must be
byte-reproducible should pin one backend.
"""

import os

_choice = os.environ.get("CFAN_BACKEND", "auto")
if _choice not in ("auto", "c", "python"):
    raise RuntimeError(
        f"CFAN_BACKEND must be one of auto/c/python, got {_choice!r}"
    )

kernels = None
if _choice in ("auto", "c"):
    try:
        from . import _kernels_c as kernels  # type: ignore[no-redef]
    except ImportError:
        if _choice == "c":
            raise RuntimeError(
                "CFAN_BACKEND=c but the compiled extension is not built"
            ) from None
if kernels is None:
    from . import _kernels_py as kernels  # type: ignore[no-redef]

ACTIVE = "c" if kernels.__name__.endswith("_kernels_c") else "python"


def active_backend() -> str:
    """Name of the kernel backend selected at import: 'c' or 'python'."""
    return ACTIVE

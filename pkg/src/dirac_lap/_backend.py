"""Numerical backend selection.

Hot loops (special-function evaluation, pairwise kernel assembly) ship in two
variants: a numba ``@njit`` version and a vectorized pure-numpy version.  The
environment variable ``DIRAC_LAP_BACKEND`` picks one:

* ``auto``  - numba if importable, else numpy (default)
* ``numba`` - require numba, fail loudly if missing
* ``numpy`` - force the pure-numpy path

Both variants are always importable so they can be benchmarked against each
other regardless of the active choice.
"""

import os

_env = os.environ.get("DIRAC_LAP_BACKEND", "auto").strip().lower()
if _env not in {"auto", "numba", "numpy"}:
    raise RuntimeError(
        "DIRAC_LAP_BACKEND must be one of auto|numba|numpy, got %r" % _env
    )

HAVE_NUMBA = False
if _env != "numpy":
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        if _env == "numba":
            raise RuntimeError("DIRAC_LAP_BACKEND=numba but numba failed to import")

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def active_backend() -> str:
    """Name of the backend used by the dispatching wrappers."""
    return BACKEND

"""Pick the kernel implementation at import time.

``CROWDOBS_BACKEND`` may be ``auto`` (default: compiled if importable),
``compiled`` (fail if the extension is missing) or ``python``.
"""

import os

from crowdobs import _pycore

_choice = os.environ.get("CROWDOBS_BACKEND", "auto").strip().lower()

if _choice not in ("auto", "compiled", "python"):
    raise ImportError(f"unknown CROWDOBS_BACKEND {_choice!r}")

core = _pycore
if _choice != "python":
    try:
        from crowdobs import _core as core
    except ImportError:
        if _choice == "compiled":
            raise

NAME = core.BACKEND


def get(name):
    """Return the kernel module named ``compiled`` or ``python``."""
    if name == "python":
        return _pycore
    if name == "compiled":
        from crowdobs import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")


def available():
    names = ["python"]
    try:
        from crowdobs import _core  # noqa: F401
    except ImportError:
        return names
    return ["compiled"] + names

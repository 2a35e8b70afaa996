"""Kernel backend selection: compiled extension if available, numpy otherwise.

The environment variable ``CAUSALGEN_BACKEND`` forces a choice:
``numpy`` (pure fallback), ``compiled`` (fail if the extension is missing),
or ``auto`` (default).  :func:`use_backend` switches at runtime, which the
parity tests and the backend benchmark rely on.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

from . import kernels_numpy


def _load_compiled():
    from . import _kernels  # noqa: F401 - import probe

    return _kernels


def _select(choice: str):
    if choice == "numpy":
        return kernels_numpy
    if choice == "compiled":
        return _load_compiled()
    try:
        return _load_compiled()
    except ImportError:
        return kernels_numpy


kernels = _select(os.environ.get("CAUSALGEN_BACKEND", "auto"))


def active_backend() -> str:
    return kernels.BACKEND_NAME


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        _load_compiled()
        names.append("compiled")
    except ImportError:
        pass
    return names


def set_backend(name: str) -> None:
    global kernels
    kernels = _select(name)


@contextmanager
def use_backend(name: str):
    previous = kernels.BACKEND_NAME
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def single_thread_blas():
    """Pin BLAS pools to one thread for the duration of a hot loop.

    The models here multiply matrices far too small for threaded BLAS;
    thread handoff costs several times the multiply itself, and a single
    stream keeps results reproducible across machines with different core
    counts.
    """
    return threadpool_limits(limits=1)

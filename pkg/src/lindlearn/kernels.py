"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it has been built; otherwise
the numpy implementations in ``_kernels_py`` are used.  Setting the
environment variable ``LINDLEARN_PURE_PYTHON=1`` forces the numpy backend.
"""

import os

from . import _kernels_py

_NAMES = (
    "pauli_monomial",
    "add_monomial_superop",
    "pauli_rotate",
    "apply_1q_superop",
    "pauli_expectation",
    "z_expectations",
)


def available_backends():
    """Return the names of the importable backends, compiled first."""
    names = []
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    names.append("python")
    return names


def load_backend(name):
    """Return the kernel module for ``name`` (``"cython"`` or ``"python"``)."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


if os.environ.get("LINDLEARN_PURE_PYTHON", "") not in ("", "0"):
    BACKEND = "python"
else:
    BACKEND = available_backends()[0]

_impl = load_backend(BACKEND)
pauli_monomial = _impl.pauli_monomial
add_monomial_superop = _impl.add_monomial_superop
pauli_rotate = _impl.pauli_rotate
apply_1q_superop = _impl.apply_1q_superop
pauli_expectation = _impl.pauli_expectation
z_expectations = _impl.z_expectations

"""Kernel backend selection.

The compiled extension is used when importable; setting the environment
variable ``LGMSEP_BACKEND=python`` forces the numpy fallback.
"""
import os

from . import _core_py

if os.environ.get("LGMSEP_BACKEND", "").lower() == "python":
    kernels = _core_py
    NAME = "python"
else:
    try:
        from . import _core as kernels
        NAME = "cython"
    except ImportError:  # extension not built
        kernels = _core_py
        NAME = "python"

herm_eig_batch = kernels.herm_eig_batch
model_stats = kernels.model_stats
riccati_terms = kernels.riccati_terms

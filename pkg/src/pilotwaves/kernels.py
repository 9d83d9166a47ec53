"""Kernel selection: compiled extension when built, numpy fallback otherwise.

Set ``PILOTWAVES_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
trig_eval_shared = _kernels_py.trig_eval_shared
trig_eval_paired = _kernels_py.trig_eval_paired
phasor_matrix = _kernels_py.phasor_matrix
trig_eval_paired2 = _kernels_py.trig_eval_paired2
expi = _kernels_py.expi

if not os.environ.get("PILOTWAVES_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        trig_eval_shared = _compiled.trig_eval_shared
        trig_eval_paired = _compiled.trig_eval_paired
        phasor_matrix = _compiled.phasor_matrix
        trig_eval_paired2 = _compiled.trig_eval_paired2
        expi = _compiled.expi

__all__ = ["BACKEND", "expi", "phasor_matrix", "trig_eval_paired", "trig_eval_paired2",
           "trig_eval_shared"]

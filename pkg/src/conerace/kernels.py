"""Kernel backend selection.

The compiled extension is used when it imports; otherwise (or when
``CONERACE_PURE_PYTHON=1``) the pure-Python kernels are used. Both backends
expose ``derivative``, ``substeps``, ``rk4_step``, ``rollout``,
``cluster_labels`` and ``wrap_angle``.
"""

from __future__ import annotations

import os

from . import _pykernels

python_backend = _pykernels
compiled_backend = None

if os.environ.get("CONERACE_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if backend is compiled_backend else "python"

derivative = backend.derivative
substeps = backend.substeps
rk4_step = backend.rk4_step
rollout = backend.rollout
cluster_labels = backend.cluster_labels
wrap_angle = backend.wrap_angle

"""Backend dispatch for the numeric hot kernels.

The compiled Cython module is preferred when it imports; otherwise the
numpy reference implementation is used.  Setting the environment variable
``SSODSIM_PURE_PYTHON=1`` before import forces the numpy backend.  Both
backends share the exact arithmetic for ``iou_matrix``, ``nms_mask`` and
``max_iou_assign``, so box decisions do not depend on the backend.
"""

import os

if os.environ.get("SSODSIM_PURE_PYTHON") == "1":
    from . import _numpy_impl as _impl

    BACKEND = "python"
else:
    try:
        from . import _fast as _impl

        BACKEND = "compiled"
    except ImportError:
        from . import _numpy_impl as _impl

        BACKEND = "python"

box_noise = _impl.box_noise
scene_features = _impl.scene_features
iou_matrix = _impl.iou_matrix
nms_mask = _impl.nms_mask
max_iou_assign = _impl.max_iou_assign


def backend():
    """Name of the active backend: 'compiled' or 'python'."""
    return BACKEND


def available_backends():
    """Mapping of importable backend name -> implementation module."""
    from . import _numpy_impl

    impls = {"python": _numpy_impl}
    try:
        from . import _fast

        impls["compiled"] = _fast
    except ImportError:
        pass
    return impls

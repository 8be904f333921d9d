"""Pure-numpy implementations of the hot kernels.

This module is the reference semantics for ``_fast.pyx``; the two are kept
operation-for-operation identical so that box overlap, suppression and
assignment results match bit for bit across backends.  The hashed noise
kernel may differ from the compiled one by libm rounding only (~1e-15).
"""

import numpy as np

# splitmix64 constants
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586


def _finalize(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def box_noise(boxes, seed, d):
    """Deterministic standard normals keyed by (seed, box coordinates).

    Each box's four float64 coordinate bit patterns are folded into a
    splitmix64 key; the key then drives a counter-based stream that is
    mapped to normals with Box-Muller.  A pure function of its arguments:
    no RNG state is consumed.

    Args:
        boxes: (n, 4) float64 array of corner coordinates.
        seed: integer stream seed.
        d: number of noise values per box.

    Returns:
        (n, d) float64 array of standard normal draws.
    """
    boxes = np.ascontiguousarray(boxes, dtype=np.float64)
    n = boxes.shape[0]
    pairs = (d + 1) // 2
    if n == 0:
        return np.empty((0, d))
    bits = boxes.view(np.uint64)
    key = np.full(n, np.uint64(seed), dtype=np.uint64)
    for j in range(4):
        key = _finalize((key + _GOLDEN) ^ bits[:, j])
    offsets = np.arange(1, 2 * pairs + 1, dtype=np.uint64) * _GOLDEN
    states = _finalize(key[:, None] + offsets[None, :])
    u = (states >> np.uint64(11)).astype(np.float64)
    u1 = (u[:, 0::2] + 1.0) * _INV_2_53  # in (0, 1], safe for log
    u2 = u[:, 1::2] * _INV_2_53
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty((n, 2 * pairs))
    out[:, 0::2] = r * np.cos(_TWO_PI * u2)
    out[:, 1::2] = r * np.sin(_TWO_PI * u2)
    if d % 2:
        return np.ascontiguousarray(out[:, :d])
    return out


def scene_features(boxes, obj_boxes, obj_classes, prototypes, gain, geo_gain,
                   obj_sigma, obj_seed, noise_sigma, noise_seed, aug_sigma,
                   aug_seed):
    """Observation features of query boxes against a scene's objects.

    Per box: the best-overlapping object's prototype row scaled by
    ``gain * IoU``, plus a geometry block in the last four dims holding the
    object's absolute corner offsets scaled by ``geo_gain`` (present for
    any overlap, so offsets are linearly recoverable by a regression
    head), plus that object's appearance distortion scaled by
    ``obj_sigma * IoU`` (hashed noise keyed by the object box, so it is
    the same on every look at the instance; spans the prototype block
    only), plus up to two hashed-noise fields.  Boxes that overlap
    nothing see pure noise.

    Args:
        boxes: (n, 4) query boxes.
        obj_boxes: (m, 4) object boxes; may be empty.
        obj_classes: (m,) int64 class per object.
        prototypes: (C, D) float64 prototype rows, geometry columns zero.
        gain, geo_gain: prototype / geometry block scales.
        obj_sigma, obj_seed: instance distortion field (skipped when 0).
        noise_sigma, noise_seed: scene noise field (skipped when sigma 0).
        aug_sigma, aug_seed: augmentation noise field (skipped when 0).

    Returns:
        (n, D) float64 feature array.
    """
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    d = prototypes.shape[1]
    if obj_boxes.shape[0]:
        best_iou, best_idx = max_iou_assign(boxes, obj_boxes)
        cls = obj_classes[np.maximum(best_idx, 0)]
        out = (gain * best_iou)[:, None] * prototypes[cls]
        if geo_gain:
            ob = obj_boxes[np.maximum(best_idx, 0)]
            gate = np.where(best_iou > 0, geo_gain, 0.0)
            out[:, -4:] += gate[:, None] * (ob - boxes)
        if obj_sigma:
            # appearance only: the geometry block stays clean so
            # localization error is set by the noise fields alone
            objn = box_noise(obj_boxes, obj_seed, d)
            out[:, :d - 4] += ((obj_sigma * best_iou)[:, None]
                               * objn[np.maximum(best_idx, 0), :d - 4])
    else:
        out = np.zeros((n, d))
    if noise_sigma:
        out += noise_sigma * box_noise(boxes, noise_seed, d)
    if aug_sigma:
        out += aug_sigma * box_noise(boxes, aug_seed, d)
    return out


def iou_matrix(a, b):
    """Pairwise intersection-over-union of two corner-format box arrays.

    Boxes with non-positive width, height or union contribute zeros, so
    degenerate inputs never produce NaN.

    Args:
        a: (n, 4) array.
        b: (m, 4) array.

    Returns:
        (n, m) float64 array of IoU values in [0, 1].
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(
        a[:, None, 0], b[None, :, 0]
    )
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(
        a[:, None, 1], b[None, :, 1]
    )
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = (area_a[:, None] + area_b[None, :]) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=(inter > 0) & (union > 0))
    return out


def nms_mask(boxes, thresh):
    """Greedy suppression mask over boxes already sorted by priority.

    A box is kept when its IoU with every previously kept box is below
    ``thresh``.

    Args:
        boxes: (n, 4) array in evaluation order (highest priority first).
        thresh: suppression IoU threshold.

    Returns:
        (n,) uint8 mask, 1 for kept boxes.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.uint8)
    if n == 0:
        return keep
    full = iou_matrix(boxes, boxes)
    flags = np.zeros(n, dtype=bool)
    for i in range(n):
        if i == 0 or not np.any(full[i, :i][flags[:i]] >= thresh):
            keep[i] = 1
            flags[i] = True
    return keep


def max_iou_assign(boxes, refs):
    """Best-overlap assignment of each box to a reference box.

    Args:
        boxes: (n, 4) array.
        refs: (m, 4) array; may be empty.

    Returns:
        Tuple of (n,) float64 best IoU values and (n,) int64 indices into
        ``refs`` (ties go to the lowest index; -1 everywhere when ``refs``
        is empty).
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    refs = np.asarray(refs, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    if refs.shape[0] == 0:
        return np.zeros(n), np.full(n, -1, dtype=np.int64)
    full = iou_matrix(boxes, refs)
    idx = np.argmax(full, axis=1)
    return full[np.arange(n), idx], idx.astype(np.int64)

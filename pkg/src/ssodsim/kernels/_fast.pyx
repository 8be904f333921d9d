# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Reference semantics live in ``_numpy_impl.py``; the arithmetic here follows
the same operation order so box overlap, suppression and assignment results
are bit-identical across the two backends.
"""

from libc.math cimport cos, log, sin, sqrt

import numpy as np

ctypedef unsigned long long u64

cdef u64 GOLDEN = 0x9E3779B97F4A7C15
cdef u64 MIX1 = 0xBF58476D1CE4E5B9
cdef u64 MIX2 = 0x94D049BB133111EB
cdef double INV_2_53 = 1.0 / 9007199254740992.0
cdef double TWO_PI = 6.283185307179586


cdef inline u64 _finalize(u64 z) nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline double _pair_iou(double ax1, double ay1, double ax2, double ay2,
                             double bx1, double by1, double bx2, double by2) nogil:
    cdef double iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
    cdef double ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
    cdef double inter, union_
    if iw > 0 and ih > 0:
        inter = iw * ih
    else:
        inter = 0.0
    union_ = ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1)) - inter
    if inter > 0 and union_ > 0:
        return inter / union_
    return 0.0


def box_noise(boxes, seed, int d):
    """Deterministic standard normals keyed by (seed, box coordinates)."""
    cdef double[:, ::1] b = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0]
    cdef int pairs = (d + 1) // 2
    if n == 0:
        return np.empty((0, d))
    out_arr = np.empty((n, 2 * pairs), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef u64 s = <u64> seed
    cdef u64 key, s1, s2
    cdef Py_ssize_t i
    cdef int j, p
    cdef double c, u1, u2, r
    with nogil:
        for i in range(n):
            key = s
            for j in range(4):
                c = b[i, j]
                key = _finalize((key + GOLDEN) ^ (<u64*> &c)[0])
            for p in range(pairs):
                s1 = _finalize(key + (<u64> (2 * p + 1)) * GOLDEN)
                s2 = _finalize(key + (<u64> (2 * p + 2)) * GOLDEN)
                u1 = (<double> (s1 >> 11) + 1.0) * INV_2_53
                u2 = (<double> (s2 >> 11)) * INV_2_53
                r = sqrt(-2.0 * log(u1))
                out[i, 2 * p] = r * cos(TWO_PI * u2)
                out[i, 2 * p + 1] = r * sin(TWO_PI * u2)
    if d % 2:
        return np.ascontiguousarray(out_arr[:, :d])
    return out_arr


def scene_features(boxes, obj_boxes, obj_classes, prototypes, double gain,
                   double geo_gain, double obj_sigma, obj_seed,
                   double noise_sigma, noise_seed, double aug_sigma, aug_seed):
    """Observation features of query boxes against a scene's objects.

    Mirrors the reference implementation operation for operation: prototype
    row scaled by gain * IoU, geometry block of absolute corner offsets
    scaled by geo_gain, the matched object's appearance distortion, then
    the two hashed-noise fields in order.
    """
    cdef double[:, ::1] b = np.ascontiguousarray(
        np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    cdef double[:, ::1] ob = np.ascontiguousarray(
        np.asarray(obj_boxes, dtype=np.float64).reshape(-1, 4))
    cdef long long[::1] ocls = np.ascontiguousarray(obj_classes, dtype=np.int64)
    cdef double[:, ::1] proto = np.ascontiguousarray(prototypes, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0], m = ob.shape[0], d = proto.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef u64 nseed = <u64> noise_seed, aseed = <u64> aug_seed
    cdef u64 oseed = <u64> obj_seed
    cdef Py_ssize_t i, j, dd, best_j
    cdef int p, pairs = <int> ((d + 1) // 2)
    cdef double best, v, scale, c
    cdef u64 key, s1, s2
    cdef double u1, u2, r, vc, vs
    with nogil:
        for i in range(n):
            if m > 0:
                best = 0.0
                best_j = 0
                for j in range(m):
                    v = _pair_iou(b[i, 0], b[i, 1], b[i, 2], b[i, 3],
                                  ob[j, 0], ob[j, 1], ob[j, 2], ob[j, 3])
                    if v > best:
                        best = v
                        best_j = j
                scale = gain * best
                for dd in range(d):
                    out[i, dd] = scale * proto[ocls[best_j], dd]
                if geo_gain != 0 and best > 0:
                    out[i, d - 4] += geo_gain * (ob[best_j, 0] - b[i, 0])
                    out[i, d - 3] += geo_gain * (ob[best_j, 1] - b[i, 1])
                    out[i, d - 2] += geo_gain * (ob[best_j, 2] - b[i, 2])
                    out[i, d - 1] += geo_gain * (ob[best_j, 3] - b[i, 3])
                if obj_sigma != 0:
                    # appearance only: geometry block columns stay clean
                    scale = obj_sigma * best
                    key = oseed
                    for p in range(4):
                        c = ob[best_j, p]
                        key = _finalize((key + GOLDEN) ^ (<u64*> &c)[0])
                    for p in range(pairs):
                        if 2 * p >= d - 4:
                            break
                        s1 = _finalize(key + (<u64> (2 * p + 1)) * GOLDEN)
                        s2 = _finalize(key + (<u64> (2 * p + 2)) * GOLDEN)
                        u1 = (<double> (s1 >> 11) + 1.0) * INV_2_53
                        u2 = (<double> (s2 >> 11)) * INV_2_53
                        r = sqrt(-2.0 * log(u1))
                        vc = r * cos(TWO_PI * u2)
                        vs = r * sin(TWO_PI * u2)
                        out[i, 2 * p] += scale * vc
                        if 2 * p + 1 < d - 4:
                            out[i, 2 * p + 1] += scale * vs
            if noise_sigma != 0:
                key = nseed
                for p in range(4):
                    c = b[i, p]
                    key = _finalize((key + GOLDEN) ^ (<u64*> &c)[0])
                for p in range(pairs):
                    s1 = _finalize(key + (<u64> (2 * p + 1)) * GOLDEN)
                    s2 = _finalize(key + (<u64> (2 * p + 2)) * GOLDEN)
                    u1 = (<double> (s1 >> 11) + 1.0) * INV_2_53
                    u2 = (<double> (s2 >> 11)) * INV_2_53
                    r = sqrt(-2.0 * log(u1))
                    vc = r * cos(TWO_PI * u2)
                    vs = r * sin(TWO_PI * u2)
                    out[i, 2 * p] += noise_sigma * vc
                    if 2 * p + 1 < d:
                        out[i, 2 * p + 1] += noise_sigma * vs
            if aug_sigma != 0:
                key = aseed
                for p in range(4):
                    c = b[i, p]
                    key = _finalize((key + GOLDEN) ^ (<u64*> &c)[0])
                for p in range(pairs):
                    s1 = _finalize(key + (<u64> (2 * p + 1)) * GOLDEN)
                    s2 = _finalize(key + (<u64> (2 * p + 2)) * GOLDEN)
                    u1 = (<double> (s1 >> 11) + 1.0) * INV_2_53
                    u2 = (<double> (s2 >> 11)) * INV_2_53
                    r = sqrt(-2.0 * log(u1))
                    vc = r * cos(TWO_PI * u2)
                    vs = r * sin(TWO_PI * u2)
                    out[i, 2 * p] += aug_sigma * vc
                    if 2 * p + 1 < d:
                        out[i, 2 * p + 1] += aug_sigma * vs
    return out_arr


def iou_matrix(a, b):
    """Pairwise IoU of two corner-format box arrays; returns (n, m) float64."""
    cdef double[:, ::1] av = np.ascontiguousarray(
        np.asarray(a, dtype=np.float64).reshape(-1, 4))
    cdef double[:, ::1] bv = np.ascontiguousarray(
        np.asarray(b, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0]
    out_arr = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = _pair_iou(av[i, 0], av[i, 1], av[i, 2], av[i, 3],
                                      bv[j, 0], bv[j, 1], bv[j, 2], bv[j, 3])
    return out_arr


def nms_mask(boxes, double thresh):
    """Greedy suppression mask over boxes sorted by priority; (n,) uint8."""
    cdef double[:, ::1] bv = np.ascontiguousarray(
        np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = bv.shape[0]
    out_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] keep = out_arr
    cdef Py_ssize_t i, j
    cdef bint ok
    with nogil:
        for i in range(n):
            ok = True
            for j in range(i):
                if keep[j] and _pair_iou(
                        bv[i, 0], bv[i, 1], bv[i, 2], bv[i, 3],
                        bv[j, 0], bv[j, 1], bv[j, 2], bv[j, 3]) >= thresh:
                    ok = False
                    break
            if ok:
                keep[i] = 1
    return out_arr


def max_iou_assign(boxes, refs):
    """Best-overlap reference index and IoU per box; -1 when refs is empty."""
    cdef double[:, ::1] bv = np.ascontiguousarray(
        np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    cdef double[:, ::1] rv = np.ascontiguousarray(
        np.asarray(refs, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = bv.shape[0], m = rv.shape[0]
    iou_arr = np.zeros(n, dtype=np.float64)
    idx_arr = np.full(n, -1, dtype=np.int64)
    if m == 0:
        return iou_arr, idx_arr
    cdef double[::1] best = iou_arr
    cdef long long[::1] idx = idx_arr
    cdef Py_ssize_t i, j
    cdef double v
    with nogil:
        for i in range(n):
            idx[i] = 0
            for j in range(m):
                v = _pair_iou(bv[i, 0], bv[i, 1], bv[i, 2], bv[i, 3],
                              rv[j, 0], rv[j, 1], rv[j, 2], rv[j, 3])
                if v > best[i]:
                    best[i] = v
                    idx[i] = j
    return iou_arr, idx_arr

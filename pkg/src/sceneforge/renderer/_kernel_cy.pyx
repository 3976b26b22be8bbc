# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled triangle rasterization kernel.

Mirrors the expressions of ``_kernel_py`` exactly (same IEEE double
operations in the same order) so the two kernels produce bit-identical
buffers. See the python kernel for the coverage and tie-break rules.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, floor

cnp.import_array()

KERNEL_NAME = "cython"


cdef inline bint _top_left(double ax, double ay, double bx, double by) nogil:
    cdef double dx = bx - ax
    cdef double dy = by - ay
    return (dy == 0.0 and dx > 0.0) or dy < 0.0


def raster_mesh(
    cnp.ndarray[cnp.float64_t, ndim=2] uv,
    cnp.ndarray[cnp.float64_t, ndim=1] z,
    cnp.ndarray[cnp.int32_t, ndim=2] tris,
    cnp.ndarray[cnp.float32_t, ndim=2] colors,
    int instance_id,
    cnp.ndarray[cnp.float64_t, ndim=2] depth_buf,
    cnp.ndarray[cnp.int32_t, ndim=2] index_buf,
    cnp.ndarray[cnp.float32_t, ndim=3] rgb_buf,
):
    cdef Py_ssize_t h = depth_buf.shape[0]
    cdef Py_ssize_t w = depth_buf.shape[1]
    cdef Py_ssize_t ntri = tris.shape[0]
    cdef Py_ssize_t nvert = uv.shape[0]

    cdef cnp.ndarray[cnp.float64_t, ndim=1] inv_z = 1.0 / z
    cdef cnp.ndarray[cnp.float64_t, ndim=2] col_over_z = (
        colors.astype(np.float64) * inv_z[:, None]
    )

    cdef double[:, ::1] uv_v = np.ascontiguousarray(uv)
    cdef double[::1] inv_z_v = inv_z
    cdef int[:, ::1] tris_v = np.ascontiguousarray(tris)
    cdef double[:, ::1] coz_v = np.ascontiguousarray(col_over_z)
    cdef double[:, ::1] depth_v = depth_buf
    cdef int[:, ::1] index_v = index_buf
    cdef float[:, :, ::1] rgb_v = rgb_buf

    cdef Py_ssize_t t, px, py
    cdef int i0, i1, i2, tmp
    cdef double x0, y0, x1, y1, x2, y2, area2
    cdef double minx, maxx, miny, maxy
    cdef Py_ssize_t xmin, xmax, ymin, ymax
    cdef double cxp, cyp, w0, w1, w2, l0, l1, l2, zi, r, g, b
    cdef bint tl0, tl1, tl2, covered

    with nogil:
        for t in range(ntri):
            i0 = tris_v[t, 0]
            i1 = tris_v[t, 1]
            i2 = tris_v[t, 2]
            x0 = uv_v[i0, 0]
            y0 = uv_v[i0, 1]
            x1 = uv_v[i1, 0]
            y1 = uv_v[i1, 1]
            x2 = uv_v[i2, 0]
            y2 = uv_v[i2, 1]
            area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            if area2 == 0.0:
                continue
            if area2 < 0.0:
                tmp = i1
                i1 = i2
                i2 = tmp
                x1 = uv_v[i1, 0]
                y1 = uv_v[i1, 1]
                x2 = uv_v[i2, 0]
                y2 = uv_v[i2, 1]
                area2 = -area2

            minx = x0
            if x1 < minx:
                minx = x1
            if x2 < minx:
                minx = x2
            maxx = x0
            if x1 > maxx:
                maxx = x1
            if x2 > maxx:
                maxx = x2
            miny = y0
            if y1 < miny:
                miny = y1
            if y2 < miny:
                miny = y2
            maxy = y0
            if y1 > maxy:
                maxy = y1
            if y2 > maxy:
                maxy = y2

            xmin = <Py_ssize_t>ceil(minx - 0.5)
            xmax = <Py_ssize_t>floor(maxx - 0.5)
            ymin = <Py_ssize_t>ceil(miny - 0.5)
            ymax = <Py_ssize_t>floor(maxy - 0.5)
            if xmin < 0:
                xmin = 0
            if ymin < 0:
                ymin = 0
            if xmax > w - 1:
                xmax = w - 1
            if ymax > h - 1:
                ymax = h - 1
            if xmin > xmax or ymin > ymax:
                continue

            tl0 = _top_left(x1, y1, x2, y2)
            tl1 = _top_left(x2, y2, x0, y0)
            tl2 = _top_left(x0, y0, x1, y1)

            for py in range(ymin, ymax + 1):
                cyp = <double>py + 0.5
                for px in range(xmin, xmax + 1):
                    cxp = <double>px + 0.5
                    w0 = (x2 - x1) * (cyp - y1) - (y2 - y1) * (cxp - x1)
                    if w0 < 0.0 or (w0 == 0.0 and not tl0):
                        continue
                    w1 = (x0 - x2) * (cyp - y2) - (y0 - y2) * (cxp - x2)
                    if w1 < 0.0 or (w1 == 0.0 and not tl1):
                        continue
                    w2 = (x1 - x0) * (cyp - y0) - (y1 - y0) * (cxp - x0)
                    if w2 < 0.0 or (w2 == 0.0 and not tl2):
                        continue
                    l0 = w0 / area2
                    l1 = w1 / area2
                    l2 = w2 / area2
                    zi = 1.0 / (l0 * inv_z_v[i0] + l1 * inv_z_v[i1] + l2 * inv_z_v[i2])
                    if zi < depth_v[py, px] or (
                        zi == depth_v[py, px] and instance_id < index_v[py, px]
                    ):
                        r = zi * (l0 * coz_v[i0, 0] + l1 * coz_v[i1, 0] + l2 * coz_v[i2, 0])
                        g = zi * (l0 * coz_v[i0, 1] + l1 * coz_v[i1, 1] + l2 * coz_v[i2, 1])
                        b = zi * (l0 * coz_v[i0, 2] + l1 * coz_v[i1, 2] + l2 * coz_v[i2, 2])
                        depth_v[py, px] = zi
                        index_v[py, px] = instance_id
                        rgb_v[py, px, 0] = <float>r
                        rgb_v[py, px, 1] = <float>g
                        rgb_v[py, px, 2] = <float>b

"""Pure-numpy triangle rasterization kernel.

Reference implementation of the hot loop; the compiled kernel in
``_kernel_cy.pyx`` mirrors these expressions operation-for-operation so both
produce bit-identical buffers. Coverage follows the top-left fill rule with
pixel centers at (x + 0.5, y + 0.5); depth ties go to the lower instance id.

The rule relies on exact zero edge functions for pixels that coincide with
vertices or lie on axis-aligned edges; callers snap projected coordinates
onto half-integers when within round-off of them (see the renderer wrapper)
so that those cancellations are bit-exact.
"""

from __future__ import annotations

import numpy as np

KERNEL_NAME = "python"


def _top_left(ax, ay, bx, by) -> bool:
    dx = bx - ax
    dy = by - ay
    return (dy == 0.0 and dx > 0.0) or dy < 0.0


def raster_mesh(uv, z, tris, colors, instance_id, depth_buf, index_buf, rgb_buf):
    """Rasterize one mesh into shared buffers.

    uv: (V, 2) float64 projected pixel coordinates
    z: (V,) float64 camera-space depth, all > 0 (near-clipped upstream)
    tris: (T, 3) int32, colors: (V, 3) float32
    depth_buf: (H, W) float64, index_buf: (H, W) int32, rgb_buf: (H, W, 3) float32
    """
    h, w = depth_buf.shape
    inv_z = 1.0 / z
    col_over_z = colors.astype(np.float64) * inv_z[:, None]
    for t in range(len(tris)):
        i0, i1, i2 = tris[t]
        x0, y0 = uv[i0]
        x1, y1 = uv[i1]
        x2, y2 = uv[i2]
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            i1, i2 = i2, i1
            x1, y1, x2, y2 = x2, y2, x1, y1
            area2 = -area2

        xmin = int(np.ceil(min(x0, x1, x2) - 0.5))
        xmax = int(np.floor(max(x0, x1, x2) - 0.5))
        ymin = int(np.ceil(min(y0, y1, y2) - 0.5))
        ymax = int(np.floor(max(y0, y1, y2) - 0.5))
        xmin = max(xmin, 0)
        ymin = max(ymin, 0)
        xmax = min(xmax, w - 1)
        ymax = min(ymax, h - 1)
        if xmin > xmax or ymin > ymax:
            continue

        px = np.arange(xmin, xmax + 1, dtype=np.float64) + 0.5
        py = np.arange(ymin, ymax + 1, dtype=np.float64) + 0.5
        pxg, pyg = np.meshgrid(px, py)

        w0 = (x2 - x1) * (pyg - y1) - (y2 - y1) * (pxg - x1)
        w1 = (x0 - x2) * (pyg - y2) - (y0 - y2) * (pxg - x2)
        w2 = (x1 - x0) * (pyg - y0) - (y1 - y0) * (pxg - x0)

        tl0 = _top_left(x1, y1, x2, y2)
        tl1 = _top_left(x2, y2, x0, y0)
        tl2 = _top_left(x0, y0, x1, y1)
        covered = (
            ((w0 > 0.0) | ((w0 == 0.0) & tl0))
            & ((w1 > 0.0) | ((w1 == 0.0) & tl1))
            & ((w2 > 0.0) | ((w2 == 0.0) & tl2))
        )
        if not covered.any():
            continue

        l0 = w0 / area2
        l1 = w1 / area2
        l2 = w2 / area2
        zi = 1.0 / (l0 * inv_z[i0] + l1 * inv_z[i1] + l2 * inv_z[i2])

        sub_depth = depth_buf[ymin : ymax + 1, xmin : xmax + 1]
        sub_index = index_buf[ymin : ymax + 1, xmin : xmax + 1]
        sub_rgb = rgb_buf[ymin : ymax + 1, xmin : xmax + 1]
        write = covered & ((zi < sub_depth) | ((zi == sub_depth) & (instance_id < sub_index)))
        if not write.any():
            continue

        r = zi * (l0 * col_over_z[i0, 0] + l1 * col_over_z[i1, 0] + l2 * col_over_z[i2, 0])
        g = zi * (l0 * col_over_z[i0, 1] + l1 * col_over_z[i1, 1] + l2 * col_over_z[i2, 1])
        b = zi * (l0 * col_over_z[i0, 2] + l1 * col_over_z[i1, 2] + l2 * col_over_z[i2, 2])

        sub_depth[write] = zi[write]
        sub_index[write] = instance_id
        sub_rgb[write, 0] = r[write].astype(np.float32)
        sub_rgb[write, 1] = g[write].astype(np.float32)
        sub_rgb[write, 2] = b[write].astype(np.float32)

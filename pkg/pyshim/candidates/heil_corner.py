# EVOLVE-BLOCK-START
"""Boundary-biased point placement seed: origin-corner bias.

Canonical unit-area triangle (0,0), (2,0), (0,1); vertices first, then a
plastic-number low-discrepancy barycentric sequence reweighted by the vertex
weights and pushed toward the nearest edge.
"""

import math

W1 = 2.0
W2 = 0.8
W3 = 0.9
PULL = 0.5

_VERTICES = ((0.0, 0.0), (2.0, 0.0), (0.0, 1.0))
_PLASTIC = 1.324717957244746
_STRIDE_U = 1.0 / _PLASTIC
_STRIDE_V = 1.0 / (_PLASTIC * _PLASTIC)


def construct_points(n):
    points = []
    for k in range(n):
        if k < 3:
            points.append(_VERTICES[k])
            continue
        u = (0.5 + k * _STRIDE_U) % 1.0
        v = (0.5 + k * _STRIDE_V) % 1.0
        s = math.sqrt(u)
        b = [(1.0 - s) * W1, s * (1.0 - v) * W2, s * v * W3]
        total = b[0] + b[1] + b[2]
        b = [value / total for value in b]
        j = b.index(min(b))
        b[j] *= 1.0 - PULL
        total = b[0] + b[1] + b[2]
        b = [value / total for value in b]
        x = 2.0 * b[1]
        y = b[2]
        over = x / 2.0 + y
        if over > 1.0:
            scale = (1.0 - 1e-12) / over
            x *= scale
            y *= scale
        points.append((x, y))
    min_area = _min_triple_area(points)
    return points, min_area


def _min_triple_area(points):
    best = math.inf
    n = len(points)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                ax, ay = points[i]
                bx, by = points[j]
                cx, cy = points[k]
                cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
                area = abs(cross) / 2.0
                if area < best:
                    best = area
    return best


# EVOLVE-BLOCK-END


def run_heilbronn(n):
    return construct_points(n)

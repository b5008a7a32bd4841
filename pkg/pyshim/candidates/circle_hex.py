# EVOLVE-BLOCK-START
"""Grid-based circle packing seed: hex-shifted rows."""

import math

COLS_ADJ = 0.5
ROW_SHIFT = 1.0
MARGIN = 0.03


def _centers(n, width, height):
    cols = int(round(math.sqrt(n * width / height) + COLS_ADJ))
    cols = max(1, min(n, cols))
    rows = (n + cols - 1) // cols
    mx = MARGIN * width
    my = MARGIN * height
    dx = (width - 2.0 * mx) / cols
    dy = (height - 2.0 * my) / rows
    centers = []
    for r in range(rows):
        shift = ROW_SHIFT * dx / 2.0 if r % 2 == 1 else 0.0
        for c in range(cols):
            if len(centers) >= n:
                break
            x = mx + (c + 0.5) * dx + shift
            y = my + (r + 0.5) * dy
            x = min(max(x, 1e-9), width - 1e-9)
            y = min(max(y, 1e-9), height - 1e-9)
            centers.append((x, y))
    return centers


def _safe_radii(centers, width, height):
    # r_i <= min_j d_ij / 2 and r_i <= wall distance: valid by construction
    radii = []
    for i, (x, y) in enumerate(centers):
        r = min(x, y, width - x, height - y)
        for j, (xj, yj) in enumerate(centers):
            if j == i:
                continue
            d = math.sqrt((x - xj) * (x - xj) + (y - yj) * (y - yj))
            half = d / 2.0
            if half < r:
                r = half
        radii.append(max(r, 0.0))
    return radii


def construct_packing(n):
    centers = _centers(n, 1.0, 1.0)
    radii = _safe_radii(centers, 1.0, 1.0)
    return centers, radii, sum(radii)


# EVOLVE-BLOCK-END


def run_packing(n):
    return construct_packing(n)

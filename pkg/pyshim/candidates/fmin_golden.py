# EVOLVE-BLOCK-START
"""Blind point chooser seed: golden-ratio fractions.

The one-shot wire protocol cannot carry the objective callable, so this seed
chooses a fixed fraction of the bounds box deterministically.
"""

FX = 0.6180339887498949
FY = 0.3819660112501051


def minimize(bounds, iterations, seed):
    (lx, hx), (ly, hy) = bounds
    x = lx + FX * (hx - lx)
    y = ly + FY * (hy - ly)
    return (x, y)


# EVOLVE-BLOCK-END

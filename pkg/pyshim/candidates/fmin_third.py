# EVOLVE-BLOCK-START
"""Blind point chooser seed: one-third fractions.

The one-shot wire protocol cannot carry the objective callable, so this seed
chooses a fixed fraction of the bounds box deterministically.
"""

FX = 0.3333333333333333
FY = 0.6666666666666666


def minimize(bounds, iterations, seed):
    (lx, hx), (ly, hy) = bounds
    x = lx + FX * (hx - lx)
    y = ly + FY * (hy - ly)
    return (x, y)


# EVOLVE-BLOCK-END

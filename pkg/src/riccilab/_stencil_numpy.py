"""Pure-numpy fallback for the periodic finite-difference kernels.

Same arithmetic as the compiled core in ``_stencil_core``: fourth-order
centred stencils with periodic wraparound along the middle axis of a
(pre, n, post) array.  Uses ``np.roll`` instead of explicit index loops.
"""

import numpy as np


def diff1_axis(a, h):
    # grouped as symmetric differences so constants cancel exactly
    up1 = np.roll(a, -1, axis=1)
    dn1 = np.roll(a, 1, axis=1)
    up2 = np.roll(a, -2, axis=1)
    dn2 = np.roll(a, 2, axis=1)
    return (8.0 * (up1 - dn1) - (up2 - dn2)) / (12.0 * h)


def diff2_axis(a, h):
    # grouped as symmetric sums so constants cancel exactly
    up1 = np.roll(a, -1, axis=1)
    dn1 = np.roll(a, 1, axis=1)
    up2 = np.roll(a, -2, axis=1)
    dn2 = np.roll(a, 2, axis=1)
    return (16.0 * (up1 + dn1) - (up2 + dn2) - 30.0 * a) / (12.0 * h * h)

"""Values produced by the independent oracles in tests/oracles/, frozen here.

CARTESIAN_GAUSSIAN rows come from oracles/cartesian_gaussian.py for the
field a = 0.1 e^{-r^2/8}, b = a - 0.03 r^2 e^{-r^2/6} on flat R^3:
(r, E1_radial, E1_link, |grad h|, |hess h|, (Lap_f h)_radial, (Lap_f h)_link).

CURVED_WARPED rows come from oracles/curved_warped.py on the warped product
psi = 1.2 + 0.3 sin(0.7 r) over a round S^2 link, for the field given by
curved_field: (r, E1_radial, E1_link).
"""

import numpy as np

CARTESIAN_GAUSSIAN = [
    (0.5, 0.018542603866665786, 0.012720603418311771, 0.06423200779618532, 0.21379096627655872, -0.18325194665221453, -0.15977178806673042),
    (1.0, 0.018801253706031584, 0.002169684924478499, 0.10657161085742127, 0.16115599505463307, -0.15121825775725722, -0.07362409964228422),
    (2.0, 0.007557061925795749, -0.006796255889311518, 0.09944662503543994, 0.10342674190253161, -0.06161005428391104, 0.07530117745811349),
    (3.0, -0.0020002714102121955, -0.0016813577489448867, 0.047353880487610085, 0.0752169821457049, 0.003660549597033713, 0.053864835630430444),
]


def oracle_field(r):
    a = 0.1 * np.exp(-r**2 / 8)
    b = a - 0.03 * r**2 * np.exp(-r**2 / 6)
    return a, b


CURVED_WARPED = [
    (2.5, -0.0031801042755669876, -0.005789433225588601),
    (3.5, 0.00809463186746466, -0.015226084713618056),
    (4.5, 0.002808340140033297, -0.0010142952343275178),
]


def curved_background(r):
    """psi and its first two derivatives."""
    return 1.2 + 0.3 * np.sin(0.7 * r), 0.21 * np.cos(0.7 * r), -0.147 * np.sin(0.7 * r)


def curved_field(r):
    a = 0.1 * np.exp(-((r - 3.5) ** 2) / 2)
    b = 0.08 * np.cos(r) * np.exp(-((r - 3.5) ** 2) / 3)
    return a, b

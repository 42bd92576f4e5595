"""Frozen descriptor sampling pattern.

256 point pairs (x1, y1, x2, y2) inside a radius-15 disk, drawn by the
32-bit LCG s <- (1664525 s + 1013904223) mod 2**32 from seed 0x2545F491 with
coordinate floor(s * 31 / 2**32) - 15. Points outside the disk and
degenerate pairs are redrawn.
"""

import numpy as np

# fmt: off
PATTERN = np.array(
    [
        (12, 2, -12, 3), (-4, -4, -6, 11), (-5, 3, 12, -3), (-4, 5, 4, 10),
        (2, -8, -7, 2), (8, 5, -4, 8), (0, -5, -3, -12), (3, 7, -7, 13),
        (-9, -4, 4, 6), (-5, -9, -10, 10), (10, -10, 1, -12), (1, -9, -8, 7),
        (1, 9, -12, -4), (13, -1, 1, -14), (-14, -2, -2, -2), (2, 7, -2, 14),
        (12, 5, -5, -8), (10, -1, -1, -6), (-11, 9, -1, 8), (3, 0, 7, 12),
        (-6, 0, 10, -3), (-3, 12, -7, 3), (7, -9, -1, 9), (-5, 4, -3, 5),
        (7, 7, 4, -9), (-3, 6, -8, -1), (-11, 5, -9, -4), (1, 9, -4, 11),
        (-1, -10, -4, 4), (-9, 8, -2, -8), (0, -3, 4, 6), (-5, -6, 6, -7),
        (9, 0, 13, 4), (0, 14, -8, 8), (4, 9, 4, 12), (8, 1, 8, -3),
        (2, -14, -13, 3), (10, -1, 2, -11), (11, -1, -5, 8), (3, -2, 6, 1),
        (6, 2, 11, -1), (-5, 4, -7, 12), (7, -8, 1, 6), (5, -10, 2, 0),
        (3, 4, 9, 12), (7, -12, 11, 4), (-2, -9, -10, 8), (6, 2, -13, -2),
        (-6, 0, -1, -7), (-10, 5, 0, -10), (11, 5, -6, -5), (-4, -11, 0, -13),
        (-7, -13, -2, -12), (-12, -2, -6, -11), (-14, -4, -3, -5), (-3, -7, -2, -2),
        (-4, 0, 2, -1), (5, 3, -6, -4), (-13, 4, -3, 0), (-1, -11, 1, 4),
        (4, 1, -15, 0), (11, 2, 8, 0), (4, 12, -12, -9), (-6, -4, -8, 0),
        (6, 0, -6, 11), (2, 6, 4, -3), (-10, -9, -7, 5), (14, 5, -13, -5),
        (-4, -13, 2, -4), (-3, 12, -12, -6), (-5, -2, 11, 9), (-9, 10, -6, 9),
        (3, -13, 5, 5), (11, 0, 11, -2), (7, -13, -6, 10), (4, 3, 7, 7),
        (-3, 11, -9, 3), (11, 3, -11, 2), (5, -3, -2, -12), (4, -9, -6, -8),
        (11, -8, -5, -13), (0, -3, -2, -11), (-3, 0, -11, 1), (-10, -7, 7, -13),
        (3, -1, -11, 9), (-9, 7, 1, -7), (-6, -1, 12, 7), (4, -10, 7, 12),
        (4, -1, -2, 5), (-1, 6, -7, 1), (7, -5, -7, -10), (-2, -10, 9, -4),
        (5, 3, 5, 2), (-2, 13, -10, 9), (-1, -3, -6, 11), (10, -2, -1, -9),
        (-11, -5, 3, -11), (10, 3, -5, 7), (-14, 0, -9, -5), (-4, 9, -7, 5),
        (3, 9, 11, -9), (-9, -6, 3, -4), (-2, 1, -4, -11), (-7, 5, -12, 3),
        (0, 7, 7, -13), (10, 6, 11, -10), (0, 12, 4, 3), (7, -13, 13, -3),
        (4, 3, -5, -10), (5, -12, 5, -6), (-3, 11, 7, -1), (0, 12, 0, 14),
        (-5, 10, -13, 6), (7, -7, -10, 0), (-7, 13, -4, 0), (-9, -11, -1, -4),
        (-10, -3, -10, 11), (10, 0, 4, -7), (-13, -4, -8, -3), (-6, 12, -9, -11),
        (-5, 2, 9, 8), (1, -10, 3, -5), (7, 11, -10, 6), (0, 14, 2, -6),
        (13, -1, 10, -6), (4, 10, -5, -11), (-14, -4, -3, 3), (0, 3, -7, -5),
        (-10, -3, 2, 12), (5, -5, 4, -12), (3, -13, 11, -6), (5, 14, -9, 4),
        (-5, -6, 12, 3), (13, 0, 0, 4), (8, -12, 5, 6), (-5, 9, 9, -4),
        (-3, -8, -14, 5), (-1, -7, -6, -12), (-13, -7, 13, 5), (0, -5, -7, 8),
        (5, 8, 4, 5), (3, 2, -7, 10), (-10, 6, 4, -10), (-2, -11, -10, -7),
        (8, 11, -4, 12), (-2, 3, 9, -12), (8, -12, -3, 5), (11, 6, 1, -13),
        (-5, 5, 14, -1), (-3, -1, 7, -11), (-4, 14, 8, 4), (14, -1, -12, 6),
        (4, 11, -1, -12), (-9, -9, -2, -8), (5, -9, 1, 10), (-8, 10, 11, 1),
        (7, -8, -5, -6), (-3, -8, -4, 5), (-3, -12, -1, 4), (-4, -13, 6, -11),
        (-10, 6, 12, 7), (-6, 0, 5, 6), (-11, -7, -11, -5), (13, -7, 6, -7),
        (14, -3, -2, 10), (1, 12, -4, -10), (-2, 5, 5, 3), (10, -6, -5, 0),
        (-4, -12, 2, -9), (14, -3, 4, -10), (-10, 1, 7, -2), (-8, -1, -5, 11),
        (-9, 10, 5, 8), (-5, -10, 12, -2), (-14, 1, 1, -5), (0, -11, -8, -12),
        (-10, 2, -14, 5), (3, 14, 5, -10), (-14, 2, -1, 1), (4, -9, 2, 10),
        (-10, 1, -4, -11), (-12, 8, -5, 7), (12, -7, 2, -8), (12, 6, -10, 11),
        (-3, -8, 4, 11), (-11, -7, 13, 3), (0, 10, -6, 1), (8, -10, -9, 12),
        (-9, 10, -9, -4), (4, 7, -3, -7), (-11, 6, -1, -14), (-7, -6, 11, 2),
        (8, 7, 2, -11), (2, -6, 3, 1), (-8, -5, -2, -2), (0, 1, -7, -6),
        (-3, 0, -10, -10), (4, 14, -5, 7), (3, -13, -3, -1), (-11, -6, 9, -5),
        (8, -9, -7, -1), (-3, 14, -6, -11), (-1, -11, -13, 2), (11, 3, -7, 7),
        (-4, 2, 5, 13), (7, 12, -12, 7), (14, -1, 8, 9), (-2, 0, -11, 8),
        (-10, -3, -10, 6), (-4, 6, 7, 12), (9, 12, 2, -9), (2, 1, -1, 10),
        (-13, -7, 11, 3), (-4, -6, 12, -3), (1, 4, 1, 3), (7, -6, 4, 13),
        (-13, 2, 9, 10), (-7, -1, 4, -5), (-4, -11, -6, 11), (-1, -14, -3, 6),
        (2, -6, -1, -14), (-1, -14, -6, -7), (7, -5, -11, -5), (1, -11, 5, 13),
        (-5, 3, -6, -3), (-12, -1, -8, 6), (-9, 5, 6, 1), (-10, -5, -2, 0),
        (-3, 7, -9, -7), (5, -4, -9, 3), (2, 0, 6, 12), (-5, 1, -7, 11),
        (-1, 6, 4, -2), (-14, -1, -6, -12), (-10, 11, 2, -6), (2, 14, -10, -7),
        (-4, 13, 3, -5), (-11, -10, 7, 12), (6, -6, 10, 1), (-11, 1, -9, 8),
        (9, 9, 5, -5), (11, -5, 2, 8), (1, 5, -2, -4), (5, -1, 7, 3),
        (-1, 0, 11, 0), (-9, 8, 12, -2), (-11, -9, 4, -1), (0, 8, -7, -8),
        (10, 11, 8, 3), (4, 13, 9, -8), (-4, -6, 3, -13), (-1, -1, -13, 3),
        (4, -5, 8, 2), (-6, 9, 13, -5), (-10, 5, -13, -4), (-7, -1, 7, -5),
    ],
    dtype=np.int16,
)
# fmt: on

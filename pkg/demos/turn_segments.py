"""
Turn segments for self-calibration
==================================

Self-calibration needs rotation, so only the parts of a drive around turns
are useful. Simplify the planar GPS track with Ramer-Douglas-Peucker; every
vertex that survives is a turn, and a window of frames either side of it
becomes a segment.
"""

import numpy as np

from signpos.align import rdp_simplify, turn_ranges
from signpos.errors import NoTurns
from signpos.synth import ScenarioSpec, generate_journey

journey = generate_journey(ScenarioSpec(seed=0, gps_noise_sigma=0.5))
xy = journey.trajectory.gps[:, :2]

###############################################################################
# Straight stretches collapse to single segments. A rounded corner keeps a few
# vertices, and their windows merge into one range per turn.
keep = rdp_simplify(xy, epsilon=2.0)
print(f"{len(xy)} fixes simplified to {len(keep)} vertices")
for lo, hi in turn_ranges(journey.trajectory.frame_ids, xy, epsilon=2.0, window=25):
    print(f"frames {lo}..{hi}")

###############################################################################
# A straight road has nothing to offer.
line = np.column_stack([np.arange(200.0), np.zeros(200)])
try:
    turn_ranges(np.arange(200), line)
except NoTurns as exc:
    print("straight track:", exc)

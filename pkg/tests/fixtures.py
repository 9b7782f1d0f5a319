"""Constructed inputs shared by unit and acceptance tests."""
import numpy as np


def ranking_flip():
    """Two detectors and two ground truths whose AUC ordering provably flips.

    ``broad`` fires at 0.6 over a whole 8x8 square and 0.0 elsewhere;
    ``sharp`` fires at 1.0 on the central 4x4 core and at 0.6 on the left
    half of the ring around it.

    * Against ``core`` (the 4x4 core), ``sharp`` isolates the core at its top
      threshold (P-bar 1, recall 1) so its AUC is 1; ``broad`` can only
      detect core and ring together, so its P-bar at recall 1 is below 1.
    * Against ``square`` (the full 8x8 square), ``broad`` detects exactly the
      square at its only threshold (AUC 1), while ``sharp`` never covers the
      right half of the ring, so its recall tops out below 1.
    """
    shape = (24, 24)
    square = np.zeros(shape, np.uint8)
    square[8:16, 8:16] = 1
    core = np.zeros(shape, np.uint8)
    core[10:14, 10:14] = 1
    broad = 0.6 * square.astype(float)
    sharp = core.astype(float)
    ring_left = (square == 1) & (core == 0)
    ring_left[:, 12:] = False
    sharp[ring_left] = 0.6
    return {"broad": broad, "sharp": sharp}, {"core": core, "square": square}

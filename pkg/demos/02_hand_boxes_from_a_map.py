"""From a hand probability map to candidate hand boxes.

An elongated blob touching the bottom border stands in for a forearm
entering the frame.  The extracted reference box keeps only the hand end of
the blob (1.5 times the minor axis along the major axis); the candidate grid
then shifts and rescales that box.

    python3 demos/02_hand_boxes_from_a_map.py
"""
import numpy as np

from homctx.geometry import ProbabilityMap, extract_reference_hand_boxes, generate_candidates

height, width = 240, 320
y, x = np.mgrid[0:height, 0:width]
# forearm: 24 px wide, 96 px long, its lower end cut by the image border
arm = ((x + 0.5 - 110) / 12.0) ** 2 + ((y + 0.5 - 190) / 48.0) ** 2 <= 1.0
# a second, round blob that is not truncated
palm = ((x + 0.5 - 240) / 20.0) ** 2 + ((y + 0.5 - 90) / 22.0) ** 2 <= 1.0
noise = np.random.default_rng(0).uniform(0.0, 0.3, (height, width))
prob = ProbabilityMap(np.where(arm | palm, 0.95, noise))

boxes = extract_reference_hand_boxes(prob)
for b in boxes:
    x0, y0, x1, y1 = b.to_corners()
    print(f"reference box: x {x0:.0f}..{x1:.0f}, y {y0:.0f}..{y1:.0f} (w {b.w:.0f}, h {b.h:.0f})")

cands = generate_candidates(boxes[0])
print(f"\n{len(cands)} candidates around the first box; widths {sorted({round(c.w) for c in cands})}")

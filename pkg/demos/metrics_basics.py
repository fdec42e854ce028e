"""Tour of the evaluation metrics: IoU, Hausdorff distance, coverage.

Run:  python3 demos/metrics_basics.py
"""
import numpy as np

from seglabel.metrics import (CoverageCriteria, directed_hausdorff, evaluate,
                              hausdorff, iou, point_set)
from seglabel.rasters import ClassMask

# Two small masks: the prediction misses the right edge of the truth.
truth_ids = np.zeros((12, 12), dtype=np.uint8)
truth_ids[3:9, 3:9] = 1
pred_ids = np.zeros((12, 12), dtype=np.uint8)
pred_ids[3:9, 3:7] = 1

truth = point_set(ClassMask(truth_ids), 1)
pred = point_set(ClassMask(pred_ids), 1)

print("IoU:", iou(pred, truth))
print("h(pred -> truth):", directed_hausdorff(pred, truth))
print("h(truth -> pred):", directed_hausdorff(truth, pred))
print("H (symmetric):", hausdorff(pred, truth))

# Textbook point sets: a unit 3-4-5 triangle gives H = 5.
print("\nH({(0,0)}, {(3,4)}) =", hausdorff([(0, 0)], [(3, 4)]))

# Coverage applies strict thresholds: IoU must exceed 0.60 AND HD stay below 10.
crit = CoverageCriteria()
for iou_v, hd_v in [(0.60, 5.0), (0.70, 10.0), (0.61, 9.9)]:
    print(f"iou={iou_v} hd={hd_v} -> covered: {crit.passes(iou_v, hd_v)}")

# evaluate() scores a batch of mask pairs and aggregates.
preds = [ClassMask(pred_ids), ClassMask(truth_ids), ClassMask.zeros(12, 12)]
truths = [ClassMask(truth_ids)] * 3
report = evaluate(preds, truths, class_id=1)
print("\nper-image records:")
for r in report.records:
    print(f"  {r.image_id}: iou={r.iou:.3f} hd={r.hd} detected={r.detected} "
          f"covered={r.covered}")
print(f"mean IoU {report.mean_iou:.3f} | recall {report.recall:.3f} | "
      f"coverage {report.coverage_rate:.3f}")
print("\nCSV:\n" + report.to_csv())

// Scores two hand-made label maps: the prediction merges two ground-truth objects.

#include <iostream>

#include "wnet.hpp"

int main() {
  wnet::LabelMap gt(4, 4), pred(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      gt.at(y, x) = x < 2 ? 1 : 2;
      pred.at(y, x) = 1;
    }
  std::cout << "best dice pred->gt " << wnet::best_dice(pred, gt) << "\n";
  std::cout << "best dice gt->pred " << wnet::best_dice(gt, pred) << "\n";
  std::cout << "SBD " << wnet::symmetric_best_dice(pred, gt) << "\n";
  const auto ap = wnet::average_precision(pred, gt, wnet::default_iou_thresholds());
  std::cout << "AP@0.5 " << ap.front() << "\n";
  return 0;
}

// Generates a few scenes, trains a small W-Net briefly and segments a held-out scene.

#include <iostream>

#include "wnet.hpp"

int main() {
  wnet::ExperimentSpec spec;
  wnet::apply_fast_profile(spec);
  spec.data.train_count = 40;
  spec.data.val_count = 4;
  spec.train.max_steps = 100;

  const auto data = wnet::make_ablation_data(spec.data, 7);
  auto result = wnet::train(data.train, {}, spec.train, [](const wnet::LogRow& r, const wnet::ModelParams<float>&) {
    if (r.step % 20 == 0) std::cout << "step " << r.step << "  d_loss " << r.d_loss << "  e_loss " << r.e_loss << "\n";
  });

  const auto& scene = data.val.front();
  auto pred = wnet::predict(scene.image, result.params, spec.train.topology, spec.train.cluster,
                            wnet::ClusterMethod::angular, &scene.foreground);
  std::cout << "seeds found: " << pred.segmentation.seeds.size() << ", ground-truth instances: " << scene.labels.max_id()
            << "\n";
  std::cout << "SBD on the held-out scene: " << wnet::symmetric_best_dice(pred.segmentation.labels, scene.labels) << "\n";
  return 0;
}

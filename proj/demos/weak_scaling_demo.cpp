// Weak-scaling run of the toy 3D convolutional regressor on 1, 2 and 4
// in-process workers, reported in the same layout as the published tables.

#include <iostream>

#include "scalelab.hpp"

using namespace scalelab;

int main() {
  harness::TrainConfig cfg;
  cfg.per_worker_batch = 2;
  cfg.samples_per_worker_per_epoch = 8;
  cfg.epochs = 2;
  cfg.sample_side = 6;

  auto m = harness::measure_scaling(cfg, {1, 2, 4}, 2);
  if (m.failure_kind) {
    std::cerr << "failed: " << m.failure << "\n";
    return 1;
  }
  for (const auto& run : m.runs) {
    if (run.repeat != 0) continue;
    for (const auto& e : run.epochs)
      std::cout << "workers=" << run.workers << " epoch=" << e.epoch << " loss=" << e.mean_loss << "\n";
  }
  std::cout << "\n"
            << report::render_table(report::compute_scaling_report(m.records), report::TableFormat::markdown);
  return 0;
}

// Four in-process ranks average a vector with the ring allreduce and print
// what each rank ends up holding.

#include <cstdio>
#include <thread>
#include <vector>

#include "scalelab.hpp"

using namespace scalelab;

int main() {
  constexpr int kRanks = 4;
  constexpr std::size_t kLength = 10;

  auto world = coll::make_inprocess_world(kRanks);
  std::vector<std::vector<double>> results(kRanks);
  std::vector<std::thread> threads;
  for (int r = 0; r < kRanks; ++r) {
    threads.emplace_back([&, r] {
      std::vector<double> mine(kLength);
      for (std::size_t i = 0; i < kLength; ++i) mine[i] = static_cast<double>(r * 100 + i);
      results[r] = coll::allreduce(world.ranks[r], mine, coll::ReduceOp::average());
    });
  }
  for (auto& t : threads) t.join();

  const auto schedule = coll::build_ring_schedule(kRanks, kLength);
  std::printf("chunks:");
  for (std::size_t c = 0; c < kRanks; ++c) std::printf(" [%zu,+%zu)", schedule.chunk_begin(c), schedule.chunk_size(c));
  std::printf("\n");
  for (int r = 0; r < kRanks; ++r) {
    std::printf("rank %d:", r);
    for (double v : results[r]) std::printf(" %g", v);
    std::printf("\n");
  }
  return 0;
}

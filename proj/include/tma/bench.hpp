#pragma once

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace tma {

/// Serial reference kernels against their OpenMP versions on synthetic data:
/// every probe x gallery pair of `identities` persons in dimension `dim`.
struct BenchConfig {
  int identities = 300;
  int dim = 60;
  int reps = 5;
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::string kernel;
  double serial_ms = 0.0;    // median over reps
  double parallel_ms = 0.0;
  double speedup = 0.0;
  double max_abs_diff = 0.0;  // between the two outputs
};

struct BenchResult {
  BenchConfig config;
  int threads = 1;
  std::vector<BenchRow> rows;
};

BenchResult run_bench(const BenchConfig& cfg);

void to_json(nlohmann::json& j, const BenchResult& r);
void print_bench(std::ostream& out, const BenchResult& r);

}  // namespace tma

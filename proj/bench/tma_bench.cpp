// Standalone kernel benchmark; same as `tma bench` with a sweep over sizes.
#include "tma/bench.hpp"
#include "tma/label_log.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"serial vs OpenMP kernel timings"};
  std::vector<int> sizes{100, 300, 600};
  int dim = 60, reps = 5;
  std::string json_out;
  app.add_option("--identities", sizes, "persons per camera, one run each")->capture_default_str();
  app.add_option("--dim", dim, "feature dimension")->capture_default_str();
  app.add_option("--reps", reps, "repetitions")->capture_default_str();
  app.add_option("--json", json_out, "write all results as a JSON array");
  CLI11_PARSE(app, argc, argv);

  try {
    nlohmann::json all = nlohmann::json::array();
    for (int n : sizes) {
      tma::BenchConfig cfg;
      cfg.identities = n;
      cfg.dim = dim;
      cfg.reps = reps;
      const tma::BenchResult r = tma::run_bench(cfg);
      tma::print_bench(std::cout, r);
      std::cout << '\n';
      all.push_back(r);
    }
    if (!json_out.empty()) tma::write_json_atomic(json_out, all);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

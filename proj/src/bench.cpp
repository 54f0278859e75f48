#include "tma/bench.hpp"

#include "tma/kernels.hpp"
#include "tma/synthetic.hpp"
#include "tma/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <ostream>

namespace tma {

namespace {

template <class F>
double median_ms(int reps, F&& f) {
  std::vector<double> t;
  for (int r = 0; r < reps; ++r) {
    const auto a = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

double max_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

BenchResult run_bench(const BenchConfig& cfg) {
  if (cfg.identities < 2 || cfg.dim < 1 || cfg.reps < 1) throw InvalidArgument("bench: bad sizes");
  SyntheticConfig sc;
  sc.identities = cfg.identities;
  sc.dim = cfg.dim;
  sc.latent = std::max(1, cfg.dim / 3);
  sc.seed = cfg.seed;
  const std::vector<FeatureRecord> recs = make_synthetic(sc);
  const std::size_t n = static_cast<std::size_t>(cfg.identities);
  const std::span<const FeatureRecord> probes(recs.data(), n), gallery(recs.data() + n, n);

  std::vector<LabeledPair> pairs;
  pairs.reserve(n * n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t g = 0; g < n; ++g) pairs.push_back({p, n + g, p == g ? 1 : -1});
  const PairView view{recs, pairs};
  TrainerConfig tc;
  tc.seed = cfg.seed;
  const ModelState m = initialize(cfg.dim, tc);

  BenchResult out;
  out.config = cfg;
  out.threads = kernel_threads();
  auto row = [&](const std::string& name, auto serial, auto parallel) {
    decltype(serial()) a, b;
    BenchRow r;
    r.kernel = name;
    r.serial_ms = median_ms(cfg.reps, [&] { a = serial(); });
    r.parallel_ms = median_ms(cfg.reps, [&] { b = parallel(); });
    r.speedup = r.parallel_ms > 0.0 ? r.serial_ms / r.parallel_ms : 0.0;
    r.max_abs_diff = max_diff(a, b);
    out.rows.push_back(r);
  };
  row("batch_gradient.gK", [&] { return reference::batch_gradient(m.K, m.P, view).gK; },
      [&] { return kernels::batch_gradient(m.K, m.P, view).gK; });
  row("pair_margins", [&] { return reference::pair_margins(m.K, m.P, view); },
      [&] { return kernels::pair_margins(m.K, m.P, view); });
  row("score_matrix", [&] { return reference::score_matrix(m, probes, gallery); },
      [&] { return kernels::score_matrix(m, probes, gallery); });
  const std::span<const FeatureRecord> verts(recs.data(), std::min<std::size_t>(recs.size(), 200));
  row("vertex_margins", [&] { return reference::vertex_margins(m, verts); },
      [&] { return kernels::vertex_margins(m, verts); });
  return out;
}

void to_json(nlohmann::json& j, const BenchResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& x : r.rows)
    rows.push_back({{"kernel", x.kernel},
                    {"serial_ms", x.serial_ms},
                    {"parallel_ms", x.parallel_ms},
                    {"speedup", x.speedup},
                    {"max_abs_diff", x.max_abs_diff}});
  j = {{"identities", r.config.identities},
       {"dim", r.config.dim},
       {"reps", r.config.reps},
       {"threads", r.threads},
       {"rows", rows}};
}

void print_bench(std::ostream& out, const BenchResult& r) {
  out << "threads " << r.threads << ", " << r.config.identities << " x " << r.config.identities
      << " pairs, d = " << r.config.dim << ", median of " << r.config.reps << '\n';
  out << std::left << std::setw(20) << "kernel" << std::right << std::setw(12) << "serial ms"
      << std::setw(12) << "omp ms" << std::setw(10) << "speedup" << std::setw(12) << "max diff" << '\n';
  for (const auto& x : r.rows)
    out << std::left << std::setw(20) << x.kernel << std::right << std::fixed << std::setprecision(2)
        << std::setw(12) << x.serial_ms << std::setw(12) << x.parallel_ms << std::setw(10)
        << x.speedup << std::scientific << std::setprecision(1) << std::setw(12) << x.max_abs_diff
        << std::defaultfloat << '\n';
}

}  // namespace tma

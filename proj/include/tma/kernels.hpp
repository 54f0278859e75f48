#pragma once

// Data-parallel kernels shared by the trainer, the selection stage and the
// evaluator. tma::kernels holds the OpenMP versions; tma::reference holds
// plain serial loops over the metric-core functions, kept for testing and
// for the benchmark comparison.
//
// All OpenMP kernels are deterministic: work is split so that every output
// element is produced by exactly one thread with a fixed summation order,
// so results do not depend on the thread count.

#include "tma/types.hpp"

namespace tma {

struct BatchGradient {
  Mat gK;                   // mean hinge subgradient w.r.t. K
  Mat gP;                   // mean hinge subgradient w.r.t. P
  double mean_loss = 0.0;   // mean hinge loss
  std::size_t active = 0;   // pairs with y * margin < 1
};

namespace kernels {

/// Mean hinge subgradients and loss over `view.pairs` at (K, P). Projects
/// every referenced record once, so the cost is linear in the number of
/// distinct images plus the number of pairs.
BatchGradient batch_gradient(const Mat& K, const Mat& P, const PairView& view);

/// margin(x_i, x_j) for every listed pair.
std::vector<double> pair_margins(const Mat& K, const Mat& P, const PairView& view);

/// rows = probes, cols = gallery, entry = margin.
Mat score_matrix(const ModelState& state, std::span<const FeatureRecord> probes,
                 std::span<const FeatureRecord> gallery);

/// Symmetric matrix of margins between every two vertices; zero diagonal.
Mat vertex_margins(const ModelState& state, std::span<const FeatureRecord> vertices);

}  // namespace kernels

namespace reference {

BatchGradient batch_gradient(const Mat& K, const Mat& P, const PairView& view);
std::vector<double> pair_margins(const Mat& K, const Mat& P, const PairView& view);
Mat score_matrix(const ModelState& state, std::span<const FeatureRecord> probes,
                 std::span<const FeatureRecord> gallery);
Mat vertex_margins(const ModelState& state, std::span<const FeatureRecord> vertices);

}  // namespace reference

/// Number of OpenMP threads the kernels will use.
int kernel_threads();

}  // namespace tma

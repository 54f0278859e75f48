#pragma once

#include "tma/kernels.hpp"
#include "tma/metric.hpp"
#include "tma/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>

namespace tma {

struct TrainerConfig {
  double alpha = 0.001;  // l2,1 weight on K
  double beta = 0.001;   // l2,1 weight on P
  double eta = 1.0;      // step size
  double rho = 1.0;      // augmented Lagrangian penalty
  int epochs = 200;      // S
  /// T. Zero means "twice the number of training pairs".
  int iters_per_epoch = 0;
  std::uint64_t seed = 1;
  /// Rows of K and P for a fresh model. Zero means rank = feature dimension.
  int rank = 0;
  /// Half-width of the uniform distribution used for a fresh K and P.
  double init_scale = 0.1;
  /// Full-gradient iterations per deterministic epoch. Zero means T.
  int deterministic_inner_steps = 0;
  /// Evaluate the objective and constraint residuals after every epoch.
  bool record_trace = true;

  void validate() const;
  int resolved_iters(std::size_t num_pairs) const;
};

void to_json(nlohmann::json& j, const TrainerConfig& c);
void from_json(const nlohmann::json& j, TrainerConfig& c);

/// Per-epoch diagnostics.
struct EpochStats {
  double objective = 0.0;   // mean hinge + alpha ||K||_{2,1} + beta ||P||_{2,1}
  double residual_k = 0.0;  // ||K - U||_F
  double residual_p = 0.0;  // ||P - V||_F
  std::size_t active = 0;   // pairs with a nonzero hinge
  double seconds = 0.0;
};

struct TrainingTrace {
  double initial_objective = 0.0;
  std::vector<EpochStats> epochs;
  double seconds = 0.0;
};

/// Parameters and full-data mean subgradients at the start of an epoch.
class EpochSnapshot {
 public:
  EpochSnapshot(const ModelState& state, const PairView& view);

  const Mat& K() const { return K_; }
  const Mat& P() const { return P_; }
  const Mat& avg_gK() const { return grad_.gK; }
  const Mat& avg_gP() const { return grad_.gP; }
  double mean_loss() const { return grad_.mean_loss; }

  /// Hinge subgradient of pair `i` evaluated at the snapshot parameters.
  Gradients sample_gradient(std::size_t i) const;

  // Cached pieces used by the epoch loop: K_s x_p, K_s x_g, P_s (x_p - x_g)
  // and whether the hinge is active at the snapshot.
  struct SampleCache {
    Vec kp, kg, pd;
    bool active = false;
  };
  const SampleCache& cache(std::size_t i) const { return cache_[i]; }

 private:
  PairView view_;
  Mat K_, P_;
  BatchGradient grad_;
  std::vector<SampleCache> cache_;
};

EpochSnapshot snapshot(const ModelState& state, const PairView& view);

/// Row-wise group soft-thresholding of M + Dual / rho with threshold weight / rho.
Mat prox_group_soft_threshold(const Mat& M, const Mat& Dual, double rho, double weight);

/// Called with (t, K_t, P_t) after every inner iteration, t = 1..T.
using IterateObserver = std::function<void(int, const Mat&, const Mat&)>;

/// One stochastic ADMM epoch: snapshot, T variance-reduced sampled updates of
/// K then P, iterate averaging, group soft-thresholding of U and V, dual ascent.
/// `rng` supplies the sample indices.
ModelState epoch(const ModelState& state, const PairView& view, const TrainerConfig& cfg,
                 std::mt19937_64& rng, const IterateObserver& observer = {});

/// One deterministic ADMM epoch: the same block structure, with every sampled
/// gradient replaced by the exact full-data gradient at the current iterate.
ModelState deterministic_epoch(const ModelState& state, const PairView& view,
                               const TrainerConfig& cfg, const IterateObserver& observer = {});

/// K, P uniform in [-init_scale, init_scale], U = K, V = P, zero multipliers.
ModelState initialize(Eigen::Index dim, const TrainerConfig& cfg);

struct TrainingResult {
  ModelState state;
  TrainingTrace trace;
};

/// Runs cfg.epochs stochastic epochs from `init`, or from a fresh seeded
/// initialization when `init` is empty. Passing a previous model is a warm
/// restart: all six matrices carry over.
TrainingResult train(const PairView& view, const TrainerConfig& cfg,
                     const std::optional<ModelState>& init = std::nullopt);

/// As train(), with deterministic epochs.
TrainingResult train_deterministic(const PairView& view, const TrainerConfig& cfg,
                                   const std::optional<ModelState>& init = std::nullopt);

}  // namespace tma

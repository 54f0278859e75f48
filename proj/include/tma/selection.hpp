#pragma once

#include "tma/platt.hpp"
#include "tma/types.hpp"

#include <iosfwd>

namespace tma {

/// Vertex 0 is the probe, vertex i > 0 is gallery[i - 1].
struct SimilarityGraph {
  Mat W;  // symmetric, zero diagonal, entries in (0, 1)

  Eigen::Index size() const { return W.rows(); }
};

/// W_ij = cal(margin(x_i, x_j)) over every vertex pair.
SimilarityGraph build_graph(const FeatureRecord& probe, std::span<const FeatureRecord> gallery,
                            const ModelState& state, const PlattCalibrator& cal);

/// Throws InvalidArgument unless W is square, symmetric, nonnegative, finite,
/// with a zero diagonal.
void validate_graph(const Mat& W);

/// One replicator update h_i <- h_i (W h)_i / h^T W h. Throws DegenerateGraph
/// when h^T W h == 0.
Vec replicator_step(const Mat& W, const Vec& h);

struct DominantSetResult {
  Vec h;
  int iterations = 0;
  bool converged = false;  // false: stopped at max_iters
  double objective = 0.0;  // h^T W h at the returned h
};

/// Replicator iterations from `start` (uniform when empty) until two
/// consecutive objectives differ by at most `epsilon`.
DominantSetResult dominant_set(const Mat& W, double epsilon, int max_iters = 10000,
                               const Vec& start = {});

struct SelectionConfig {
  double epsilon = 0.1;
  double support_tau = 0.0;  // 0: 1 / (10 |V|) on each peeled graph
  int max_iters = 10000;
  // Multiplicative noise on the uniform start, as in +-jitter. 0 keeps the
  // exact uniform start.
  double init_jitter = 0.0;
  std::uint64_t jitter_seed = 0;
};

void to_json(nlohmann::json& j, const SelectionConfig& c);
void from_json(const nlohmann::json& j, SelectionConfig& c);

struct ProbeRelevantSet {
  std::vector<std::size_t> members;  // indices into the gallery list, ascending
  std::vector<double> support_values;  // h of each member in the final round
  int peel_rounds = 0;
  bool exhausted = false;   // peeling removed every gallery vertex first
  bool degenerate = false;  // a round hit h^T W h == 0
  bool truncated = false;   // some round stopped at max_iters
};

/// Extracts dominant sets, peeling those that do not contain the probe, until
/// the probe's own set is found.
ProbeRelevantSet relevant_set_from_graph(const SimilarityGraph& g, const SelectionConfig& cfg);

ProbeRelevantSet probe_relevant_set(const FeatureRecord& probe,
                                    std::span<const FeatureRecord> gallery,
                                    const ModelState& state, const PlattCalibrator& cal,
                                    const SelectionConfig& cfg = {});

/// Edge list `i j w`, i < j, one line per edge.
void write_graph(std::ostream& out, const SimilarityGraph& g);

}  // namespace tma

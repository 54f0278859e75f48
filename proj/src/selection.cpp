#include "tma/selection.hpp"

#include "tma/kernels.hpp"

#include <cmath>
#include <ostream>
#include <random>

namespace tma {

SimilarityGraph build_graph(const FeatureRecord& probe, std::span<const FeatureRecord> gallery,
                            const ModelState& state, const PlattCalibrator& cal) {
  if (gallery.empty()) throw InvalidArgument("build_graph: empty gallery");
  std::vector<FeatureRecord> vertices;
  vertices.reserve(gallery.size() + 1);
  vertices.push_back(probe);
  vertices.insert(vertices.end(), gallery.begin(), gallery.end());
  validate_records(vertices, state.dim());

  SimilarityGraph g;
  g.W = kernels::vertex_margins(state, vertices);
  const Eigen::Index n = g.W.rows();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g.W(i, j) = i == j ? 0.0 : cal(g.W(i, j));
  return g;
}

void validate_graph(const Mat& W) {
  if (W.rows() != W.cols()) throw InvalidArgument("graph matrix must be square");
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    if (W(i, i) != 0.0) throw InvalidArgument("graph diagonal must be zero");
    for (Eigen::Index j = 0; j < W.cols(); ++j) {
      if (!std::isfinite(W(i, j)) || W(i, j) < 0.0)
        throw InvalidArgument("graph weights must be finite and nonnegative");
      if (W(i, j) != W(j, i)) throw InvalidArgument("graph matrix must be symmetric");
    }
  }
}

Vec replicator_step(const Mat& W, const Vec& h) {
  if (W.rows() != h.size() || W.cols() != h.size())
    throw InvalidArgument("replicator_step: size mismatch");
  // sum_i h_i (W h)_i is h^T W h, so dividing by it both applies the update
  // and lands exactly on the simplex up to rounding.
  Vec v = h.cwiseProduct(W * h);
  const double obj = v.sum();
  if (!(obj > 0.0)) throw DegenerateGraph("replicator_step: h^T W h is zero");
  v /= obj;
  return v;
}

DominantSetResult dominant_set(const Mat& W, double epsilon, int max_iters, const Vec& start) {
  if (!(epsilon > 0.0)) throw InvalidArgument("dominant_set: epsilon must be > 0");
  if (max_iters < 1) throw InvalidArgument("dominant_set: max_iters must be >= 1");
  const Eigen::Index n = W.rows();
  if (n == 0 || W.cols() != n) throw InvalidArgument("dominant_set: bad graph shape");
  DominantSetResult r;
  if (start.size() == 0) {
    r.h = Vec::Constant(n, 1.0 / static_cast<double>(n));
  } else {
    if (start.size() != n || (start.array() < 0.0).any())
      throw InvalidArgument("dominant_set: start must be a nonnegative vector of size |V|");
    r.h = start / start.sum();
  }
  r.objective = r.h.dot(W * r.h);
  while (r.iterations < max_iters) {
    Vec next = replicator_step(W, r.h);
    const double obj = next.dot(W * next);
    ++r.iterations;
    const double diff = std::abs(obj - r.objective);
    r.h = std::move(next);
    r.objective = obj;
    if (diff <= epsilon) {
      r.converged = true;
      break;
    }
  }
  return r;
}

void to_json(nlohmann::json& j, const SelectionConfig& c) {
  j = {{"epsilon", c.epsilon},
       {"support_tau", c.support_tau},
       {"max_iters", c.max_iters},
       {"init_jitter", c.init_jitter},
       {"jitter_seed", c.jitter_seed}};
}

void from_json(const nlohmann::json& j, SelectionConfig& c) {
  const SelectionConfig d;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.support_tau = j.value("support_tau", d.support_tau);
  c.max_iters = j.value("max_iters", d.max_iters);
  c.init_jitter = j.value("init_jitter", d.init_jitter);
  c.jitter_seed = j.value("jitter_seed", d.jitter_seed);
}

ProbeRelevantSet relevant_set_from_graph(const SimilarityGraph& g, const SelectionConfig& cfg) {
  if (g.size() < 1) throw InvalidArgument("relevant set: empty graph");
  if (!(cfg.support_tau >= 0.0) || !(cfg.init_jitter >= 0.0) || cfg.init_jitter >= 1.0)
    throw InvalidArgument("relevant set: bad support_tau or init_jitter");
  std::mt19937_64 rng(cfg.jitter_seed);
  std::uniform_real_distribution<double> noise(-cfg.init_jitter, cfg.init_jitter);

  ProbeRelevantSet out;
  std::vector<Eigen::Index> alive(static_cast<std::size_t>(g.size()));
  for (Eigen::Index i = 0; i < g.size(); ++i) alive[static_cast<std::size_t>(i)] = i;

  while (true) {
    if (alive.size() == 1) {  // only the probe is left
      out.exhausted = true;
      return out;
    }
    ++out.peel_rounds;
    const auto n = static_cast<Eigen::Index>(alive.size());
    Mat sub(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = 0; b < n; ++b)
        sub(a, b) = g.W(alive[static_cast<std::size_t>(a)], alive[static_cast<std::size_t>(b)]);

    Vec start;
    if (cfg.init_jitter > 0.0) {
      start.resize(n);
      for (Eigen::Index a = 0; a < n; ++a) start[a] = 1.0 + noise(rng);
    }
    std::vector<Eigen::Index> support;
    Vec h;
    try {
      const DominantSetResult ds = dominant_set(sub, cfg.epsilon, cfg.max_iters, start);
      if (!ds.converged) out.truncated = true;
      h = ds.h;
      const double tau = cfg.support_tau > 0.0 ? cfg.support_tau : 0.1 / static_cast<double>(n);
      for (Eigen::Index a = 0; a < n; ++a)
        if (h[a] > tau) support.push_back(a);
    } catch (const DegenerateGraph&) {
      // No structure left: everything still alive is one cluster.
      out.degenerate = true;
      h = Vec::Constant(n, 1.0 / static_cast<double>(n));
      for (Eigen::Index a = 0; a < n; ++a) support.push_back(a);
    }

    // alive[0] is always the probe.
    if (!support.empty() && support.front() == 0) {
      for (auto a : support) {
        if (a == 0) continue;
        out.members.push_back(static_cast<std::size_t>(alive[static_cast<std::size_t>(a)] - 1));
        out.support_values.push_back(h[a]);
      }
      return out;
    }
    std::vector<Eigen::Index> rest;
    std::size_t k = 0;
    for (Eigen::Index a = 0; a < n; ++a) {
      if (k < support.size() && support[k] == a) {
        ++k;
        continue;
      }
      rest.push_back(alive[static_cast<std::size_t>(a)]);
    }
    if (rest.size() == alive.size()) {
      // Empty support cannot happen on the simplex, but never loop forever.
      out.exhausted = true;
      return out;
    }
    alive = std::move(rest);
  }
}

ProbeRelevantSet probe_relevant_set(const FeatureRecord& probe,
                                    std::span<const FeatureRecord> gallery,
                                    const ModelState& state, const PlattCalibrator& cal,
                                    const SelectionConfig& cfg) {
  return relevant_set_from_graph(build_graph(probe, gallery, state, cal), cfg);
}

void write_graph(std::ostream& out, const SimilarityGraph& g) {
  const auto old = out.precision(17);
  for (Eigen::Index i = 0; i < g.size(); ++i)
    for (Eigen::Index j = i + 1; j < g.size(); ++j) out << i << ' ' << j << ' ' << g.W(i, j) << '\n';
  out.precision(old);
}

}  // namespace tma

// Serial reference versions of the kernels, written directly on top of the
// metric-core functions.

#include "tma/kernels.hpp"
#include "tma/metric.hpp"

namespace tma::reference {

std::vector<double> pair_margins(const Mat& K, const Mat& P, const PairView& view) {
  ModelState s;
  s.K = K;
  s.P = P;
  std::vector<double> out;
  out.reserve(view.pairs.size());
  for (const auto& p : view.pairs)
    out.push_back(margin(s, view.records[p.probe].feature, view.records[p.gallery].feature));
  return out;
}

BatchGradient batch_gradient(const Mat& K, const Mat& P, const PairView& view) {
  if (view.pairs.empty()) throw InvalidArgument("batch gradient needs at least one pair");
  ModelState s;
  s.K = K;
  s.P = P;
  BatchGradient g{Mat::Zero(K.rows(), K.cols()), Mat::Zero(P.rows(), P.cols()), 0.0, 0};
  for (const auto& p : view.pairs) {
    const auto& xp = view.records[p.probe].feature;
    const auto& xg = view.records[p.gallery].feature;
    const double l = hinge_loss(s, xp, xg, p.label);
    if (l > 0.0) ++g.active;
    g.mean_loss += l;
    const Gradients pg = hinge_subgradients(s, xp, xg, p.label);
    g.gK += pg.gK;
    g.gP += pg.gP;
  }
  const double n = static_cast<double>(view.pairs.size());
  g.gK /= n;
  g.gP /= n;
  g.mean_loss /= n;
  return g;
}

Mat score_matrix(const ModelState& state, std::span<const FeatureRecord> probes,
                 std::span<const FeatureRecord> gallery) {
  Mat S(static_cast<Eigen::Index>(probes.size()), static_cast<Eigen::Index>(gallery.size()));
  for (std::size_t p = 0; p < probes.size(); ++p)
    for (std::size_t g = 0; g < gallery.size(); ++g)
      S(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g)) =
          margin(state, probes[p].feature, gallery[g].feature);
  return S;
}

Mat vertex_margins(const ModelState& state, std::span<const FeatureRecord> vertices) {
  const auto n = static_cast<Eigen::Index>(vertices.size());
  Mat M = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j)
        M(i, j) = margin(state, vertices[static_cast<std::size_t>(i)].feature,
                         vertices[static_cast<std::size_t>(j)].feature);
  return M;
}

}  // namespace tma::reference

#include "tma/metric.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tma {

std::string to_string(LabelSource s) {
  switch (s) {
    case LabelSource::GroundTruth: return "ground-truth";
    case LabelSource::Human: return "human";
    case LabelSource::SimulatedNoisy: return "simulated-noisy";
  }
  return "unknown";
}

LabelSource label_source_from_string(const std::string& s) {
  if (s == "ground-truth") return LabelSource::GroundTruth;
  if (s == "human") return LabelSource::Human;
  if (s == "simulated-noisy") return LabelSource::SimulatedNoisy;
  throw InvalidArgument("unknown label source '" + s + "'");
}

ModelState::ModelState(Eigen::Index rank, Eigen::Index dim)
    : K(Mat::Zero(rank, dim)),
      P(Mat::Zero(rank, dim)),
      U(Mat::Zero(rank, dim)),
      V(Mat::Zero(rank, dim)),
      Lambda(Mat::Zero(rank, dim)),
      Psi(Mat::Zero(rank, dim)) {}

void ModelState::validate() const {
  for (const Mat* m : {&K, &P, &U, &V, &Lambda, &Psi}) {
    if (m->rows() != K.rows() || m->cols() != K.cols())
      throw InvalidArgument("model matrices must share one shape");
    if (!m->allFinite()) throw InvalidArgument("model contains non-finite entries");
  }
}

bool ModelState::operator==(const ModelState& o) const {
  auto same = [](const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::equal(a.data(), a.data() + a.size(), b.data());
  };
  return same(K, o.K) && same(P, o.P) && same(U, o.U) && same(V, o.V) &&
         same(Lambda, o.Lambda) && same(Psi, o.Psi);
}

void validate_pair(const PairView& view, const LabeledPair& pair) {
  if (pair.label != 1 && pair.label != -1) throw InvalidArgument("label must be -1 or +1");
  if (pair.probe >= view.records.size() || pair.gallery >= view.records.size())
    throw InvalidArgument("pair references a record outside the table");
  if (view.records[pair.probe].camera_id == view.records[pair.gallery].camera_id)
    throw InvalidArgument("probe and gallery must come from different cameras");
}

void validate_records(std::span<const FeatureRecord> records, Eigen::Index dim) {
  for (const auto& r : records) {
    if (r.feature.size() != dim)
      throw InvalidArgument("record '" + r.person_id + "' has dimension " +
                            std::to_string(r.feature.size()) + ", expected " +
                            std::to_string(dim));
    if (!r.feature.allFinite())
      throw InvalidArgument("record '" + r.person_id + "' has non-finite features");
  }
}

namespace {

void check_dims(const Mat& M, const Vec& xp, const Vec& xg) {
  if (xp.size() != M.cols() || xg.size() != M.cols())
    throw InvalidArgument("feature dimension " + std::to_string(xp.size()) + "/" +
                          std::to_string(xg.size()) + " does not match model dimension " +
                          std::to_string(M.cols()));
}

}  // namespace

double similarity(const Mat& K, const Vec& xp, const Vec& xg) {
  check_dims(K, xp, xg);
  return (K * xp).dot(K * xg);
}

double dissimilarity(const Mat& P, const Vec& xp, const Vec& xg) {
  check_dims(P, xp, xg);
  return (P * (xp - xg)).squaredNorm();
}

double margin(const ModelState& state, const Vec& xp, const Vec& xg) {
  return similarity(state.K, xp, xg) - 0.5 * dissimilarity(state.P, xp, xg);
}

double hinge_loss(const ModelState& state, const Vec& xp, const Vec& xg, int label) {
  if (label != 1 && label != -1) throw InvalidArgument("label must be -1 or +1");
  return std::max(0.0, 1.0 - label * margin(state, xp, xg));
}

double hinge_loss(const ModelState& state, const PairView& view, const LabeledPair& pair) {
  validate_pair(view, pair);
  return hinge_loss(state, view.records[pair.probe].feature, view.records[pair.gallery].feature,
                    pair.label);
}

Gradients hinge_subgradients(const ModelState& state, const Vec& xp, const Vec& xg, int label) {
  if (label != 1 && label != -1) throw InvalidArgument("label must be -1 or +1");
  check_dims(state.K, xp, xg);
  check_dims(state.P, xp, xg);
  const Vec kp = state.K * xp;
  const Vec kg = state.K * xg;
  const Vec delta = xp - xg;
  const Vec pd = state.P * delta;
  const double m = kp.dot(kg) - 0.5 * pd.squaredNorm();
  Gradients g{Mat::Zero(state.rank(), state.dim()), Mat::Zero(state.rank(), state.dim())};
  if (label * m >= 1.0) return g;
  // d/dK x_p^T K^T K x_g = K (x_p x_g^T + x_g x_p^T)
  g.gK.noalias() = -label * (kp * xg.transpose() + kg * xp.transpose());
  // d/dP (1/2)||P delta||^2 = P delta delta^T
  g.gP.noalias() = label * (pd * delta.transpose());
  return g;
}

Gradients hinge_subgradients(const ModelState& state, const PairView& view,
                             const LabeledPair& pair) {
  validate_pair(view, pair);
  return hinge_subgradients(state, view.records[pair.probe].feature,
                            view.records[pair.gallery].feature, pair.label);
}

double l21_norm(const Mat& M) { return M.rowwise().norm().sum(); }

double objective(const ModelState& state, const PairView& view, double alpha, double beta) {
  if (view.pairs.empty()) throw InvalidArgument("objective needs at least one pair");
  double loss = 0.0;
  for (const auto& p : view.pairs) loss += hinge_loss(state, view, p);
  return loss / static_cast<double>(view.pairs.size()) + alpha * l21_norm(state.K) +
         beta * l21_norm(state.P);
}

ModelState truncate_rows(const ModelState& state, Eigen::Index keep) {
  if (keep < 0 || keep > state.rank()) throw InvalidArgument("truncation rank out of range");
  auto pick = [keep](const Mat& M) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(M.rows()));
    std::iota(order.begin(), order.end(), 0);
    const Vec norms = M.rowwise().norm();
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return norms[a] > norms[b]; });
    order.resize(static_cast<std::size_t>(keep));
    std::sort(order.begin(), order.end());
    return order;
  };
  const auto rows_k = pick(state.K);
  const auto rows_p = pick(state.P);
  ModelState out(keep, state.dim());
  for (Eigen::Index i = 0; i < keep; ++i) {
    const auto rk = rows_k[static_cast<std::size_t>(i)];
    const auto rp = rows_p[static_cast<std::size_t>(i)];
    out.K.row(i) = state.K.row(rk);
    out.U.row(i) = state.U.row(rk);
    out.Lambda.row(i) = state.Lambda.row(rk);
    out.P.row(i) = state.P.row(rp);
    out.V.row(i) = state.V.row(rp);
    out.Psi.row(i) = state.Psi.row(rp);
  }
  return out;
}

}  // namespace tma

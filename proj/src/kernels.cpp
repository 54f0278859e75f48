#include "tma/kernels.hpp"

#include <omp.h>

#include <algorithm>

namespace tma {

int kernel_threads() { return omp_get_max_threads(); }

namespace kernels {
namespace {

// Distinct records referenced by a pair list, with a local index per record.
struct ImageTable {
  std::vector<std::size_t> global;   // local -> record index
  std::vector<Eigen::Index> local;   // per pair: probe local, gallery local
  Mat X;                             // one row per distinct record
};

ImageTable gather_images(const PairView& view, Eigen::Index dim) {
  ImageTable t;
  std::vector<Eigen::Index> slot(view.records.size(), -1);
  t.local.resize(2 * view.pairs.size());
  for (std::size_t i = 0; i < view.pairs.size(); ++i) {
    const auto& p = view.pairs[i];
    if (p.probe >= view.records.size() || p.gallery >= view.records.size())
      throw InvalidArgument("pair references a record outside the table");
    for (int side = 0; side < 2; ++side) {
      const std::size_t r = side == 0 ? p.probe : p.gallery;
      if (slot[r] < 0) {
        slot[r] = static_cast<Eigen::Index>(t.global.size());
        t.global.push_back(r);
      }
      t.local[2 * i + side] = slot[r];
    }
  }
  t.X.resize(static_cast<Eigen::Index>(t.global.size()), dim);
  for (std::size_t j = 0; j < t.global.size(); ++j) {
    const auto& f = view.records[t.global[j]].feature;
    if (f.size() != dim) throw InvalidArgument("feature dimension does not match model");
    t.X.row(static_cast<Eigen::Index>(j)) = f.transpose();
  }
  return t;
}

// Row-blocked A = X * M^T; each row is produced by one thread.
Mat project_rows(const Mat& X, const Mat& M) {
  Mat out(X.rows(), M.rows());
  const Eigen::Index n = X.rows();
  constexpr Eigen::Index block = 64;
#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < (n + block - 1) / block; ++b) {
    const Eigen::Index lo = b * block;
    const Eigen::Index len = std::min(block, n - lo);
    out.middleRows(lo, len).noalias() = X.middleRows(lo, len) * M.transpose();
  }
  return out;
}

Mat project_records(std::span<const FeatureRecord> recs, const Mat& M) {
  Mat X(static_cast<Eigen::Index>(recs.size()), M.cols());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].feature.size() != M.cols())
      throw InvalidArgument("feature dimension does not match model");
    X.row(static_cast<Eigen::Index>(i)) = recs[i].feature.transpose();
  }
  return project_rows(X, M);
}

}  // namespace

std::vector<double> pair_margins(const Mat& K, const Mat& P, const PairView& view) {
  const ImageTable t = gather_images(view, K.cols());
  const Mat AK = project_rows(t.X, K);
  const Mat AP = project_rows(t.X, P);
  std::vector<double> out(view.pairs.size());
  const auto n = static_cast<std::ptrdiff_t>(view.pairs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto a = t.local[2 * i], b = t.local[2 * i + 1];
    out[i] = AK.row(a).dot(AK.row(b)) - 0.5 * (AP.row(a) - AP.row(b)).squaredNorm();
  }
  return out;
}

BatchGradient batch_gradient(const Mat& K, const Mat& P, const PairView& view) {
  if (view.pairs.empty()) throw InvalidArgument("batch gradient needs at least one pair");
  if (K.rows() != P.rows() || K.cols() != P.cols())
    throw InvalidArgument("K and P must share one shape");
  const ImageTable t = gather_images(view, K.cols());
  const Mat AK = project_rows(t.X, K);
  const Mat AP = project_rows(t.X, P);
  const auto n = static_cast<std::ptrdiff_t>(view.pairs.size());
  const double inv_n = 1.0 / static_cast<double>(n);

  // Per pair: weight of x_p x_g^T in the K-gradient and of delta delta^T in
  // the P-gradient (both zero when inactive), plus the hinge loss.
  std::vector<double> wk(view.pairs.size()), wp(view.pairs.size()), loss(view.pairs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto a = t.local[2 * i], b = t.local[2 * i + 1];
    const int y = view.pairs[i].label;
    const double m = AK.row(a).dot(AK.row(b)) - 0.5 * (AP.row(a) - AP.row(b)).squaredNorm();
    const double l = 1.0 - y * m;
    const bool active = y * m < 1.0;
    loss[i] = active ? l : 0.0;
    wk[i] = active ? -y * inv_n : 0.0;
    wp[i] = active ? y * inv_n : 0.0;
  }

  // Incidence lists so each image row is accumulated by one thread, in pair order.
  const auto N = t.X.rows();
  std::vector<std::vector<std::ptrdiff_t>> incident(static_cast<std::size_t>(N));
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    incident[static_cast<std::size_t>(t.local[2 * i])].push_back(2 * i);
    if (t.local[2 * i + 1] != t.local[2 * i])
      incident[static_cast<std::size_t>(t.local[2 * i + 1])].push_back(2 * i + 1);
  }

  // sum_i wk_i x_p x_g^T = X^T YK   with YK[p] = sum wk_i x_g
  // sum_i wp_i d d^T     = X^T YP   with YP[p] = sum wp_i (x_p - x_g), YP[g] likewise
  Mat YK = Mat::Zero(N, t.X.cols());
  Mat YP = Mat::Zero(N, t.X.cols());
#pragma omp parallel for schedule(dynamic, 16)
  for (Eigen::Index j = 0; j < N; ++j) {
    for (const auto slot : incident[static_cast<std::size_t>(j)]) {
      const auto i = slot / 2;
      const auto a = t.local[2 * i], b = t.local[2 * i + 1];
      if (wk[i] == 0.0 && wp[i] == 0.0) continue;
      const bool is_probe = (slot % 2) == 0;
      if (a == b) {
        // same stored image on both sides: delta is zero
        YK.row(j) += wk[i] * t.X.row(j);
        continue;
      }
      if (is_probe) {
        YK.row(j) += wk[i] * t.X.row(b);
        YP.row(j) += wp[i] * (t.X.row(a) - t.X.row(b));
      } else {
        YP.row(j) += wp[i] * (t.X.row(b) - t.X.row(a));
      }
    }
  }
  const Mat Z = t.X.transpose() * YK;                 // d x d, not symmetric
  const Mat CP = t.X.transpose() * YP;                // d x d, symmetric up to rounding
  BatchGradient g;
  g.gK.noalias() = K * (Z + Z.transpose());
  g.gP.noalias() = P * CP;
  double total = 0.0;
  std::size_t active = 0;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    total += loss[i];
    if (wk[i] != 0.0) ++active;
  }
  g.mean_loss = total * inv_n;
  g.active = active;
  return g;
}

Mat score_matrix(const ModelState& state, std::span<const FeatureRecord> probes,
                 std::span<const FeatureRecord> gallery) {
  const Mat KP = project_records(probes, state.K), PP = project_records(probes, state.P);
  const Mat KG = project_records(gallery, state.K), PG = project_records(gallery, state.P);
  Mat S(KP.rows(), KG.rows());
#pragma omp parallel for schedule(static)
  for (Eigen::Index p = 0; p < S.rows(); ++p)
    for (Eigen::Index g = 0; g < S.cols(); ++g)
      S(p, g) = KP.row(p).dot(KG.row(g)) - 0.5 * (PP.row(p) - PG.row(g)).squaredNorm();
  return S;
}

Mat vertex_margins(const ModelState& state, std::span<const FeatureRecord> vertices) {
  const Mat AK = project_records(vertices, state.K), AP = project_records(vertices, state.P);
  const Eigen::Index n = AK.rows();
  Mat M = Mat::Zero(n, n);
#pragma omp parallel for schedule(dynamic, 4)
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      M(i, j) = AK.row(i).dot(AK.row(j)) - 0.5 * (AP.row(i) - AP.row(j)).squaredNorm();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < i; ++j) M(i, j) = M(j, i);
  return M;
}

}  // namespace kernels
}  // namespace tma

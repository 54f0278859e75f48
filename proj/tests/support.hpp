#pragma once

// Independent oracles and fixtures for the tests. Nothing here calls the
// library code it is used to check.

#include "tma/types.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace tt {

using tma::Mat;
using tma::Vec;

inline Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline Vec random_vec(Eigen::Index d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vec v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

inline tma::ModelState random_state(Eigen::Index r, Eigen::Index d, std::mt19937_64& rng,
                                    double scale = 0.5) {
  tma::ModelState s(r, d);
  s.K = random_mat(r, d, rng, scale);
  s.P = random_mat(r, d, rng, scale);
  s.U = random_mat(r, d, rng, scale);
  s.V = random_mat(r, d, rng, scale);
  s.Lambda = random_mat(r, d, rng, 0.1);
  s.Psi = random_mat(r, d, rng, 0.1);
  return s;
}

// Scalar loops, no matrix products.
inline double loop_similarity(const Mat& K, const Vec& xp, const Vec& xg) {
  double s = 0.0;
  for (Eigen::Index r = 0; r < K.rows(); ++r) {
    double a = 0.0, b = 0.0;
    for (Eigen::Index c = 0; c < K.cols(); ++c) {
      a += K(r, c) * xp[c];
      b += K(r, c) * xg[c];
    }
    s += a * b;
  }
  return s;
}

inline double loop_dissimilarity(const Mat& P, const Vec& xp, const Vec& xg) {
  double s = 0.0;
  for (Eigen::Index r = 0; r < P.rows(); ++r) {
    double a = 0.0;
    for (Eigen::Index c = 0; c < P.cols(); ++c) a += P(r, c) * (xp[c] - xg[c]);
    s += a * a;
  }
  return s;
}

inline double loop_margin(const Mat& K, const Mat& P, const Vec& xp, const Vec& xg) {
  return loop_similarity(K, xp, xg) - 0.5 * loop_dissimilarity(P, xp, xg);
}

inline double loop_hinge(const Mat& K, const Mat& P, const Vec& xp, const Vec& xg, int y) {
  return std::max(0.0, 1.0 - y * loop_margin(K, P, xp, xg));
}

/// Row-wise minimizer of 0.5 rho ||u - v||^2 + w ||u||, found numerically:
/// golden section on the length along v, then checked against random
/// perturbations by the caller.
inline Vec numeric_group_prox(const Vec& v, double rho, double w) {
  const double nv = v.norm();
  if (nv == 0.0) return Vec::Zero(v.size());
  const Vec dir = v / nv;
  auto f = [&](double t) { return 0.5 * rho * (t * dir - v).squaredNorm() + w * std::abs(t); };
  double a = 0.0, b = nv;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a), d = a + g * (b - a);
  for (int it = 0; it < 200; ++it) {
    if (f(c) < f(d)) b = d;
    else a = c;
    c = b - g * (b - a);
    d = a + g * (b - a);
  }
  double t = 0.5 * (a + b);
  if (f(0.0) <= f(t)) t = 0.0;
  return t * dir;
}

inline double group_prox_objective(const Vec& u, const Vec& v, double rho, double w) {
  return 0.5 * rho * (u - v).squaredNorm() + w * u.norm();
}

/// rank of gallery j for one probe: strictly better scores, then equal
/// scores at a smaller index.
inline std::size_t brute_rank(const std::vector<double>& s, std::size_t j) {
  std::size_t r = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] > s[j] || (s[i] == s[j] && i < j)) ++r;
  return r;
}

struct BruteEval {
  std::vector<double> cmc;
  double map = 0.0;
  std::size_t evaluated = 0;
};

inline BruteEval brute_eval(const Mat& S, const std::vector<std::string>& pid,
                            const std::vector<std::string>& gid) {
  BruteEval out;
  out.cmc.assign(static_cast<std::size_t>(S.cols()), 0.0);
  double ap_sum = 0.0;
  for (Eigen::Index p = 0; p < S.rows(); ++p) {
    std::vector<double> s(static_cast<std::size_t>(S.cols()));
    for (Eigen::Index g = 0; g < S.cols(); ++g) s[static_cast<std::size_t>(g)] = S(p, g);
    std::vector<std::size_t> ranks;
    for (std::size_t g = 0; g < s.size(); ++g)
      if (gid[g] == pid[static_cast<std::size_t>(p)]) ranks.push_back(brute_rank(s, g));
    if (ranks.empty()) continue;
    ++out.evaluated;
    const std::size_t first = *std::min_element(ranks.begin(), ranks.end());
    for (std::size_t k = first; k < out.cmc.size(); ++k) out.cmc[k] += 1.0;
    double ap = 0.0;
    for (std::size_t r : ranks) {
      std::size_t better = 0;
      for (std::size_t q : ranks) better += q <= r;
      ap += static_cast<double>(better) / static_cast<double>(r + 1);
    }
    ap_sum += ap / static_cast<double>(ranks.size());
  }
  if (out.evaluated) {
    for (auto& c : out.cmc) c /= static_cast<double>(out.evaluated);
    out.map = ap_sum / static_cast<double>(out.evaluated);
  }
  return out;
}

/// Two planted cliques of sizes a and b. Vertex 0 (the probe) starts in the
/// first; the other vertices are shuffled, so it can land in either role.
struct PlantedGraph {
  Mat W;
  std::vector<bool> in_probe_clique;
};

inline PlantedGraph planted_two_cliques(int a, int b, std::mt19937_64& rng, double intra = 0.9,
                                        double inter = 0.1) {
  const int n = a + b;
  std::vector<int> group(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) group[static_cast<std::size_t>(i)] = i < a ? 0 : 1;
  std::shuffle(group.begin() + 1, group.end(), rng);
  PlantedGraph g;
  g.W = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j)
        g.W(i, j) = group[static_cast<std::size_t>(i)] == group[static_cast<std::size_t>(j)] ? intra
                                                                                             : inter;
  for (int i = 0; i < n; ++i) g.in_probe_clique.push_back(group[static_cast<std::size_t>(i)] == group[0]);
  return g;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tma_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Component-wise relative error; components where both values are below
/// 1e-7 in magnitude are compared absolutely.
inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale > 1e-7 ? std::abs(a - b) / scale : std::abs(a - b);
}

}  // namespace tt

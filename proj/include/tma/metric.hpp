#pragma once

#include "tma/types.hpp"

namespace tma {

/// x_p^T K^T K x_g.
double similarity(const Mat& K, const Vec& xp, const Vec& xg);

/// ||P x_p - P x_g||^2.
double dissimilarity(const Mat& P, const Vec& xp, const Vec& xg);

/// Label-free score: similarity - dissimilarity / 2. This is what the hinge
/// multiplies by the label, and what the selection graph calibrates.
double margin(const ModelState& state, const Vec& xp, const Vec& xg);

/// max(0, 1 - y * margin).
double hinge_loss(const ModelState& state, const Vec& xp, const Vec& xg, int label);
double hinge_loss(const ModelState& state, const PairView& view, const LabeledPair& pair);

struct Gradients {
  Mat gK;
  Mat gP;
};

/// Subgradients of the hinge with respect to K and P. Zero on the flat side,
/// including the kink y * margin == 1.
Gradients hinge_subgradients(const ModelState& state, const Vec& xp, const Vec& xg, int label);
Gradients hinge_subgradients(const ModelState& state, const PairView& view,
                             const LabeledPair& pair);

/// Sum of row l2 norms.
double l21_norm(const Mat& M);

/// Mean hinge loss over `view.pairs` plus alpha ||K||_{2,1} + beta ||P||_{2,1}.
double objective(const ModelState& state, const PairView& view, double alpha, double beta);

/// Keeps the `keep` rows of K (and of P) with the largest l2 norm, in their
/// original order. Used to report low-rank truncated projections.
ModelState truncate_rows(const ModelState& state, Eigen::Index keep);

}  // namespace tma

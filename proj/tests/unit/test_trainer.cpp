#include "support.hpp"

#include "tma/synthetic.hpp"
#include "tma/trainer.hpp"

#include <doctest.h>

using namespace tma;

namespace {

struct Small {
  std::vector<FeatureRecord> recs;
  std::vector<LabeledPair> pairs;
};

Small small_problem(int ids, std::uint64_t seed) {
  SyntheticConfig sc;
  sc.identities = ids;
  sc.dim = 8;
  sc.latent = 4;
  sc.seed = seed;
  Small s;
  s.recs = make_synthetic(sc);
  for (int p = 0; p < ids; ++p)
    for (int g = 0; g < ids; ++g)
      s.pairs.push_back({static_cast<std::size_t>(p), static_cast<std::size_t>(ids + g), p == g ? 1 : -1});
  return s;
}

// Row-wise closed form written out independently of the library.
Mat oracle_prox(const Mat& M, const Mat& D, double rho, double w) {
  Mat out(M.rows(), M.cols());
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    out.row(i) = tt::numeric_group_prox((M.row(i) + D.row(i) / rho).transpose(), rho, w).transpose();
  return out;
}

}  // namespace

TEST_CASE("group soft-thresholding matches numeric row minimization") {
  std::mt19937_64 rng(11);
  int full_shrink = 0;
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index d = 1 + t % 7;
    const double rho = 0.5 + (t % 4);
    const double w = (t % 3) * 0.7;
    // every third row small enough to be zeroed
    const double scale = t % 3 == 2 ? 0.05 : 1.0;
    const Mat M = tt::random_mat(1, d, rng, scale), D = tt::random_mat(1, d, rng, scale);
    const Mat got = prox_group_soft_threshold(M, D, rho, w);
    const Mat want = oracle_prox(M, D, rho, w);
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-6);
    const Vec v = (M + D / rho).row(0).transpose();
    if (rho * v.norm() <= w) {
      ++full_shrink;
      CHECK(got.isZero(0.0));
    }
    // no random perturbation improves the row objective
    const Vec u = got.row(0).transpose();
    for (int k = 0; k < 10; ++k) {
      const Vec du = u + tt::random_vec(d, rng, 1e-3);
      CHECK(tt::group_prox_objective(u, v, rho, w) <= tt::group_prox_objective(du, v, rho, w) + 1e-12);
    }
  }
  CHECK(full_shrink > 5);
}

TEST_CASE("prox argument checks") {
  const Mat A = Mat::Ones(2, 2);
  CHECK_THROWS_AS(prox_group_soft_threshold(A, A, 0.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(prox_group_soft_threshold(A, A, 1.0, -1.0), InvalidArgument);
  CHECK_THROWS_AS(prox_group_soft_threshold(A, Mat::Ones(3, 2), 1.0, 1.0), InvalidArgument);
  CHECK(prox_group_soft_threshold(A, A, 2.0, 0.0) == A + A / 2.0);
}

TEST_CASE("a one-iteration epoch is the update written out by hand") {
  const Small sp = small_problem(6, 3);
  const PairView view{sp.recs, sp.pairs};
  std::mt19937_64 init_rng(5);
  const ModelState s0 = tt::random_state(8, 8, init_rng, 0.3);
  TrainerConfig cfg;
  cfg.iters_per_epoch = 1;
  cfg.eta = 0.3;
  cfg.rho = 0.7;
  cfg.alpha = 0.05;
  cfg.beta = 0.02;

  std::mt19937_64 rng(77), copy(77);
  const ModelState got = epoch(s0, view, cfg, rng);

  const std::size_t i = std::uniform_int_distribution<std::size_t>(0, sp.pairs.size() - 1)(copy);
  const auto& pr = sp.pairs[i];
  const Vec& xp = sp.recs[pr.probe].feature;
  const Vec& xg = sp.recs[pr.gallery].feature;
  const int y = pr.label;
  auto grad = [&](const Mat& K, const Mat& P) {  // hinge subgradient of pair i
    Mat gK = Mat::Zero(K.rows(), K.cols()), gP = Mat::Zero(P.rows(), P.cols());
    if (y * tt::loop_margin(K, P, xp, xg) < 1.0) {
      const Vec dl = xp - xg;
      gK = -y * K * (xp * xg.transpose() + xg * xp.transpose());
      gP = y * P * dl * dl.transpose();
    }
    return std::make_pair(gK, gP);
  };
  Mat mK = Mat::Zero(8, 8), mP = Mat::Zero(8, 8);
  for (const auto& q : sp.pairs) {
    const Vec& a = sp.recs[q.probe].feature;
    const Vec& b = sp.recs[q.gallery].feature;
    if (q.label * tt::loop_margin(s0.K, s0.P, a, b) < 1.0) {
      const Vec dl = a - b;
      mK -= q.label * s0.K * (a * b.transpose() + b * a.transpose());
      mP += q.label * s0.P * dl * dl.transpose();
    }
  }
  mK /= static_cast<double>(sp.pairs.size());
  mP /= static_cast<double>(sp.pairs.size());

  const auto snap_g = grad(s0.K, s0.P);
  const Mat K1 = s0.K - cfg.eta * (grad(s0.K, s0.P).first - snap_g.first + mK +
                                   cfg.rho * (s0.K - s0.U) + s0.Lambda);
  const Mat P1 = s0.P - cfg.eta * (grad(K1, s0.P).second - snap_g.second + mP +
                                   cfg.rho * (s0.P - s0.V) + s0.Psi);
  const Mat U1 = oracle_prox(K1, s0.Lambda, cfg.rho, cfg.alpha);
  const Mat V1 = oracle_prox(P1, s0.Psi, cfg.rho, cfg.beta);

  auto close = [](const Mat& a, const Mat& b, double tol) {
    return (a - b).cwiseAbs().maxCoeff() <= tol * std::max(1.0, b.cwiseAbs().maxCoeff());
  };
  CHECK(close(got.K, K1, 1e-12));
  CHECK(close(got.P, P1, 1e-12));
  CHECK(close(got.U, U1, 1e-6));
  CHECK(close(got.V, V1, 1e-6));
  CHECK(close(got.Lambda, s0.Lambda + cfg.rho * (K1 - got.U), 1e-12));
  CHECK(close(got.Psi, s0.Psi + cfg.rho * (P1 - got.V), 1e-12));
}

TEST_CASE("the epoch returns the mean of the post-update iterates") {
  const Small sp = small_problem(5, 4);
  TrainerConfig cfg;
  cfg.iters_per_epoch = 13;
  const ModelState s0 = initialize(8, cfg);
  Mat sumK = Mat::Zero(8, 8), sumP = Mat::Zero(8, 8);
  int calls = 0;
  std::mt19937_64 rng(1);
  const ModelState s1 = epoch(s0, {sp.recs, sp.pairs}, cfg, rng, [&](int t, const Mat& K, const Mat& P) {
    CHECK(t == ++calls);
    sumK += K;
    sumP += P;
  });
  CHECK(calls == 13);
  CHECK((s1.K - sumK / 13.0).norm() <= 1e-12 * std::max(1.0, s1.K.norm()));
  CHECK((s1.P - sumP / 13.0).norm() <= 1e-12 * std::max(1.0, s1.P.norm()));
}

TEST_CASE("deterministic one-step epoch is a plain full-gradient step") {
  const Small sp = small_problem(5, 6);
  const PairView view{sp.recs, sp.pairs};
  TrainerConfig cfg;
  cfg.deterministic_inner_steps = 1;
  cfg.eta = 0.5;
  std::mt19937_64 rng(3);
  const ModelState s0 = tt::random_state(8, 8, rng, 0.2);
  const ModelState got = deterministic_epoch(s0, view, cfg);
  const BatchGradient gk = reference::batch_gradient(s0.K, s0.P, view);
  const Mat K1 = s0.K - cfg.eta * (gk.gK + cfg.rho * (s0.K - s0.U) + s0.Lambda);
  const BatchGradient gp = reference::batch_gradient(K1, s0.P, view);
  const Mat P1 = s0.P - cfg.eta * (gp.gP + cfg.rho * (s0.P - s0.V) + s0.Psi);
  CHECK((got.K - K1).norm() <= 1e-12 * std::max(1.0, K1.norm()));
  CHECK((got.P - P1).norm() <= 1e-12 * std::max(1.0, P1.norm()));
}

TEST_CASE("training lowers the objective and shrinks the residuals") {
  const Small sp = small_problem(10, 8);
  TrainerConfig cfg;
  cfg.epochs = 60;
  const TrainingResult r = train({sp.recs, sp.pairs}, cfg);
  REQUIRE(r.trace.epochs.size() == 60);
  CHECK(r.trace.epochs.back().objective < 0.5 * r.trace.initial_objective);
  CHECK(r.trace.epochs.back().residual_k < r.trace.epochs.front().residual_k);
  for (const auto& e : r.trace.epochs) CHECK(std::isfinite(e.objective));
  CHECK_NOTHROW(r.state.validate());
}

TEST_CASE("training is reproducible and warm restarts carry all six matrices") {
  const Small sp = small_problem(6, 9);
  const PairView view{sp.recs, sp.pairs};
  TrainerConfig cfg;
  cfg.epochs = 5;
  const TrainingResult a = train(view, cfg), b = train(view, cfg);
  CHECK(a.state == b.state);
  cfg.seed = 2;
  CHECK_FALSE(train(view, cfg).state == a.state);

  cfg.epochs = 0;
  const TrainingResult w = train(view, cfg, a.state);
  CHECK(w.state == a.state);
  cfg.epochs = 1;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);  // train()'s sampling stream
  const ModelState manual = epoch(a.state, view, cfg, rng);
  CHECK(train(view, cfg, a.state).state == manual);
}

TEST_CASE("initialization range and shapes") {
  TrainerConfig cfg;
  cfg.rank = 3;
  cfg.init_scale = 0.25;
  const ModelState s = initialize(7, cfg);
  CHECK(s.rank() == 3);
  CHECK(s.dim() == 7);
  CHECK(s.K.cwiseAbs().maxCoeff() <= 0.25);
  CHECK(s.P.cwiseAbs().maxCoeff() <= 0.25);
  CHECK(s.U == s.K);
  CHECK(s.V == s.P);
  CHECK(s.Lambda.isZero(0.0));
  CHECK(s.Psi.isZero(0.0));
  CHECK(initialize(7, {}).rank() == 7);
}

TEST_CASE("trainer config: resolution, validation and JSON") {
  TrainerConfig cfg;
  CHECK(cfg.resolved_iters(40) == 80);
  cfg.iters_per_epoch = 5;
  CHECK(cfg.resolved_iters(40) == 5);
  cfg.seed = 123456789012345ULL;
  cfg.init_scale = 0.03;
  const TrainerConfig back = nlohmann::json(cfg).get<TrainerConfig>();
  CHECK(nlohmann::json(back) == nlohmann::json(cfg));
  CHECK(back.seed == cfg.seed);

  TrainerConfig bad;
  bad.eta = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = {};
  bad.alpha = -1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = {};
  bad.epochs = -1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("training rejects bad input") {
  const Small sp = small_problem(3, 1);
  const std::vector<LabeledPair> none;
  CHECK_THROWS_AS(train({sp.recs, none}, {}), InvalidArgument);
  ModelState wrong(2, 3);
  CHECK_THROWS_AS(train({sp.recs, sp.pairs}, {}, wrong), InvalidArgument);
}

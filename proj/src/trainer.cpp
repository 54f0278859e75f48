#include "tma/trainer.hpp"

#include "tma/metric.hpp"

#include <chrono>
#include <cmath>

namespace tma {

void TrainerConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw InvalidArgument("alpha and beta must be >= 0");
  if (!(eta > 0.0)) throw InvalidArgument("eta must be > 0");
  if (!(rho > 0.0)) throw InvalidArgument("rho must be > 0");
  if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (iters_per_epoch < 0) throw InvalidArgument("iters_per_epoch must be >= 0");
  if (rank < 0) throw InvalidArgument("rank must be >= 0");
  if (!(init_scale >= 0.0)) throw InvalidArgument("init_scale must be >= 0");
  if (deterministic_inner_steps < 0)
    throw InvalidArgument("deterministic_inner_steps must be >= 0");
}

int TrainerConfig::resolved_iters(std::size_t num_pairs) const {
  if (iters_per_epoch > 0) return iters_per_epoch;
  return static_cast<int>(std::max<std::size_t>(1, 2 * num_pairs));
}

void to_json(nlohmann::json& j, const TrainerConfig& c) {
  j = nlohmann::json{{"alpha", c.alpha},
                     {"beta", c.beta},
                     {"eta", c.eta},
                     {"rho", c.rho},
                     {"epochs", c.epochs},
                     {"iters_per_epoch", c.iters_per_epoch},
                     {"seed", c.seed},
                     {"rank", c.rank},
                     {"init_scale", c.init_scale},
                     {"deterministic_inner_steps", c.deterministic_inner_steps},
                     {"record_trace", c.record_trace}};
}

void from_json(const nlohmann::json& j, TrainerConfig& c) {
  TrainerConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.eta = j.value("eta", d.eta);
  c.rho = j.value("rho", d.rho);
  c.epochs = j.value("epochs", d.epochs);
  c.iters_per_epoch = j.value("iters_per_epoch", d.iters_per_epoch);
  c.seed = j.value("seed", d.seed);
  c.rank = j.value("rank", d.rank);
  c.init_scale = j.value("init_scale", d.init_scale);
  c.deterministic_inner_steps = j.value("deterministic_inner_steps", d.deterministic_inner_steps);
  c.record_trace = j.value("record_trace", d.record_trace);
}

EpochSnapshot::EpochSnapshot(const ModelState& state, const PairView& view)
    : view_(view), K_(state.K), P_(state.P) {
  if (view.pairs.empty()) throw InvalidArgument("snapshot needs at least one pair");
  grad_ = kernels::batch_gradient(K_, P_, view);
  cache_.resize(view.pairs.size());
  for (std::size_t i = 0; i < view.pairs.size(); ++i) {
    const auto& pr = view.pairs[i];
    const auto& xp = view.records[pr.probe].feature;
    const auto& xg = view.records[pr.gallery].feature;
    auto& c = cache_[i];
    c.kp = K_ * xp;
    c.kg = K_ * xg;
    c.pd = P_ * (xp - xg);
    c.active = pr.label * (c.kp.dot(c.kg) - 0.5 * c.pd.squaredNorm()) < 1.0;
  }
}

Gradients EpochSnapshot::sample_gradient(std::size_t i) const {
  if (i >= cache_.size()) throw InvalidArgument("sample index out of range");
  const auto& pr = view_.pairs[i];
  const auto& xp = view_.records[pr.probe].feature;
  const auto& xg = view_.records[pr.gallery].feature;
  const auto& c = cache_[i];
  Gradients g{Mat::Zero(K_.rows(), K_.cols()), Mat::Zero(P_.rows(), P_.cols())};
  if (!c.active) return g;
  g.gK.noalias() = -pr.label * (c.kp * xg.transpose() + c.kg * xp.transpose());
  g.gP.noalias() = pr.label * (c.pd * (xp - xg).transpose());
  return g;
}

EpochSnapshot snapshot(const ModelState& state, const PairView& view) {
  return EpochSnapshot(state, view);
}

Mat prox_group_soft_threshold(const Mat& M, const Mat& Dual, double rho, double weight) {
  if (!(rho > 0.0)) throw InvalidArgument("rho must be > 0");
  if (!(weight >= 0.0)) throw InvalidArgument("weight must be >= 0");
  if (M.rows() != Dual.rows() || M.cols() != Dual.cols())
    throw InvalidArgument("prox operands must share one shape");
  Mat out = M + Dual / rho;
  if (weight == 0.0) return out;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm == 0.0 || rho * norm <= weight) {
      out.row(i).setZero();
      continue;
    }
    out.row(i) *= 1.0 - weight / (rho * norm);
  }
  return out;
}

namespace {

void check_inputs(const ModelState& state, const PairView& view, const TrainerConfig& cfg) {
  cfg.validate();
  if (view.pairs.empty()) throw InvalidArgument("training needs at least one pair");
  state.validate();
  for (const auto& p : view.pairs) validate_pair(view, p);
  for (const auto& p : view.pairs)
    for (auto r : {p.probe, p.gallery})
      if (view.records[r].feature.size() != state.dim())
        throw InvalidArgument("feature dimension does not match model");
}

// Steps (3)-(5) shared by both solvers: U, V by group soft-thresholding of
// the averaged iterates, then dual ascent.
ModelState finish_epoch(const ModelState& prev, Mat K, Mat P, const TrainerConfig& cfg) {
  ModelState next;
  next.K = std::move(K);
  next.P = std::move(P);
  next.U = prox_group_soft_threshold(next.K, prev.Lambda, cfg.rho, cfg.alpha);
  next.V = prox_group_soft_threshold(next.P, prev.Psi, cfg.rho, cfg.beta);
  next.Lambda = prev.Lambda + cfg.rho * (next.K - next.U);
  next.Psi = prev.Psi + cfg.rho * (next.P - next.V);
  return next;
}

EpochStats measure(const ModelState& s, const PairView& view, const TrainerConfig& cfg) {
  EpochStats st;
  const BatchGradient g = kernels::batch_gradient(s.K, s.P, view);
  st.objective = g.mean_loss + cfg.alpha * l21_norm(s.K) + cfg.beta * l21_norm(s.P);
  st.active = g.active;
  st.residual_k = (s.K - s.U).norm();
  st.residual_p = (s.P - s.V).norm();
  return st;
}

template <class EpochFn>
TrainingResult run_epochs(const PairView& view, const TrainerConfig& cfg,
                          const std::optional<ModelState>& init, EpochFn&& one_epoch) {
  using clock = std::chrono::steady_clock;
  cfg.validate();
  if (view.pairs.empty()) throw InvalidArgument("training needs at least one pair");
  const auto t0 = clock::now();
  TrainingResult out;
  if (init) {
    out.state = *init;
  } else {
    out.state = initialize(view.records[view.pairs.front().probe].feature.size(), cfg);
  }
  check_inputs(out.state, view, cfg);
  if (cfg.record_trace) out.trace.initial_objective = measure(out.state, view, cfg).objective;
  for (int s = 0; s < cfg.epochs; ++s) {
    const auto e0 = clock::now();
    out.state = one_epoch(out.state);
    EpochStats st;
    if (cfg.record_trace) st = measure(out.state, view, cfg);
    st.seconds = std::chrono::duration<double>(clock::now() - e0).count();
    out.trace.epochs.push_back(st);
  }
  out.trace.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return out;
}

}  // namespace

ModelState epoch(const ModelState& state, const PairView& view, const TrainerConfig& cfg,
                 std::mt19937_64& rng, const IterateObserver& observer) {
  check_inputs(state, view, cfg);
  const EpochSnapshot snap(state, view);
  const int T = cfg.resolved_iters(view.pairs.size());
  const double eta = cfg.eta, rho = cfg.rho;
  const double keep = 1.0 - eta * rho;

  // K~ <- K~ - eta (g_t(K~) - g_t(K_s) + mean_g(K_s) + rho (K~ - U) + Lambda)
  //     = keep K~ + eta (rho U - Lambda - mean_g(K_s)) - eta (g_t(K~) - g_t(K_s))
  const Mat cK = eta * (rho * state.U - state.Lambda - snap.avg_gK());
  const Mat cP = eta * (rho * state.V - state.Psi - snap.avg_gP());

  Mat Kt = state.K, Pt = state.P;
  Mat Kn(Kt.rows(), Kt.cols()), Pn(Pt.rows(), Pt.cols());
  Mat sumK = Mat::Zero(Kt.rows(), Kt.cols()), sumP = Mat::Zero(Pt.rows(), Pt.cols());
  std::uniform_int_distribution<std::size_t> pick(0, view.pairs.size() - 1);
  Vec delta(state.dim()), kp(state.rank()), kg(state.rank()), pd(state.rank());

  for (int t = 1; t <= T; ++t) {
    const std::size_t i = pick(rng);
    const auto& pr = view.pairs[i];
    const auto& xp = view.records[pr.probe].feature;
    const auto& xg = view.records[pr.gallery].feature;
    const double y = pr.label;
    const auto& sc = snap.cache(i);
    delta = xp - xg;

    // K step, gradient at (K~_t, P~_t)
    kp.noalias() = Kt * xp;
    kg.noalias() = Kt * xg;
    pd.noalias() = Pt * delta;
    Kn = keep * Kt + cK;
    if (y * (kp.dot(kg) - 0.5 * pd.squaredNorm()) < 1.0) {
      Kn.noalias() += (eta * y) * (kp * xg.transpose());
      Kn.noalias() += (eta * y) * (kg * xp.transpose());
    }
    if (sc.active) {
      Kn.noalias() -= (eta * y) * (sc.kp * xg.transpose());
      Kn.noalias() -= (eta * y) * (sc.kg * xp.transpose());
    }

    // P step, gradient at (K~_{t+1}, P~_t); the control variate stays at the snapshot
    kp.noalias() = Kn * xp;
    kg.noalias() = Kn * xg;
    Pn = keep * Pt + cP;
    if (y * (kp.dot(kg) - 0.5 * pd.squaredNorm()) < 1.0)
      Pn.noalias() -= (eta * y) * (pd * delta.transpose());
    if (sc.active) Pn.noalias() += (eta * y) * (sc.pd * delta.transpose());

    Kt.swap(Kn);
    Pt.swap(Pn);
    sumK += Kt;
    sumP += Pt;
    if (observer) observer(t, Kt, Pt);
  }
  return finish_epoch(state, sumK / static_cast<double>(T), sumP / static_cast<double>(T), cfg);
}

ModelState deterministic_epoch(const ModelState& state, const PairView& view,
                               const TrainerConfig& cfg, const IterateObserver& observer) {
  check_inputs(state, view, cfg);
  const int steps = cfg.deterministic_inner_steps > 0 ? cfg.deterministic_inner_steps
                                                      : cfg.resolved_iters(view.pairs.size());
  const double eta = cfg.eta, rho = cfg.rho;
  Mat Kt = state.K, Pt = state.P;
  Mat sumK = Mat::Zero(Kt.rows(), Kt.cols()), sumP = Mat::Zero(Pt.rows(), Pt.cols());
  for (int t = 1; t <= steps; ++t) {
    const Mat gK = kernels::batch_gradient(Kt, Pt, view).gK;
    Mat Kn = Kt - eta * (gK + rho * (Kt - state.U) + state.Lambda);
    const Mat gP = kernels::batch_gradient(Kn, Pt, view).gP;
    Pt = Pt - eta * (gP + rho * (Pt - state.V) + state.Psi);
    Kt = std::move(Kn);
    sumK += Kt;
    sumP += Pt;
    if (observer) observer(t, Kt, Pt);
  }
  return finish_epoch(state, sumK / static_cast<double>(steps), sumP / static_cast<double>(steps),
                      cfg);
}

ModelState initialize(Eigen::Index dim, const TrainerConfig& cfg) {
  cfg.validate();
  if (dim <= 0) throw InvalidArgument("feature dimension must be positive");
  const Eigen::Index rank = cfg.rank > 0 ? cfg.rank : dim;
  ModelState s(rank, dim);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(-cfg.init_scale, cfg.init_scale);
  for (Eigen::Index i = 0; i < rank; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) s.K(i, j) = u(rng);
  for (Eigen::Index i = 0; i < rank; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) s.P(i, j) = u(rng);
  s.U = s.K;
  s.V = s.P;
  return s;
}

TrainingResult train(const PairView& view, const TrainerConfig& cfg,
                     const std::optional<ModelState>& init) {
  // Sampling stream is separate from the initialization stream.
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  return run_epochs(view, cfg, init,
                    [&](const ModelState& s) { return epoch(s, view, cfg, rng); });
}

TrainingResult train_deterministic(const PairView& view, const TrainerConfig& cfg,
                                   const std::optional<ModelState>& init) {
  return run_epochs(view, cfg, init,
                    [&](const ModelState& s) { return deterministic_epoch(s, view, cfg); });
}

}  // namespace tma

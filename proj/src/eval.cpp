#include "tma/eval.hpp"

#include "tma/adaptation.hpp"
#include "tma/kernels.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

namespace tma {

ScoreMatrix score_all(const ModelState& state, std::span<const FeatureRecord> probes,
                      std::span<const FeatureRecord> gallery) {
  ScoreMatrix S;
  S.scores = kernels::score_matrix(state, probes, gallery);
  if (!S.scores.allFinite()) throw InvalidArgument("score matrix has non-finite entries");
  for (const auto& r : probes) S.probe_ids.push_back(r.person_id);
  for (const auto& r : gallery) S.gallery_ids.push_back(r.person_id);
  return S;
}

std::vector<Eigen::Index> rank_gallery(const ScoreMatrix& S, Eigen::Index probe) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(S.scores.cols()));
  std::iota(order.begin(), order.end(), 0);
  const auto row = S.scores.row(probe);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return row[a] > row[b]; });
  return order;
}

namespace {

void check_shape(const ScoreMatrix& S) {
  if (static_cast<std::size_t>(S.scores.rows()) != S.probe_ids.size() ||
      static_cast<std::size_t>(S.scores.cols()) != S.gallery_ids.size())
    throw InvalidArgument("score matrix shape does not match its id vectors");
}

// Zero-based positions of true matches in the ranked list; empty if none.
std::vector<std::size_t> match_positions(const ScoreMatrix& S, Eigen::Index p) {
  const auto order = rank_gallery(S, p);
  std::vector<std::size_t> hits;
  for (std::size_t k = 0; k < order.size(); ++k)
    if (S.gallery_ids[static_cast<std::size_t>(order[k])] ==
        S.probe_ids[static_cast<std::size_t>(p)])
      hits.push_back(k);
  return hits;
}

}  // namespace

CmcCurve cmc(const ScoreMatrix& S) {
  check_shape(S);
  const auto np = S.scores.rows();
  const auto ng = static_cast<std::size_t>(S.scores.cols());
  std::vector<long> first(static_cast<std::size_t>(np), -1);
#pragma omp parallel for schedule(dynamic, 8)
  for (Eigen::Index p = 0; p < np; ++p) {
    const auto hits = match_positions(S, p);
    if (!hits.empty()) first[static_cast<std::size_t>(p)] = static_cast<long>(hits.front());
  }
  CmcCurve c;
  std::vector<std::size_t> count(ng, 0);
  for (long f : first) {
    if (f < 0) {
      ++c.excluded;
      continue;
    }
    ++c.evaluated;
    ++count[static_cast<std::size_t>(f)];
  }
  c.rate.assign(ng, 0.0);
  std::size_t cum = 0;
  for (std::size_t k = 0; k < ng; ++k) {
    cum += count[k];
    c.rate[k] = c.evaluated ? static_cast<double>(cum) / static_cast<double>(c.evaluated) : 0.0;
  }
  return c;
}

MapResult mean_average_precision(const ScoreMatrix& S) {
  check_shape(S);
  const auto np = S.scores.rows();
  std::vector<double> ap(static_cast<std::size_t>(np), -1.0);
#pragma omp parallel for schedule(dynamic, 8)
  for (Eigen::Index p = 0; p < np; ++p) {
    const auto hits = match_positions(S, p);
    if (hits.empty()) continue;
    double sum = 0.0;
    for (std::size_t j = 0; j < hits.size(); ++j)
      sum += static_cast<double>(j + 1) / static_cast<double>(hits[j] + 1);
    ap[static_cast<std::size_t>(p)] = sum / static_cast<double>(hits.size());
  }
  MapResult r;
  double total = 0.0;
  for (double a : ap) {
    if (a < 0.0) {
      ++r.excluded;
      continue;
    }
    ++r.evaluated;
    total += a;
    r.average_precision.push_back(a);
  }
  r.map = r.evaluated ? total / static_cast<double>(r.evaluated) : 0.0;
  return r;
}

void to_json(nlohmann::json& j, const ReportRow& r) {
  j = {{"batches_consumed", r.batches_consumed},
       {"labeled", r.labeled},
       {"labeled_percent", r.labeled_percent},
       {"cmc", r.cmc},
       {"map", r.map},
       {"evaluated", r.evaluated},
       {"excluded", r.excluded}};
}

void from_json(const nlohmann::json& j, ReportRow& r) {
  r.batches_consumed = j.at("batches_consumed").get<int>();
  r.labeled = j.at("labeled").get<std::size_t>();
  r.labeled_percent = j.at("labeled_percent").get<double>();
  r.cmc = j.at("cmc").get<std::vector<double>>();
  r.map = j.at("map").get<double>();
  r.evaluated = j.at("evaluated").get<std::size_t>();
  r.excluded = j.at("excluded").get<std::size_t>();
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"dataset", r.dataset}, {"rows", r.rows}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r.dataset = j.value("dataset", std::string{});
  r.rows = j.at("rows").get<std::vector<ReportRow>>();
}

ReportRow evaluate(const ModelState& state, std::span<const FeatureRecord> probes,
                   std::span<const FeatureRecord> gallery) {
  const ScoreMatrix S = score_all(state, probes, gallery);
  const CmcCurve c = cmc(S);
  const MapResult m = mean_average_precision(S);
  ReportRow row;
  row.cmc = c.rate;
  row.map = m.map;
  row.evaluated = c.evaluated;
  row.excluded = c.excluded;
  return row;
}

EvalReport report(const AdaptationSession& session, std::span<const FeatureRecord> probes,
                  std::span<const FeatureRecord> gallery) {
  EvalReport r;
  for (const auto& ck : session.checkpoints) {
    ReportRow row = evaluate(ck.state, probes, gallery);
    row.batches_consumed = ck.batches_consumed;
    row.labeled = ck.labeled;
    row.labeled_percent = ck.labeled_percent;
    r.rows.push_back(std::move(row));
  }
  return r;
}

void write_cmc_csv(std::ostream& out, const EvalReport& r) {
  out << "rank";
  for (const auto& row : r.rows) out << ",TMA" << row.batches_consumed;
  out << '\n';
  std::size_t ranks = 0;
  for (const auto& row : r.rows) ranks = std::max(ranks, row.cmc.size());
  const auto old = out.precision(10);
  for (std::size_t k = 1; k <= ranks; ++k) {
    out << k;
    for (const auto& row : r.rows) out << ',' << row.rank(k);
    out << '\n';
  }
  out.precision(old);
}

}  // namespace tma

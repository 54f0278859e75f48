#pragma once

#include "tma/types.hpp"

#include <json.hpp>

#include <iosfwd>

namespace tma {

/// Margin of every probe against every gallery record.
struct ScoreMatrix {
  Mat scores;  // rows = probes, cols = gallery
  std::vector<std::string> probe_ids;
  std::vector<std::string> gallery_ids;
};

ScoreMatrix score_all(const ModelState& state, std::span<const FeatureRecord> probes,
                      std::span<const FeatureRecord> gallery);

/// Gallery order for one probe: descending score, ties by ascending gallery index.
std::vector<Eigen::Index> rank_gallery(const ScoreMatrix& S, Eigen::Index probe);

struct CmcCurve {
  std::vector<double> rate;      // rate[k-1] = CMC(k), k = 1..|gallery|
  std::size_t evaluated = 0;     // probes with at least one true match
  std::size_t excluded = 0;      // probes without a true match in the gallery

  double at(std::size_t rank) const { return rank == 0 || rank > rate.size() ? 0.0 : rate[rank - 1]; }
};

/// A probe matches a gallery entry when their person ids are equal.
CmcCurve cmc(const ScoreMatrix& S);

struct MapResult {
  double map = 0.0;
  std::vector<double> average_precision;  // per evaluated probe, in probe order
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
};

MapResult mean_average_precision(const ScoreMatrix& S);

/// One evaluated model: a row of the experiment table.
struct ReportRow {
  int batches_consumed = 0;
  std::size_t labeled = 0;
  double labeled_percent = 0.0;
  std::vector<double> cmc;  // cmc[k-1] = CMC(k)
  double map = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;

  double rank(std::size_t k) const { return k == 0 || k > cmc.size() ? 0.0 : cmc[k - 1]; }
  bool operator==(const ReportRow&) const = default;
};

struct EvalReport {
  std::string dataset;
  std::vector<ReportRow> rows;
  bool operator==(const EvalReport&) const = default;
};

void to_json(nlohmann::json& j, const ReportRow& r);
void from_json(const nlohmann::json& j, ReportRow& r);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

ReportRow evaluate(const ModelState& state, std::span<const FeatureRecord> probes,
                   std::span<const FeatureRecord> gallery);

struct AdaptationSession;

/// Evaluates every checkpoint of the session on the test probes/gallery.
EvalReport report(const AdaptationSession& session, std::span<const FeatureRecord> probes,
                  std::span<const FeatureRecord> gallery);

/// `rank,<row 1>,<row 2>,...` with one line per rank.
void write_cmc_csv(std::ostream& out, const EvalReport& r);

}  // namespace tma

#include "support.hpp"

#include "tma/eval.hpp"

#include <doctest.h>

#include <sstream>

using namespace tma;

namespace {

ScoreMatrix random_scores(Eigen::Index np, Eigen::Index ng, std::mt19937_64& rng, bool ties) {
  ScoreMatrix S;
  S.scores = tt::random_mat(np, ng, rng);
  if (ties) S.scores = (S.scores * 2.0).array().round() / 2.0;  // few distinct values
  std::uniform_int_distribution<int> id(0, static_cast<int>(std::max(np, ng)));
  for (Eigen::Index p = 0; p < np; ++p) S.probe_ids.push_back("p" + std::to_string(id(rng)));
  for (Eigen::Index g = 0; g < ng; ++g) S.gallery_ids.push_back("p" + std::to_string(id(rng)));
  return S;
}

}  // namespace

TEST_CASE("CMC and mAP equal the brute-force computation") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> np(1, 20), ng(1, 30);
  for (int t = 0; t < 200; ++t) {
    const ScoreMatrix S = random_scores(np(rng), ng(rng), rng, t % 2 == 0);
    const tt::BruteEval want = tt::brute_eval(S.scores, S.probe_ids, S.gallery_ids);
    const CmcCurve c = cmc(S);
    const MapResult m = mean_average_precision(S);
    REQUIRE(c.rate.size() == want.cmc.size());
    for (std::size_t k = 0; k < c.rate.size(); ++k) CHECK(std::abs(c.rate[k] - want.cmc[k]) <= 1e-12);
    CHECK(std::abs(m.map - want.map) <= 1e-12);
    CHECK(c.evaluated == want.evaluated);
    CHECK(m.evaluated == want.evaluated);
    CHECK(c.evaluated + c.excluded == S.probe_ids.size());
    for (std::size_t k = 1; k < c.rate.size(); ++k) CHECK(c.rate[k] >= c.rate[k - 1]);
    if (c.evaluated) CHECK(c.rate.back() == 1.0);
  }
}

TEST_CASE("ties rank the lower gallery index first") {
  ScoreMatrix S;
  S.scores = Mat::Constant(1, 3, 0.5);
  S.probe_ids = {"a"};
  S.gallery_ids = {"b", "a", "c"};
  CHECK(rank_gallery(S, 0) == std::vector<Eigen::Index>{0, 1, 2});
  const CmcCurve c = cmc(S);
  CHECK(c.at(1) == 0.0);
  CHECK(c.at(2) == 1.0);
  CHECK(c.at(0) == 0.0);
  CHECK(c.at(99) == 0.0);
  CHECK(mean_average_precision(S).map == 0.5);
}

TEST_CASE("with one true match AP is the reciprocal rank") {
  std::mt19937_64 rng(2);
  ScoreMatrix S;
  S.scores = tt::random_mat(6, 6, rng);
  for (int i = 0; i < 6; ++i) {
    S.probe_ids.push_back("x" + std::to_string(i));
    S.gallery_ids.push_back("x" + std::to_string(5 - i));
  }
  const MapResult m = mean_average_precision(S);
  REQUIRE(m.average_precision.size() == 6);
  for (Eigen::Index p = 0; p < 6; ++p) {
    const auto order = rank_gallery(S, p);
    const auto pos = std::find(order.begin(), order.end(), 5 - p) - order.begin();
    CHECK(m.average_precision[static_cast<std::size_t>(p)] == doctest::Approx(1.0 / (pos + 1)));
  }
}

TEST_CASE("probes without a true match are excluded") {
  ScoreMatrix S;
  S.scores = Mat::Zero(2, 1);
  S.probe_ids = {"a", "z"};
  S.gallery_ids = {"a"};
  const CmcCurve c = cmc(S);
  CHECK(c.evaluated == 1);
  CHECK(c.excluded == 1);
  CHECK(c.at(1) == 1.0);
  S.probe_ids = {"y", "z"};
  CHECK(mean_average_precision(S).map == 0.0);
  S.probe_ids = {"a"};
  CHECK_THROWS_AS(cmc(S), InvalidArgument);
}

TEST_CASE("evaluate scores with the model margin") {
  ModelState s(2, 2);
  s.K = Mat::Identity(2, 2);
  std::vector<FeatureRecord> probes{{"a", 0, Vec::Unit(2, 0), {}}, {"b", 0, Vec::Unit(2, 1), {}}};
  std::vector<FeatureRecord> gallery{{"b", 1, Vec::Unit(2, 1), {}}, {"a", 1, Vec::Unit(2, 0), {}}};
  const ReportRow r = evaluate(s, probes, gallery);
  CHECK(r.rank(1) == 1.0);
  CHECK(r.map == 1.0);
  const ScoreMatrix S = score_all(s, probes, gallery);
  CHECK(S.scores(0, 1) == 1.0);
  CHECK(S.scores(0, 0) == 0.0);
  s.K(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(score_all(s, probes, gallery), InvalidArgument);
}

TEST_CASE("report JSON and CMC CSV") {
  EvalReport r;
  r.dataset = "d";
  r.rows.push_back({1, 10, 2.5, {0.5, 1.0}, 0.75, 4, 0});
  r.rows.push_back({2, 20, 5.0, {0.75, 1.0}, 0.875, 4, 0});
  const EvalReport back = nlohmann::json(r).get<EvalReport>();
  CHECK(back == r);
  std::ostringstream out;
  write_cmc_csv(out, r);
  CHECK(out.str() == "rank,TMA1,TMA2\n1,0.5,0.75\n2,1,1\n");
}

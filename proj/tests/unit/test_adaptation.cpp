#include "support.hpp"

#include "tma/adaptation.hpp"
#include "tma/synthetic.hpp"

#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

using namespace tma;

namespace {

std::vector<FeatureRecord> small_records(int ids = 20) {
  SyntheticConfig sc;
  sc.identities = ids;
  sc.dim = 8;
  sc.latent = 4;
  sc.seed = 5;
  return make_synthetic(sc);
}

AdaptationConfig small_config() {
  AdaptationConfig c;
  c.trainer.epochs = 20;
  c.update_epochs = 10;
  c.num_batches = 4;
  return c;
}

AdaptationSession ready_session(SelectionMode mode = SelectionMode::RelevantSet) {
  AdaptationConfig cfg = small_config();
  cfg.mode = mode;
  AdaptationSession s = make_session(small_records(), 0, 1, cfg);
  GroundTruthOracle gt;
  offline_phase(s, gt);
  return s;
}

}  // namespace

TEST_CASE("partition deals whole identities into disjoint, covering batches") {
  const auto recs = small_records(23);
  const BatchPartition a = partition(recs, 0, 1, 4, 9);
  REQUIRE(a.batches.size() == 4);
  std::set<std::size_t> seen;
  for (const auto& b : a.batches) {
    CHECK(b.probes.size() == b.gallery.size());
    CHECK(b.probes.size() >= 5);
    CHECK(b.probes.size() <= 6);
    std::set<std::string> pids, gids;
    for (auto i : b.probes) {
      CHECK(recs[i].camera_id == 0);
      CHECK(seen.insert(i).second);
      pids.insert(recs[i].person_id);
    }
    for (auto i : b.gallery) {
      CHECK(recs[i].camera_id == 1);
      CHECK(seen.insert(i).second);
      gids.insert(recs[i].person_id);
    }
    CHECK(pids == gids);
  }
  CHECK(seen.size() == recs.size());
  const BatchPartition again = partition(recs, 0, 1, 4, 9);
  for (std::size_t b = 0; b < 4; ++b) CHECK(again.batches[b].probes == a.batches[b].probes);
  CHECK_FALSE(partition(recs, 0, 1, 4, 10).batches[0].probes == a.batches[0].probes);
  CHECK_THROWS_AS(partition(recs, 0, 1, 24, 1), InvalidArgument);
  CHECK_THROWS_AS(partition(recs, 0, 1, 0, 1), InvalidArgument);
}

TEST_CASE("oracles") {
  const FeatureRecord a{"a", 0, Vec::Zero(1), {}}, a1{"a", 1, Vec::Zero(1), {}}, b{"b", 1, Vec::Zero(1), {}};
  GroundTruthOracle gt;
  CHECK(gt.label(a, a1)->label == 1);
  CHECK(gt.label(a, b)->label == -1);
  CHECK(gt.label(a, b)->source == LabelSource::GroundTruth);

  SimulatedOracle exact(0.0, 1);
  CHECK(exact.label(a, a1)->label == 1);
  SimulatedOracle all(1.0, 1, true);
  CHECK(all.label(a, a1)->label == -1);
  CHECK(all.label(a, b)->label == 1);
  CHECK_THROWS_AS(SimulatedOracle(1.0, 1), InvalidArgument);
  CHECK_THROWS_AS(SimulatedOracle(-0.1, 1), InvalidArgument);

  // C = 0.15 over 1000 distinct pairs: Binomial(1000, 0.15), mean 150, sd 11.3
  SimulatedOracle noisy(0.15, 7);
  int flips = 0;
  for (int i = 0; i < 1000; ++i) {
    const FeatureRecord p{"p" + std::to_string(i), 0, Vec::Zero(1), {}};
    const FeatureRecord g{"g" + std::to_string(i % 37), 1, Vec::Zero(1), {}};
    const auto ans = noisy.label(p, g);
    flips += ans->label == 1;  // truth is -1 for every pair here
    CHECK(ans->source == LabelSource::SimulatedNoisy);
    CHECK(noisy.label(p, g)->label == ans->label);  // same pair, same answer
  }
  CHECK(flips >= 116);
  CHECK(flips <= 184);

  const std::vector<LabelEntry> log{{"a", "b", 1, LabelSource::Human, "", 0}};
  LogOracle lo(log);
  CHECK(lo.label(a, b)->label == 1);
  CHECK(lo.label(a, b)->source == LabelSource::Human);
  CHECK_FALSE(lo.label(a, a1).has_value());
}

TEST_CASE("session bookkeeping and duplicate labels") {
  AdaptationSession s = make_session(small_records(), 0, 1, small_config());
  CHECK(s.n() == 400);
  CHECK(s.num_probes() == 20);
  CHECK(s.effort_percent() == 0.0);
  const Batch& b = s.parts.batches[1];
  s.record_label(b.probes[0], b.gallery[0], 1, LabelSource::Human, 1);
  CHECK(s.stored_label(s.records[b.probes[0]].person_id, s.records[b.gallery[0]].person_id) == 1);
  CHECK_THROWS_AS(s.record_label(b.probes[0], b.gallery[0], -1, LabelSource::Human, 1), Conflict);
  CHECK(s.label_log.size() == 1);
  CHECK_THROWS_AS(s.record_label(b.probes[0], b.probes[1], 1, LabelSource::Human, 1), InvalidArgument);
  CHECK_THROWS_AS(s.record_label(b.probes[0], b.gallery[1], 0, LabelSource::Human, 1), InvalidArgument);

  auto dup = small_records();
  dup[1].person_id = dup[0].person_id;
  CHECK_THROWS_AS(make_session(dup, 0, 1, small_config()), SchemaError);
  CHECK_THROWS_AS(make_session(small_records(), 1, 1, small_config()), InvalidArgument);
}

TEST_CASE("off-line phase labels the first batch and stores checkpoint 1") {
  const AdaptationSession s = ready_session();
  const Batch& b0 = s.parts.batches[0];
  CHECK(s.label_log.size() == b0.pairs());
  for (const auto& e : s.label_log) {
    CHECK(e.batch == 0);
    CHECK(e.source == LabelSource::GroundTruth);
  }
  REQUIRE(s.checkpoints.size() == 1);
  CHECK(s.checkpoints[0].batches_consumed == 1);
  CHECK(s.checkpoints[0].labeled == b0.pairs());
  CHECK(s.checkpoints[0].labeled_percent == doctest::Approx(100.0 * b0.pairs() / s.n()));
  CHECK(s.consumed == std::vector<int>{0});
}

TEST_CASE("selection modes") {
  SUBCASE("relevant set picks members of each probe's dominant set") {
    const AdaptationSession s = ready_session();
    const BatchSelection sel = select_batch(s, 1);
    const Batch& b = s.parts.batches[1];
    REQUIRE(sel.probes.size() == b.probes.size());
    for (std::size_t k = 0; k < sel.probes.size(); ++k) {
      CHECK(sel.probes[k].probe == b.probes[k]);
      CHECK(sel.probes[k].gallery.size() == sel.probes[k].relevant.members.size());
      for (auto g : sel.probes[k].gallery)
        CHECK(std::find(b.gallery.begin(), b.gallery.end(), g) != b.gallery.end());
    }
    CHECK(sel.auto_labeled.empty());
    CHECK(sel.queries() <= b.pairs());
  }
  SUBCASE("supervised asks for every pair") {
    const AdaptationSession s = ready_session(SelectionMode::Supervised);
    const BatchSelection sel = select_batch(s, 2);
    CHECK(sel.queries() == s.parts.batches[2].pairs());
  }
  SUBCASE("unsupervised asks nothing and labels every pair") {
    const AdaptationSession s = ready_session(SelectionMode::Unsupervised);
    const BatchSelection sel = select_batch(s, 1);
    CHECK(sel.queries() == 0);
    CHECK(sel.auto_labeled.size() == s.parts.batches[1].pairs());
  }
  SUBCASE("semi-supervised splits each ranked list into top, bottom and asked") {
    AdaptationConfig cfg = small_config();
    cfg.mode = SelectionMode::SemiSupervised;
    cfg.semi_k = 2;
    AdaptationSession s = make_session(small_records(), 0, 1, cfg);
    GroundTruthOracle gt;
    offline_phase(s, gt);
    const BatchSelection sel = select_batch(s, 1);
    const std::size_t m = s.parts.batches[1].gallery.size();
    CHECK(sel.auto_labeled.size() == sel.probes.size() * 4);
    for (const auto& ps : sel.probes) CHECK(ps.gallery.size() == m - 4);
    int pos = 0;
    for (const auto& a : sel.auto_labeled) pos += a.label == 1;
    CHECK(pos == static_cast<int>(sel.probes.size()) * 2);
  }
  const AdaptationSession s = ready_session();
  CHECK_THROWS_AS(select_batch(s, 4), InvalidArgument);
  AdaptationSession fresh = make_session(small_records(), 0, 1, small_config());
  CHECK_THROWS_AS(select_batch(fresh, 1), InvalidArgument);
}

TEST_CASE("a batch with no labeled pairs is consumed without an update") {
  AdaptationSession s = ready_session();
  const ModelState before = s.model;
  const BatchSelection sel = select_batch(s, 1);
  const CheckpointEntry& c = update_batch(s, sel);  // nothing labeled: every task skipped
  CHECK_FALSE(c.updated);
  CHECK(c.training_pairs == 0);
  CHECK(c.state == before);
  CHECK(s.checkpoints.size() == 2);
  CHECK_THROWS_AS(update_batch(s, sel), InvalidArgument);
}

TEST_CASE("updates change the model and count only consumed batches") {
  AdaptationSession s = ready_session();
  GroundTruthOracle gt;
  const std::vector<int> batches{1, 2};
  run_adaptation(s, gt, batches);
  REQUIRE(s.checkpoints.size() == 3);
  CHECK(s.checkpoints[1].updated);
  CHECK_FALSE(s.checkpoints[1].state == s.checkpoints[0].state);
  CHECK(s.checkpoints.back().labeled == s.label_log.size());
  // labels of a batch that is still open do not count yet
  const BatchSelection sel = select_batch(s, 3);
  const auto& ps = sel.probes.front();
  s.record_label(ps.probe, s.parts.batches[3].gallery[0], -1, LabelSource::Human, 3);
  CHECK(s.checkpoints.back().labeled == s.label_log.size() - 1);
}

TEST_CASE("replay from the label log is bit-identical and keeps the log order") {
  AdaptationConfig cfg = small_config();
  AdaptationSession s = make_session(small_records(), 0, 1, cfg);
  SimulatedOracle oracle(0.1, 3);
  offline_phase(s, oracle);
  const std::vector<int> batches{2, 1, 3};
  run_adaptation(s, oracle, batches);

  // shuffle the log the way a human might label: order differs from selection order
  std::vector<LabelEntry> log = s.label_log;
  std::mt19937_64 rng(4);
  std::shuffle(log.begin() + static_cast<std::ptrdiff_t>(s.parts.batches[0].pairs()), log.end(), rng);
  for (std::size_t i = 0; i < log.size(); ++i) log[i].timestamp = "t" + std::to_string(i);

  const AdaptationSession r1 = replay(small_records(), 0, 1, cfg, log, s.consumed);
  const AdaptationSession r2 = replay(small_records(), 0, 1, cfg, log, s.consumed);
  REQUIRE(r1.checkpoints.size() == s.checkpoints.size());
  for (std::size_t k = 0; k < s.checkpoints.size(); ++k) {
    CHECK(r1.checkpoints[k].state == s.checkpoints[k].state);
    CHECK(r1.checkpoints[k].state == r2.checkpoints[k].state);
  }
  REQUIRE(r1.label_log.size() == log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(r1.label_log[i].probe_id == log[i].probe_id);
    CHECK(r1.label_log[i].gallery_id == log[i].gallery_id);
    CHECK(r1.label_log[i].timestamp == log[i].timestamp);
    CHECK(r1.label_log[i].source == LabelSource::SimulatedNoisy);
  }
  const std::vector<int> bad{1};
  CHECK_THROWS_AS(replay(small_records(), 0, 1, cfg, log, bad), InvalidArgument);
}

TEST_CASE("restore_labels validates entries") {
  AdaptationSession s = make_session(small_records(), 0, 1, small_config());
  const auto& b = s.parts.batches[0];
  const std::string p = s.records[b.probes[0]].person_id, g = s.records[b.gallery[0]].person_id;
  restore_labels(s, {{p, g, 1, LabelSource::Human, "", 0}});
  CHECK(s.stored_label(p, g) == 1);
  CHECK_THROWS_AS(restore_labels(s, {{"nobody", g, 1, LabelSource::Human, "", 0}}), SchemaError);
  CHECK_THROWS_AS(restore_labels(s, {{p, g, 1, LabelSource::Human, "", 9}}), SchemaError);
  CHECK_THROWS_AS(restore_labels(s, {{p, g, 1, LabelSource::Human, "", 0}, {p, g, -1, LabelSource::Human, "", 0}}),
                  SchemaError);
  CHECK(s.stored_label(p, g) == 1);  // failed restores leave the log alone
}

TEST_CASE("selections survive a JSON round trip by person id") {
  const AdaptationSession s = ready_session(SelectionMode::SemiSupervised);
  const BatchSelection sel = select_batch(s, 1);
  const nlohmann::json j = selection_to_json(s, sel);
  const BatchSelection back = selection_from_json(s, nlohmann::json::parse(j.dump()));
  CHECK(selection_to_json(s, back) == j);
  CHECK(back.calibrator.A == sel.calibrator.A);
  REQUIRE(back.auto_labeled.size() == sel.auto_labeled.size());
  CHECK(back.auto_labeled[0].gallery == sel.auto_labeled[0].gallery);
  nlohmann::json bad = j;
  bad["probes"][0]["probe"] = "ghost";
  CHECK_THROWS_AS(selection_from_json(s, bad), SchemaError);
  bad = j;
  bad["batch"] = 17;
  CHECK_THROWS_AS(selection_from_json(s, bad), SchemaError);
  bad = j;
  bad.erase("calibrator");
  CHECK_THROWS_AS(selection_from_json(s, bad), SchemaError);
}

TEST_CASE("session manifest and adaptation config") {
  const AdaptationSession s = ready_session();
  const nlohmann::json m = session_manifest(s);
  CHECK(m.at("format") == "tma-session");
  CHECK(m.at("version") == 1);
  CHECK(m.at("n") == 400);
  CHECK(m.at("consumed") == nlohmann::json::array({0}));
  CHECK(m.at("partition").at("batches").size() == 4);
  CHECK(m.at("partition").at("batches")[0].at("probes").size() == s.parts.batches[0].probes.size());
  const AdaptationConfig back = m.at("config").get<AdaptationConfig>();
  CHECK(nlohmann::json(back) == nlohmann::json(s.config));

  AdaptationConfig c;
  c.mode = SelectionMode::Unsupervised;
  c.selection.epsilon = 0.01;
  c.cumulative_replay = true;
  CHECK(nlohmann::json(nlohmann::json(c).get<AdaptationConfig>()) == nlohmann::json(c));
  CHECK(selection_mode_from_string(to_string(SelectionMode::SemiSupervised)) == SelectionMode::SemiSupervised);
  CHECK_THROWS_AS(selection_mode_from_string("magic"), InvalidArgument);

  c = {};
  c.trainer.eta = -1;
  try {
    c.validate();
    FAIL("expected a validation error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).rfind("trainer.", 0) == 0);
  }
  c = {};
  c.selection.epsilon = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("label log lines, torn writes and malformed lines") {
  const auto dir = tt::temp_dir("label_log");
  const auto path = dir / "labels.jsonl";
  const LabelEntry e{"p1", "g2", -1, LabelSource::Human, utc_timestamp(), 3};
  append_label(path, e);
  append_label(path, {"p1", "g3", 1, LabelSource::GroundTruth, "2024-01-01T00:00:00.000Z", 0});
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  const auto j = nlohmann::json::parse(first);
  CHECK(j.at("probe_id") == "p1");
  CHECK(j.at("label") == -1);
  CHECK(j.at("source") == "human");
  CHECK(j.at("batch") == 3);
  CHECK(j.at("timestamp").get<std::string>().size() == 24);
  CHECK(j.at("timestamp").get<std::string>().back() == 'Z');

  { std::ofstream(path, std::ios::app) << R"({"probe_id":"p1","gallery)"; }  // crash mid-write
  const auto entries = read_label_log(path);
  REQUIRE(entries.size() == 2);
  CHECK(entries[1].source == LabelSource::GroundTruth);

  std::istringstream bad(R"({"probe_id":"a","gallery_id":"b","label":2,"source":"human","batch":0})"
                         "\n{}\n");
  CHECK_THROWS_AS(read_label_log(bad), ParseError);
  std::istringstream garbage("not json\n");
  CHECK_THROWS_AS(read_label_log(garbage), ParseError);
  CHECK(read_label_log(dir / "absent.jsonl").empty());
}

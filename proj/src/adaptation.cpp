#include "tma/adaptation.hpp"

#include "tma/kernels.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

namespace tma {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string to_string(SelectionMode m) {
  switch (m) {
    case SelectionMode::RelevantSet: return "relevant-set";
    case SelectionMode::Unsupervised: return "unsupervised";
    case SelectionMode::SemiSupervised: return "semi-supervised";
    case SelectionMode::Supervised: return "supervised";
  }
  return "relevant-set";
}

SelectionMode selection_mode_from_string(const std::string& s) {
  if (s == "relevant-set") return SelectionMode::RelevantSet;
  if (s == "unsupervised") return SelectionMode::Unsupervised;
  if (s == "semi-supervised") return SelectionMode::SemiSupervised;
  if (s == "supervised") return SelectionMode::Supervised;
  throw InvalidArgument("unknown selection mode '" + s + "'");
}

void AdaptationConfig::validate() const {
  // Messages start with the offending field's path.
  try {
    trainer.validate();
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(std::string("trainer.") + e.what());
  }
  if (update_epochs < 0) throw InvalidArgument("update_epochs must be >= 0");
  if (update_iters < 0) throw InvalidArgument("update_iters must be >= 0");
  if (num_batches < 1) throw InvalidArgument("num_batches must be >= 1");
  if (semi_k < 0) throw InvalidArgument("semi_k must be >= 0");
  if (!(selection.epsilon > 0.0)) throw InvalidArgument("selection.epsilon must be > 0");
  if (selection.max_iters < 1) throw InvalidArgument("selection.max_iters must be >= 1");
  if (!(selection.support_tau >= 0.0)) throw InvalidArgument("selection.support_tau must be >= 0");
  if (!(selection.init_jitter >= 0.0) || selection.init_jitter >= 1.0)
    throw InvalidArgument("selection.init_jitter must be in [0, 1)");
}

void to_json(nlohmann::json& j, const AdaptationConfig& c) {
  j = {{"trainer", c.trainer},
       {"update_epochs", c.update_epochs},
       {"update_iters", c.update_iters},
       {"num_batches", c.num_batches},
       {"partition_seed", c.partition_seed},
       {"selection", c.selection},
       {"mode", to_string(c.mode)},
       {"semi_k", c.semi_k},
       {"cumulative_replay", c.cumulative_replay}};
}

void from_json(const nlohmann::json& j, AdaptationConfig& c) {
  const AdaptationConfig d;
  c.trainer = j.contains("trainer") ? j.at("trainer").get<TrainerConfig>() : d.trainer;
  c.update_epochs = j.value("update_epochs", d.update_epochs);
  c.update_iters = j.value("update_iters", d.update_iters);
  c.num_batches = j.value("num_batches", d.num_batches);
  c.partition_seed = j.value("partition_seed", d.partition_seed);
  c.selection = j.contains("selection") ? j.at("selection").get<SelectionConfig>() : d.selection;
  c.mode = selection_mode_from_string(j.value("mode", to_string(d.mode)));
  c.semi_k = j.value("semi_k", d.semi_k);
  c.cumulative_replay = j.value("cumulative_replay", d.cumulative_replay);
}

BatchPartition partition(std::span<const FeatureRecord> records, int probe_camera,
                         int gallery_camera, int num_batches, std::uint64_t seed) {
  if (num_batches < 1) throw InvalidArgument("partition: num_batches must be >= 1");
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& r : records)
    if ((r.camera_id == probe_camera || r.camera_id == gallery_camera) &&
        seen.insert(r.person_id).second)
      ids.push_back(r.person_id);
  if (static_cast<std::size_t>(num_batches) > ids.size())
    throw InvalidArgument("partition: more batches than persons");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  std::map<std::string, int> group;
  const std::size_t N = ids.size(), B = static_cast<std::size_t>(num_batches);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = b * N / B; k < (b + 1) * N / B; ++k) group[ids[k]] = static_cast<int>(b);

  BatchPartition out;
  out.batches.resize(B);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto it = group.find(r.person_id);
    if (it == group.end()) continue;
    auto& b = out.batches[static_cast<std::size_t>(it->second)];
    if (r.camera_id == probe_camera) b.probes.push_back(i);
    else if (r.camera_id == gallery_camera) b.gallery.push_back(i);
  }
  for (std::size_t b = 0; b < B; ++b)
    if (out.batches[b].probes.empty() || out.batches[b].gallery.empty())
      throw InvalidArgument("partition: batch " + std::to_string(b) +
                            " has no probe or no gallery image");
  return out;
}

std::optional<OracleAnswer> GroundTruthOracle::label(const FeatureRecord& probe,
                                                     const FeatureRecord& gallery) {
  return OracleAnswer{probe.person_id == gallery.person_id ? 1 : -1, LabelSource::GroundTruth};
}

SimulatedOracle::SimulatedOracle(double error_rate, std::uint64_t seed, bool allow_certain_flip)
    : c_(error_rate), seed_(seed) {
  const bool ok = error_rate >= 0.0 && (error_rate < 1.0 || (allow_certain_flip && error_rate == 1.0));
  if (!ok) throw InvalidArgument("simulated oracle: error rate must be in [0, 1)");
}

std::optional<OracleAnswer> SimulatedOracle::label(const FeatureRecord& probe,
                                                   const FeatureRecord& gallery) {
  const int truth = probe.person_id == gallery.person_id ? 1 : -1;
  const std::uint64_t h =
      splitmix64(seed_ ^ splitmix64(fnv1a(probe.person_id)) ^ (fnv1a(gallery.person_id) << 1));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return OracleAnswer{u < c_ ? -truth : truth, LabelSource::SimulatedNoisy};
}

LogOracle::LogOracle(std::span<const LabelEntry> log) {
  for (const auto& e : log) answers_.emplace(std::make_pair(e.probe_id, e.gallery_id),
                                             OracleAnswer{e.label, e.source});
}

std::optional<OracleAnswer> LogOracle::label(const FeatureRecord& probe,
                                             const FeatureRecord& gallery) {
  auto it = answers_.find({probe.person_id, gallery.person_id});
  if (it == answers_.end()) return std::nullopt;
  return it->second;
}

std::size_t AdaptationSession::num_probes() const { return probe_by_id.size(); }
std::size_t AdaptationSession::num_gallery() const { return gallery_by_id.size(); }
std::size_t AdaptationSession::n() const { return num_probes() * num_gallery(); }

double AdaptationSession::effort_percent() const {
  return n() ? 100.0 * static_cast<double>(label_log.size()) / static_cast<double>(n()) : 0.0;
}

std::optional<int> AdaptationSession::stored_label(const std::string& probe_id,
                                                   const std::string& gallery_id) const {
  auto it = label_index.find({probe_id, gallery_id});
  if (it == label_index.end()) return std::nullopt;
  return label_log[it->second].label;
}

const LabelEntry& AdaptationSession::record_label(std::size_t probe, std::size_t gallery,
                                                  int label, LabelSource source, int batch) {
  if (probe >= records.size() || gallery >= records.size())
    throw InvalidArgument("record_label: record index out of range");
  if (label != 1 && label != -1) throw InvalidArgument("record_label: label must be -1 or +1");
  const auto& p = records[probe];
  const auto& g = records[gallery];
  if (p.camera_id != probe_camera || g.camera_id != gallery_camera)
    throw InvalidArgument("record_label: pair is not probe camera x gallery camera");
  const auto key = std::make_pair(p.person_id, g.person_id);
  if (label_index.count(key))
    throw Conflict("pair (" + p.person_id + ", " + g.person_id + ") is already labeled");
  label_log.push_back({p.person_id, g.person_id, label, source, utc_timestamp(), batch});
  label_index.emplace(key, label_log.size() - 1);
  return label_log.back();
}

AdaptationSession make_session(std::vector<FeatureRecord> records, int probe_camera,
                               int gallery_camera, const AdaptationConfig& cfg) {
  cfg.validate();
  if (probe_camera == gallery_camera)
    throw InvalidArgument("probe and gallery cameras must differ");
  if (records.empty()) throw InvalidArgument("session needs training records");
  validate_records(records, records.front().feature.size());
  AdaptationSession s;
  s.config = cfg;
  s.probe_camera = probe_camera;
  s.gallery_camera = gallery_camera;
  s.records = std::move(records);
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    const auto& r = s.records[i];
    auto* table = r.camera_id == probe_camera     ? &s.probe_by_id
                  : r.camera_id == gallery_camera ? &s.gallery_by_id
                                                  : nullptr;
    if (!table) continue;
    if (!table->emplace(r.person_id, i).second)
      throw SchemaError("person id '" + r.person_id + "' appears twice in camera " +
                        std::to_string(r.camera_id) + " of the training split");
  }
  s.parts = partition(s.records, probe_camera, gallery_camera, cfg.num_batches, cfg.partition_seed);
  return s;
}

namespace {

bool is_consumed(const AdaptationSession& s, int batch) {
  return std::find(s.consumed.begin(), s.consumed.end(), batch) != s.consumed.end();
}

void push_checkpoint(AdaptationSession& s, int batch, bool updated, std::size_t training_pairs) {
  CheckpointEntry c;
  c.batches_consumed = static_cast<int>(s.consumed.size());
  c.batch = batch;
  c.updated = updated;
  // Only batches already consumed count, so labels arriving for a batch that
  // is still open do not depend on when this checkpoint was taken.
  c.labeled = static_cast<std::size_t>(std::count_if(
      s.label_log.begin(), s.label_log.end(),
      [&](const LabelEntry& e) { return is_consumed(s, e.batch); }));
  c.labeled_percent =
      s.n() ? 100.0 * static_cast<double>(c.labeled) / static_cast<double>(s.n()) : 0.0;
  c.training_pairs = training_pairs;
  c.state = s.model;
  s.checkpoints.push_back(std::move(c));
}

LabeledPair from_entry(const AdaptationSession& s, const LabelEntry& e) {
  auto p = s.probe_by_id.find(e.probe_id);
  auto g = s.gallery_by_id.find(e.gallery_id);
  if (p == s.probe_by_id.end() || g == s.gallery_by_id.end())
    throw SchemaError("label for unknown pair (" + e.probe_id + ", " + e.gallery_id + ")");
  return {p->second, g->second, e.label, e.source};
}

}  // namespace

void offline_phase(AdaptationSession& s, LabelOracle& oracle) {
  if (!s.consumed.empty()) throw InvalidArgument("offline phase already ran");
  const Batch& b = s.parts.batches.front();
  std::vector<LabeledPair> pairs;
  pairs.reserve(b.pairs());
  for (auto p : b.probes)
    for (auto g : b.gallery) {
      const auto& pid = s.records[p].person_id;
      const auto& gid = s.records[g].person_id;
      if (auto stored = s.stored_label(pid, gid)) {
        pairs.push_back({p, g, *stored, s.label_log[s.label_index.at({pid, gid})].source});
        continue;
      }
      const auto ans = oracle.label(s.records[p], s.records[g]);
      if (!ans) continue;
      s.record_label(p, g, ans->label, ans->source, 0);
      pairs.push_back({p, g, ans->label, ans->source});
    }
  if (pairs.empty()) throw InvalidArgument("offline phase: no labeled pairs in the first batch");
  const PairView view{s.records, pairs};
  s.model = train(view, s.config.trainer).state;
  s.consumed.push_back(0);
  push_checkpoint(s, 0, true, pairs.size());
}

PlattCalibrator refit_calibrator(const AdaptationSession& s) {
  if (s.label_log.empty() || s.model.K.size() == 0) return {};
  std::vector<LabeledPair> pairs;
  pairs.reserve(s.label_log.size());
  for (const auto& e : s.label_log) pairs.push_back(from_entry(s, e));
  // Fixed order, so the fit does not depend on the order labels arrived in.
  std::sort(pairs.begin(), pairs.end(), [](const LabeledPair& a, const LabeledPair& b) {
    return std::tie(a.probe, a.gallery) < std::tie(b.probe, b.gallery);
  });
  std::vector<int> labels;
  labels.reserve(pairs.size());
  for (const auto& p : pairs) labels.push_back(p.label);
  const auto scores = kernels::pair_margins(s.model.K, s.model.P, PairView{s.records, pairs});
  try {
    return platt_fit(scores, labels);
  } catch (const CalibrationUnavailable&) {
    return {};
  }
}

std::size_t BatchSelection::queries() const {
  std::size_t q = 0;
  for (const auto& p : probes) q += p.gallery.size();
  return q;
}

BatchSelection select_batch(const AdaptationSession& s, int batch) {
  if (s.checkpoints.empty()) throw InvalidArgument("select_batch: run the offline phase first");
  if (batch < 0 || static_cast<std::size_t>(batch) >= s.parts.batches.size())
    throw InvalidArgument("select_batch: no batch " + std::to_string(batch));
  const Batch& b = s.parts.batches[static_cast<std::size_t>(batch)];
  BatchSelection sel;
  sel.batch = batch;
  sel.calibrator = refit_calibrator(s);

  std::vector<FeatureRecord> gallery;
  gallery.reserve(b.gallery.size());
  for (auto g : b.gallery) gallery.push_back(s.records[g]);
  sel.probes.resize(b.probes.size());
  const auto mode = s.config.mode;

  std::vector<FeatureRecord> probes;
  for (auto p : b.probes) probes.push_back(s.records[p]);
  Mat scores;
  if (mode != SelectionMode::RelevantSet) scores = kernels::score_matrix(s.model, probes, gallery);

  std::vector<std::vector<LabeledPair>> autos(b.probes.size());
  const auto np = static_cast<std::ptrdiff_t>(b.probes.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t k = 0; k < np; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    ProbeSelection& ps = sel.probes[ku];
    ps.probe = b.probes[ku];
    switch (mode) {
      case SelectionMode::RelevantSet: {
        SelectionConfig cfg = s.config.selection;
        cfg.jitter_seed ^= fnv1a(probes[ku].person_id);
        ps.relevant = probe_relevant_set(probes[ku], gallery, s.model, sel.calibrator, cfg);
        for (auto m : ps.relevant.members) ps.gallery.push_back(b.gallery[m]);
        break;
      }
      case SelectionMode::Supervised:
        ps.gallery = b.gallery;
        break;
      case SelectionMode::Unsupervised:
        for (std::size_t g = 0; g < b.gallery.size(); ++g) {
          const double prob = sel.calibrator(scores(k, static_cast<Eigen::Index>(g)));
          autos[ku].push_back({ps.probe, b.gallery[g], prob >= 0.5 ? 1 : -1,
                               LabelSource::SimulatedNoisy});
        }
        break;
      case SelectionMode::SemiSupervised: {
        std::vector<std::size_t> order(b.gallery.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
          return scores(k, static_cast<Eigen::Index>(x)) > scores(k, static_cast<Eigen::Index>(y));
        });
        const std::size_t m = order.size(), kk = static_cast<std::size_t>(s.config.semi_k);
        const std::size_t top = std::min(kk, m);
        const std::size_t bottom_from = std::max(top, m > kk ? m - kk : 0);
        for (std::size_t r = 0; r < m; ++r) {
          const std::size_t g = b.gallery[order[r]];
          if (r < top) autos[ku].push_back({ps.probe, g, 1, LabelSource::SimulatedNoisy});
          else if (r >= bottom_from) autos[ku].push_back({ps.probe, g, -1, LabelSource::SimulatedNoisy});
          else ps.gallery.push_back(g);
        }
        std::sort(ps.gallery.begin(), ps.gallery.end());
        break;
      }
    }
  }
  for (auto& a : autos) sel.auto_labeled.insert(sel.auto_labeled.end(), a.begin(), a.end());
  return sel;
}

const CheckpointEntry& update_batch(AdaptationSession& s, const BatchSelection& sel) {
  if (is_consumed(s, sel.batch))
    throw InvalidArgument("batch " + std::to_string(sel.batch) + " was already used");
  const Batch& b = s.parts.batches[static_cast<std::size_t>(sel.batch)];
  std::vector<LabeledPair> pairs;
  if (s.config.cumulative_replay) {
    for (const auto& e : s.label_log)
      if (e.batch == sel.batch || is_consumed(s, e.batch)) pairs.push_back(from_entry(s, e));
  } else {
    for (const auto& ps : sel.probes)
      for (auto g : ps.gallery) {
        auto it = s.label_index.find({s.records[ps.probe].person_id, s.records[g].person_id});
        if (it == s.label_index.end()) continue;  // skipped
        pairs.push_back(from_entry(s, s.label_log[it->second]));
      }
  }
  pairs.insert(pairs.end(), sel.auto_labeled.begin(), sel.auto_labeled.end());

  s.consumed.push_back(sel.batch);
  const bool update = !pairs.empty() && s.config.update_epochs > 0;
  if (update) {
    TrainerConfig ucfg = s.config.trainer;
    ucfg.epochs = s.config.update_epochs;
    ucfg.iters_per_epoch = s.config.update_iters > 0
                               ? s.config.update_iters
                               : static_cast<int>(std::max<std::size_t>(1, 2 * b.pairs()));
    ucfg.seed = s.config.trainer.seed + static_cast<std::uint64_t>(sel.batch) * 7919ULL;
    ucfg.record_trace = false;
    s.model = train(PairView{s.records, pairs}, ucfg, s.model).state;
  }
  push_checkpoint(s, sel.batch, update, pairs.size());
  return s.checkpoints.back();
}

void run_adaptation(AdaptationSession& s, LabelOracle& oracle, std::span<const int> batches) {
  for (int b : batches) {
    const BatchSelection sel = select_batch(s, b);
    for (const auto& ps : sel.probes)
      for (auto g : ps.gallery) {
        if (s.stored_label(s.records[ps.probe].person_id, s.records[g].person_id)) continue;
        const auto ans = oracle.label(s.records[ps.probe], s.records[g]);
        if (!ans) continue;
        s.record_label(ps.probe, g, ans->label, ans->source, b);
      }
    update_batch(s, sel);
  }
}

AdaptationSession replay(std::vector<FeatureRecord> records, int probe_camera, int gallery_camera,
                         const AdaptationConfig& cfg, std::span<const LabelEntry> log,
                         std::span<const int> consumed) {
  AdaptationSession s = make_session(std::move(records), probe_camera, gallery_camera, cfg);
  if (consumed.empty() || consumed.front() != 0)
    throw InvalidArgument("replay: the first consumed batch must be batch 0");
  LogOracle oracle(log);
  offline_phase(s, oracle);
  run_adaptation(s, oracle, consumed.subspan(1));
  // Keep the original order and timestamps so the rebuilt log matches the input.
  std::map<std::pair<std::string, std::string>, std::size_t> orig;
  for (std::size_t i = 0; i < log.size(); ++i)
    orig.emplace(std::make_pair(log[i].probe_id, log[i].gallery_id), i);
  auto pos = [&](const LabelEntry& e) { return orig.at({e.probe_id, e.gallery_id}); };
  std::stable_sort(s.label_log.begin(), s.label_log.end(),
                   [&](const LabelEntry& a, const LabelEntry& b) { return pos(a) < pos(b); });
  for (auto& e : s.label_log) e.timestamp = log[pos(e)].timestamp;
  s.label_index.clear();
  for (std::size_t i = 0; i < s.label_log.size(); ++i)
    s.label_index.emplace(std::make_pair(s.label_log[i].probe_id, s.label_log[i].gallery_id), i);
  return s;
}

void restore_labels(AdaptationSession& s, std::vector<LabelEntry> log) {
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& e = log[i];
    (void)from_entry(s, e);
    if (e.batch < 0 || static_cast<std::size_t>(e.batch) >= s.parts.batches.size())
      throw SchemaError("label entry with unknown batch " + std::to_string(e.batch));
    if (!index.emplace(std::make_pair(e.probe_id, e.gallery_id), i).second)
      throw SchemaError("pair (" + e.probe_id + ", " + e.gallery_id + ") is labeled twice");
  }
  s.label_log = std::move(log);
  s.label_index = std::move(index);
}

nlohmann::json selection_to_json(const AdaptationSession& s, const BatchSelection& sel) {
  nlohmann::json probes = nlohmann::json::array();
  for (const auto& ps : sel.probes) {
    nlohmann::json g = nlohmann::json::array();
    for (auto i : ps.gallery) g.push_back(s.records[i].person_id);
    probes.push_back({{"probe", s.records[ps.probe].person_id}, {"gallery", g}});
  }
  nlohmann::json autos = nlohmann::json::array();
  for (const auto& a : sel.auto_labeled)
    autos.push_back({s.records[a.probe].person_id, s.records[a.gallery].person_id, a.label});
  return {{"batch", sel.batch}, {"calibrator", sel.calibrator}, {"probes", probes},
          {"auto_labeled", autos}};
}

BatchSelection selection_from_json(const AdaptationSession& s, const nlohmann::json& j) {
  auto lookup = [](const std::map<std::string, std::size_t>& m, const std::string& id) {
    auto it = m.find(id);
    if (it == m.end()) throw SchemaError("selection names unknown person '" + id + "'");
    return it->second;
  };
  try {
    BatchSelection sel;
    sel.batch = j.at("batch").get<int>();
    if (sel.batch < 0 || static_cast<std::size_t>(sel.batch) >= s.parts.batches.size())
      throw SchemaError("selection for unknown batch " + std::to_string(sel.batch));
    sel.calibrator = j.at("calibrator").get<PlattCalibrator>();
    for (const auto& p : j.at("probes")) {
      ProbeSelection ps;
      ps.probe = lookup(s.probe_by_id, p.at("probe").get<std::string>());
      for (const auto& g : p.at("gallery")) ps.gallery.push_back(lookup(s.gallery_by_id, g.get<std::string>()));
      sel.probes.push_back(std::move(ps));
    }
    for (const auto& a : j.at("auto_labeled")) {
      const int label = a.at(2).get<int>();
      if (label != 1 && label != -1) throw SchemaError("auto label must be -1 or +1");
      sel.auto_labeled.push_back({lookup(s.probe_by_id, a.at(0).get<std::string>()),
                                  lookup(s.gallery_by_id, a.at(1).get<std::string>()), label,
                                  LabelSource::SimulatedNoisy});
    }
    return sel;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("selection: ") + e.what());
  }
}

nlohmann::json session_manifest(const AdaptationSession& s) {
  nlohmann::json batches = nlohmann::json::array();
  for (const auto& b : s.parts.batches) {
    nlohmann::json p = nlohmann::json::array(), g = nlohmann::json::array();
    for (auto i : b.probes) p.push_back(s.records[i].person_id);
    for (auto i : b.gallery) g.push_back(s.records[i].person_id);
    batches.push_back({{"probes", p}, {"gallery", g}});
  }
  return {{"format", "tma-session"},
          {"version", 1},
          {"config", s.config},
          {"probe_camera", s.probe_camera},
          {"gallery_camera", s.gallery_camera},
          {"n", s.n()},
          {"partition", {{"seed", s.config.partition_seed}, {"batches", batches}}},
          {"consumed", s.consumed}};
}

}  // namespace tma

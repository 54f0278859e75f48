#include "tma/session_store.hpp"

#include "tma/checkpoint.hpp"
#include "tma/label_log.hpp"

#include <algorithm>

namespace fs = std::filesystem;

namespace tma {

fs::path SessionFiles::checkpoint(int batches_consumed) const {
  return dir / "checkpoints" / ("model-" + std::to_string(batches_consumed) + ".tma");
}

fs::path SessionFiles::tasks(int batch) const {
  return dir / "tasks" / ("batch-" + std::to_string(batch) + ".json");
}

bool StoredSession::consumed(int batch) const {
  const auto& c = session.consumed;
  return std::find(c.begin(), c.end(), batch) != c.end();
}

namespace {

std::vector<FeatureRecord> training_records(const Dataset& ds) {
  SplitView tr = train_split(ds);
  std::vector<FeatureRecord> out = std::move(tr.probes);
  out.insert(out.end(), std::make_move_iterator(tr.gallery.begin()),
             std::make_move_iterator(tr.gallery.end()));
  return out;
}

void write_index(const SessionFiles& files, const StoredSession& st) {
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t k = 0; k < st.session.checkpoints.size(); ++k) {
    const auto& c = st.session.checkpoints[k];
    list.push_back({{"batches_consumed", c.batches_consumed},
                    {"batch", c.batch},
                    {"updated", c.updated},
                    {"labeled", c.labeled},
                    {"labeled_percent", c.labeled_percent},
                    {"training_pairs", c.training_pairs},
                    {"file", fs::relative(files.checkpoint(c.batches_consumed), files.dir).string()},
                    {"test", st.rows.at(k)}});
  }
  write_json_atomic(files.checkpoint_index(), {{"checkpoints", list}});
}

StoredSession open_session(const std::string& id, const fs::path& dataset_manifest,
                           const AdaptationConfig& cfg) {
  StoredSession st;
  st.id = id;
  st.dataset_manifest = fs::absolute(dataset_manifest).lexically_normal();
  st.dataset = load_dataset(st.dataset_manifest);
  st.test = test_split(st.dataset);
  st.session = make_session(training_records(st.dataset), st.dataset.manifest.probe_camera,
                            st.dataset.manifest.gallery_camera, cfg);
  return st;
}

void run_offline(const SessionFiles& files, StoredSession& st) {
  const std::size_t before = st.session.label_log.size();
  GroundTruthOracle gt;
  offline_phase(st.session, gt);
  append_labels(files, st, before);
  save_latest_checkpoint(files, st);
}

}  // namespace

StoredSession create_stored_session(const SessionFiles& files, const std::string& id,
                                    const fs::path& dataset_manifest,
                                    const AdaptationConfig& cfg) {
  if (fs::exists(files.manifest()))
    throw Conflict("a session already exists in " + files.dir.string());
  StoredSession st = open_session(id, dataset_manifest, cfg);
  fs::create_directories(files.dir);
  // A stale log from an aborted creation must not leak into this session.
  fs::remove(files.labels());
  save_session_manifest(files, st);
  run_offline(files, st);
  return st;
}

StoredSession load_stored_session(const SessionFiles& files) {
  const nlohmann::json m = read_json_file(files.manifest());
  if (m.value("format", "") != "tma-session" || m.value("version", 0) != 1)
    throw SchemaError(files.manifest().string() + " is not a version 1 session manifest");
  StoredSession st;
  try {
    st = open_session(m.at("session_id").get<std::string>(),
                      m.at("dataset_manifest").get<std::string>(),
                      m.at("config").get<AdaptationConfig>());
    if (session_manifest(st.session).at("partition") != m.at("partition"))
      throw SchemaError("dataset or partition seed changed since the session was created");
    st.pending_updates = m.value("pending_updates", std::vector<int>{});
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(files.manifest().string() + ": " + e.what());
  }

  restore_labels(st.session, read_label_log(files.labels()));

  if (fs::exists(files.checkpoint_index())) {
    const nlohmann::json idx = read_json_file(files.checkpoint_index());
    try {
      for (const auto& e : idx.at("checkpoints")) {
        CheckpointEntry c;
        c.batches_consumed = e.at("batches_consumed").get<int>();
        c.batch = e.at("batch").get<int>();
        c.updated = e.at("updated").get<bool>();
        c.labeled = e.at("labeled").get<std::size_t>();
        c.labeled_percent = e.at("labeled_percent").get<double>();
        c.training_pairs = e.at("training_pairs").get<std::size_t>();
        c.state = load_checkpoint(files.dir / e.at("file").get<std::string>()).state;
        st.session.consumed.push_back(c.batch);
        st.session.checkpoints.push_back(std::move(c));
        st.rows.push_back(e.at("test").get<ReportRow>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(files.checkpoint_index().string() + ": " + e.what());
    }
  }
  if (st.session.checkpoints.empty()) {
    run_offline(files, st);
  } else {
    st.session.model = st.session.checkpoints.back().state;
  }

  const int nb = static_cast<int>(st.session.parts.batches.size());
  for (int b = 0; b < nb; ++b) {
    if (!fs::exists(files.tasks(b))) continue;
    const nlohmann::json t = read_json_file(files.tasks(b));
    st.selections.emplace(b, selection_from_json(st.session, t.at("selection")));
    st.skipped[b] = t.value("skipped", std::set<std::string>{});
  }
  std::erase_if(st.pending_updates, [&](int b) { return st.consumed(b); });
  return st;
}

void append_labels(const SessionFiles& files, const StoredSession& st, std::size_t from) {
  for (std::size_t i = from; i < st.session.label_log.size(); ++i)
    append_label(files.labels(), st.session.label_log[i]);
}

void save_selection(const SessionFiles& files, const StoredSession& st, int batch) {
  auto it = st.selections.find(batch);
  if (it == st.selections.end()) throw NotFound("no selection for batch " + std::to_string(batch));
  nlohmann::json skipped = nlohmann::json::array();
  if (auto s = st.skipped.find(batch); s != st.skipped.end())
    for (const auto& t : s->second) skipped.push_back(t);
  write_json_atomic(files.tasks(batch),
                    {{"selection", selection_to_json(st.session, it->second)}, {"skipped", skipped}});
}

void save_session_manifest(const SessionFiles& files, const StoredSession& st) {
  nlohmann::json m = session_manifest(st.session);
  m["session_id"] = st.id;
  m["dataset"] = st.dataset.manifest.name;
  m["dataset_manifest"] = st.dataset_manifest.string();
  m["pending_updates"] = st.pending_updates;
  write_json_atomic(files.manifest(), m);
}

ReportRow evaluate_on_test(const StoredSession& st, const CheckpointEntry& c) {
  ReportRow row;
  if (!st.test.probes.empty() && !st.test.gallery.empty())
    row = evaluate(c.state, st.test.probes, st.test.gallery);
  row.batches_consumed = c.batches_consumed;
  row.labeled = c.labeled;
  row.labeled_percent = c.labeled_percent;
  return row;
}

void save_latest_checkpoint(const SessionFiles& files, StoredSession& st) {
  const auto& ck = st.session.checkpoints;
  if (ck.empty()) throw InvalidArgument("session has no checkpoint");
  while (st.rows.size() < ck.size()) st.rows.push_back(evaluate_on_test(st, ck[st.rows.size()]));
  const CheckpointEntry& c = ck.back();
  save_checkpoint(files.checkpoint(c.batches_consumed), c.state, st.session.config.trainer);
  write_index(files, st);
  std::erase_if(st.pending_updates, [&](int b) { return st.consumed(b); });
  save_session_manifest(files, st);
}

EvalReport stored_report(const StoredSession& st) {
  return {st.dataset.manifest.name, st.rows};
}

}  // namespace tma

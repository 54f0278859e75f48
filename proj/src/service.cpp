#include "tma/service.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdio>
#include <iostream>
#include <random>
#include <regex>
#include <thread>

namespace fs = std::filesystem;

namespace tma {

std::string to_string(TaskState s) {
  switch (s) {
    case TaskState::Pending: return "pending";
    case TaskState::Labeled: return "labeled";
    case TaskState::Skipped: return "skipped";
  }
  return "pending";
}

void to_json(nlohmann::json& j, const AnnotationTask& t) {
  j = {{"task_id", t.task_id},
       {"batch", t.batch},
       {"probe_id", t.probe_id},
       {"gallery_id", t.gallery_id},
       {"state", to_string(t.state)},
       {"label", t.label ? nlohmann::json(*t.label) : nlohmann::json(nullptr)},
       {"probe_image_path", t.probe_image_path ? nlohmann::json(*t.probe_image_path) : nullptr},
       {"gallery_image_path",
        t.gallery_image_path ? nlohmann::json(*t.gallery_image_path) : nullptr}};
  if (t.probe_image_path) j["probe_image_url"] = "/images/" + *t.probe_image_path;
  if (t.gallery_image_path) j["gallery_image_url"] = "/images/" + *t.gallery_image_path;
}

struct AnnotationService::Session {
  SessionFiles files;
  StoredSession st;

  std::mutex mu;
  std::condition_variable cv;
  bool updating = false;
  int updating_batch = -1;
  bool stop = false;
  std::string last_error;
  std::shared_ptr<const nlohmann::json> snapshot;
  std::thread worker;

  using Pair = std::pair<std::size_t, std::size_t>;

  std::vector<Pair> pairs(int batch) const {
    std::vector<Pair> out;
    for (const auto& ps : st.selections.at(batch).probes)
      for (auto g : ps.gallery) out.emplace_back(ps.probe, g);
    return out;
  }

  AnnotationTask task(int batch, std::size_t k, const Pair& pg) const {
    const auto& s = st.session;
    const FeatureRecord& p = s.records[pg.first];
    const FeatureRecord& g = s.records[pg.second];
    AnnotationTask t;
    t.task_id = "b" + std::to_string(batch) + "-" + std::to_string(k);
    t.batch = batch;
    t.probe_id = p.person_id;
    t.gallery_id = g.person_id;
    t.probe_image_path = p.image_path;
    t.gallery_image_path = g.image_path;
    if (auto l = s.stored_label(p.person_id, g.person_id)) {
      t.state = TaskState::Labeled;
      t.label = *l;
    } else if (st.consumed(batch) || is_skipped(batch, t.task_id)) {
      t.state = TaskState::Skipped;
    }
    return t;
  }

  bool is_skipped(int batch, const std::string& id) const {
    auto it = st.skipped.find(batch);
    return it != st.skipped.end() && it->second.count(id);
  }

  std::vector<AnnotationTask> tasks(int batch) const {
    std::vector<AnnotationTask> out;
    const auto ps = pairs(batch);
    for (std::size_t k = 0; k < ps.size(); ++k) out.push_back(task(batch, k, ps[k]));
    return out;
  }

  std::size_t pending(int batch) const {
    std::size_t n = 0;
    for (const auto& t : tasks(batch)) n += t.state == TaskState::Pending;
    return n;
  }

  bool queued(int batch) const {
    const auto& q = st.pending_updates;
    return std::find(q.begin(), q.end(), batch) != q.end();
  }

  void enqueue(int batch) {
    if (queued(batch) || st.consumed(batch)) return;
    st.pending_updates.push_back(batch);
    save_session_manifest(files, st);
    cv.notify_all();
  }

  // Caller holds mu.
  void publish() {
    const auto& s = st.session;
    nlohmann::json open = nlohmann::json::array();
    for (const auto& [b, sel] : st.selections) {
      if (st.consumed(b)) continue;
      std::size_t n = 0, pend = 0, lab = 0, skip = 0;
      for (const auto& t : tasks(b)) {
        ++n;
        pend += t.state == TaskState::Pending;
        lab += t.state == TaskState::Labeled;
        skip += t.state == TaskState::Skipped;
      }
      open.push_back({{"batch", b}, {"tasks", n}, {"pending", pend}, {"labeled", lab}, {"skipped", skip}});
    }
    std::vector<int> queue;
    for (int b : st.pending_updates)
      if (b != updating_batch) queue.push_back(b);

    nlohmann::json cks = nlohmann::json::array();
    for (std::size_t k = 0; k < s.checkpoints.size(); ++k) {
      const auto& c = s.checkpoints[k];
      const ReportRow& r = st.rows.at(k);
      cks.push_back({{"batches_consumed", c.batches_consumed},
                     {"batch", c.batch},
                     {"updated", c.updated},
                     {"labeled", c.labeled},
                     {"labeled_percent", c.labeled_percent},
                     {"training_pairs", c.training_pairs},
                     {"file", fs::relative(files.checkpoint(c.batches_consumed), files.dir).string()},
                     {"rank1", r.rank(1)},
                     {"rank5", r.rank(5)},
                     {"rank10", r.rank(10)},
                     {"map", r.map}});
    }
    nlohmann::json latest = nullptr;
    if (!st.rows.empty()) {
      const ReportRow& r = st.rows.back();
      latest = {{"batches_consumed", r.batches_consumed}, {"labeled_percent", r.labeled_percent},
                {"cmc", r.cmc}, {"map", r.map}};
    }
    const auto human = std::count_if(s.label_log.begin(), s.label_log.end(), [](const LabelEntry& e) {
      return e.source == LabelSource::Human;
    });
    nlohmann::json doc = {
        {"session_id", st.id},
        {"dataset", st.dataset.manifest.name},
        {"mode", to_string(s.config.mode)},
        {"phase", updating ? "updating" : "ready"},
        {"n", s.n()},
        {"labeled", s.label_log.size()},
        {"human_labeled", human},
        {"effort_percent", s.effort_percent()},
        {"batches",
         {{"total", s.parts.batches.size()},
          {"consumed", s.consumed},
          {"queued", queue},
          {"updating", updating ? nlohmann::json(updating_batch) : nlohmann::json(nullptr)},
          {"open", open}}},
        {"latest", latest},
        {"checkpoints", cks},
        {"last_error", last_error.empty() ? nlohmann::json(nullptr) : nlohmann::json(last_error)}};
    std::atomic_store(&snapshot, std::make_shared<const nlohmann::json>(std::move(doc)));
  }

  void run() {
    std::unique_lock lk(mu);
    while (true) {
      cv.wait(lk, [&] { return stop || !st.pending_updates.empty(); });
      if (stop) return;
      const int b = st.pending_updates.front();
      updating = true;
      updating_batch = b;
      publish();

      AdaptationSession work = st.session;
      const BatchSelection sel = st.selections.at(b);
      lk.unlock();
      std::string err;
      std::optional<ReportRow> row;
      try {
        update_batch(work, sel);
        row = evaluate_on_test(st, work.checkpoints.back());
      } catch (const std::exception& e) {
        err = e.what();
      }
      lk.lock();
      try {
        if (err.empty()) {
          st.session.model = std::move(work.model);
          st.session.consumed = std::move(work.consumed);
          st.session.checkpoints = std::move(work.checkpoints);
          st.rows.push_back(std::move(*row));
          save_latest_checkpoint(files, st);
          last_error.clear();
        }
      } catch (const std::exception& e) {
        err = e.what();
      }
      if (!err.empty()) {
        // Dropped from the queue so one bad batch cannot wedge the worker.
        last_error = "update of batch " + std::to_string(b) + " failed: " + err;
        std::erase(st.pending_updates, b);
        std::cerr << "session " << st.id << ": " << last_error << '\n';
      }
      updating = false;
      updating_batch = -1;
      publish();
      cv.notify_all();
    }
  }
};

namespace {

std::pair<int, std::size_t> parse_task_id(const std::string& id) {
  static const std::regex re("b([0-9]{1,9})-([0-9]{1,18})");
  std::smatch m;
  if (!std::regex_match(id, m, re)) throw NotFound("no task '" + id + "'");
  return {std::stoi(m[1]), static_cast<std::size_t>(std::stoull(m[2]))};
}

std::string new_session_id(const fs::path& root) {
  std::random_device rd;
  for (;;) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s-%08x", static_cast<unsigned>(rd()));
    if (!fs::exists(root / buf)) return buf;
  }
}

// Messages from the config validators start with the field path.
std::string leading_field(const std::string& msg) {
  const auto sp = msg.find(' ');
  return msg.substr(0, sp);
}

}  // namespace

AnnotationService::AnnotationService(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (!entry.is_directory()) continue;
    SessionFiles files{entry.path()};
    if (!fs::exists(files.manifest())) continue;
    try {
      auto sess = start(load_stored_session(files), files);
      sessions_.emplace(sess->st.id, sess);
    } catch (const std::exception& e) {
      std::cerr << "skipping session in " << entry.path() << ": " << e.what() << '\n';
    }
  }
}

AnnotationService::~AnnotationService() {
  for (auto& [id, s] : sessions_) {
    {
      std::lock_guard lk(s->mu);
      s->stop = true;
    }
    s->cv.notify_all();
  }
  for (auto& [id, s] : sessions_)
    if (s->worker.joinable()) s->worker.join();
}

std::shared_ptr<AnnotationService::Session> AnnotationService::start(StoredSession st,
                                                                     SessionFiles files) {
  auto s = std::make_shared<Session>();
  s->files = std::move(files);
  s->st = std::move(st);
  {
    std::lock_guard lk(s->mu);
    s->publish();
  }
  s->worker = std::thread([raw = s.get()] { raw->run(); });
  return s;
}

std::shared_ptr<AnnotationService::Session> AnnotationService::find(const std::string& id) const {
  std::lock_guard lk(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("no session '" + id + "'");
  return it->second;
}

std::vector<std::string> AnnotationService::sessions() const {
  std::lock_guard lk(mu_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

std::string AnnotationService::create_session(const nlohmann::json& request) {
  if (!request.is_object()) throw BadRequest("request must be a JSON object", {{"", "not an object"}});
  std::vector<FieldError> errors;
  std::string manifest;
  if (!request.contains("manifest") || !request["manifest"].is_string() ||
      request["manifest"].get<std::string>().empty())
    errors.push_back({"manifest", "required: path of the dataset manifest"});
  else
    manifest = request["manifest"].get<std::string>();

  AdaptationConfig cfg;
  if (request.contains("config")) {
    try {
      if (!request["config"].is_object()) throw InvalidArgument("config must be an object");
      cfg = request["config"].get<AdaptationConfig>();
      cfg.validate();
    } catch (const nlohmann::json::exception& e) {
      errors.push_back({"config", e.what()});
    } catch (const InvalidArgument& e) {
      errors.push_back({"config." + leading_field(e.what()), e.what()});
    }
  }

  std::string id;
  if (request.contains("session_id")) {
    static const std::regex re("[A-Za-z0-9_-]{1,64}");
    if (!request["session_id"].is_string() ||
        !std::regex_match(id = request["session_id"].get<std::string>(), re))
      errors.push_back({"session_id", "must match [A-Za-z0-9_-]{1,64}"});
  }
  if (!errors.empty()) throw BadRequest("invalid session request", errors);

  std::lock_guard create(create_mu_);
  if (id.empty()) id = new_session_id(root_);
  {
    std::lock_guard lk(mu_);
    if (sessions_.count(id)) return id;
  }
  SessionFiles files{root_ / id};
  std::shared_ptr<Session> sess;
  if (fs::exists(files.manifest())) {
    sess = start(load_stored_session(files), files);
  } else {
    const bool existed = fs::exists(files.dir);
    try {
      sess = start(create_stored_session(files, id, manifest, cfg), files);
    } catch (const std::exception& e) {
      if (!existed) fs::remove_all(files.dir);
      if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const SchemaError*>(&e) ||
          dynamic_cast<const NotFound*>(&e))
        throw BadRequest(e.what(), {{"manifest", e.what()}});
      if (dynamic_cast<const InvalidArgument*>(&e)) throw BadRequest(e.what(), {{"config", e.what()}});
      throw;
    }
  }
  std::lock_guard lk(mu_);
  sessions_.emplace(id, sess);
  return id;
}

std::vector<AnnotationTask> AnnotationService::next_tasks(const std::string& id, int batch) {
  auto s = find(id);
  std::lock_guard lk(s->mu);
  auto& st = s->st;
  if (batch < 0 || static_cast<std::size_t>(batch) >= st.session.parts.batches.size())
    throw NotFound("session '" + id + "' has no batch " + std::to_string(batch));
  if (st.consumed(batch) || s->queued(batch)) return {};
  if (!st.selections.count(batch)) {
    if (s->updating || !st.pending_updates.empty())
      throw ServiceBusy("session '" + id + "' is updating; batch " + std::to_string(batch) +
                        " is selected with the updated model");
    st.selections.emplace(batch, select_batch(st.session, batch));
    save_selection(s->files, st, batch);
    if (s->pending(batch) == 0) s->enqueue(batch);
    s->publish();
  }
  std::vector<AnnotationTask> out;
  for (auto& t : s->tasks(batch))
    if (t.state == TaskState::Pending) out.push_back(std::move(t));
  return out;
}

std::vector<AnnotationTask> AnnotationService::batch_tasks(const std::string& id, int batch) {
  auto s = find(id);
  std::lock_guard lk(s->mu);
  if (!s->st.selections.count(batch))
    throw NotFound("batch " + std::to_string(batch) + " has not been selected");
  return s->tasks(batch);
}

AnnotationTask AnnotationService::submit_label(const std::string& id, const std::string& task_id,
                                               int label, LabelSource source) {
  if (label != 1 && label != -1) throw BadRequest("label must be -1 or +1", {{"label", "must be -1 or +1"}});
  auto s = find(id);
  const auto [batch, k] = parse_task_id(task_id);
  std::lock_guard lk(s->mu);
  auto& st = s->st;
  if (!st.selections.count(batch)) throw NotFound("no task '" + task_id + "'");
  const auto pairs = s->pairs(batch);
  if (k >= pairs.size()) throw NotFound("no task '" + task_id + "'");
  const AnnotationTask before = s->task(batch, k, pairs[k]);
  if (before.state != TaskState::Pending)
    throw Conflict("task '" + task_id + "' is already " + to_string(before.state));

  const std::size_t n = st.session.label_log.size();
  st.session.record_label(pairs[k].first, pairs[k].second, label, source, batch);
  try {
    append_labels(s->files, st, n);
  } catch (...) {
    const auto& e = st.session.label_log.back();
    st.session.label_index.erase({e.probe_id, e.gallery_id});
    st.session.label_log.pop_back();
    throw;
  }
  if (s->pending(batch) == 0) s->enqueue(batch);
  s->publish();
  return s->task(batch, k, pairs[k]);
}

AnnotationTask AnnotationService::skip_task(const std::string& id, const std::string& task_id) {
  auto s = find(id);
  const auto [batch, k] = parse_task_id(task_id);
  std::lock_guard lk(s->mu);
  auto& st = s->st;
  if (!st.selections.count(batch)) throw NotFound("no task '" + task_id + "'");
  const auto pairs = s->pairs(batch);
  if (k >= pairs.size()) throw NotFound("no task '" + task_id + "'");
  if (s->task(batch, k, pairs[k]).state != TaskState::Pending)
    throw Conflict("task '" + task_id + "' is not pending");
  st.skipped[batch].insert(task_id);
  save_selection(s->files, st, batch);
  if (s->pending(batch) == 0) s->enqueue(batch);
  s->publish();
  return s->task(batch, k, pairs[k]);
}

std::shared_ptr<const nlohmann::json> AnnotationService::status(const std::string& id) const {
  auto s = find(id);
  return std::atomic_load(&s->snapshot);
}

EvalReport AnnotationService::report(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lk(s->mu);
  return stored_report(s->st);
}

void AnnotationService::wait_idle(const std::string& id) {
  auto s = find(id);
  std::unique_lock lk(s->mu);
  s->cv.wait(lk, [&] { return !s->updating && s->st.pending_updates.empty(); });
}

}  // namespace tma

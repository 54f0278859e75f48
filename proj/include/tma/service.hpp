#pragma once

#include "tma/session_store.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <mutex>

namespace tma {

struct FieldError {
  std::string field;
  std::string message;
};

/// A request the service rejects as malformed; `fields` names the culprits.
struct BadRequest : InvalidArgument {
  BadRequest(const std::string& what, std::vector<FieldError> f)
      : InvalidArgument(what), fields(std::move(f)) {}
  std::vector<FieldError> fields;
};

/// The session is busy with an update; retry after polling status.
struct ServiceBusy : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TaskState { Pending, Labeled, Skipped };

std::string to_string(TaskState s);

struct AnnotationTask {
  std::string task_id;  // "b<batch>-<k>", k = position in the batch selection
  int batch = 0;
  std::string probe_id;
  std::string gallery_id;
  std::optional<std::string> probe_image_path;
  std::optional<std::string> gallery_image_path;
  TaskState state = TaskState::Pending;
  std::optional<int> label;
};

/// Adds probe_image_url / gallery_image_url ("/images/<path>") when a path exists.
void to_json(nlohmann::json& j, const AnnotationTask& t);

/// Sessions live in `root/<session id>/` (see session_store.hpp). Existing
/// sessions under `root` are resumed on construction.
///
/// Mutation is serialized per session. Updates run on one worker thread per
/// session, so at most one update per session executes at a time; labels for
/// other open batches are accepted meanwhile. status() returns an immutable
/// snapshot and never blocks on the session lock.
class AnnotationService {
 public:
  explicit AnnotationService(std::filesystem::path root);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  /// {"manifest": dataset manifest path, "config": AdaptationConfig (optional),
  ///  "session_id": optional}. Trains the off-line model before returning.
  /// An existing session id is resumed instead. Throws BadRequest.
  std::string create_session(const nlohmann::json& request);

  std::vector<std::string> sessions() const;

  /// Pending tasks of `batch`. The first call selects the batch's pairs with
  /// the current model and stores the selection; later calls return the same
  /// tasks until they are labeled. Consumed batches have no pending tasks.
  /// Throws NotFound, or ServiceBusy when the batch would have to be selected
  /// while an update is queued or running.
  std::vector<AnnotationTask> next_tasks(const std::string& session, int batch);

  /// All tasks of a selected batch in any state.
  std::vector<AnnotationTask> batch_tasks(const std::string& session, int batch);

  /// Logs the label. When the batch has no pending task left, its update is
  /// queued. Throws NotFound, Conflict (task not pending, log unchanged) or
  /// BadRequest.
  AnnotationTask submit_label(const std::string& session, const std::string& task_id, int label,
                              LabelSource source = LabelSource::Human);

  /// Marks a pending task as skipped; it is not logged and not trained on.
  AnnotationTask skip_task(const std::string& session, const std::string& task_id);

  std::shared_ptr<const nlohmann::json> status(const std::string& session) const;
  EvalReport report(const std::string& session) const;

  /// Blocks until no update is queued or running.
  void wait_idle(const std::string& session);

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id) const;
  std::shared_ptr<Session> start(StoredSession st, SessionFiles files);

  std::filesystem::path root_;
  mutable std::mutex mu_;  // guards sessions_
  std::mutex create_mu_;   // one session creation at a time
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace tma

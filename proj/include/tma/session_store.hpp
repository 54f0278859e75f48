#pragma once

// On-disk session layout shared by the annotation service and `tma adapt`:
//
//   <dir>/manifest.json           session manifest (config, partition, dataset path)
//   <dir>/labels.jsonl            label log, one entry per line, append-only
//   <dir>/checkpoints.json        one entry per checkpoint with its test-split row
//   <dir>/checkpoints/model-K.tma checkpoint after K consumed batches
//   <dir>/tasks/batch-B.json      the stored selection of batch B and skipped task ids
//
// Write order on an update is checkpoint file, then checkpoints.json, then
// manifest.json, so the index is the authority on which batches are consumed.

#include "tma/adaptation.hpp"
#include "tma/dataset.hpp"
#include "tma/eval.hpp"

#include <filesystem>
#include <set>

namespace tma {

struct SessionFiles {
  std::filesystem::path dir;

  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path labels() const { return dir / "labels.jsonl"; }
  std::filesystem::path checkpoint_index() const { return dir / "checkpoints.json"; }
  std::filesystem::path checkpoint(int batches_consumed) const;
  std::filesystem::path tasks(int batch) const;
};

struct StoredSession {
  std::string id;
  std::filesystem::path dataset_manifest;  // absolute
  Dataset dataset;
  SplitView test;
  AdaptationSession session;
  std::vector<ReportRow> rows;  // rows[k] = checkpoints[k] on the test split
  std::map<int, BatchSelection> selections;
  std::map<int, std::set<std::string>> skipped;  // batch -> task ids
  std::vector<int> pending_updates;              // batches waiting for their update

  bool consumed(int batch) const;
};

/// Loads the dataset, builds the session, runs the off-line phase on batch 0
/// with ground-truth labels and writes every file. The directory must not
/// hold a session already.
StoredSession create_stored_session(const SessionFiles& files, const std::string& id,
                                    const std::filesystem::path& dataset_manifest,
                                    const AdaptationConfig& cfg);

/// Rebuilds a session from its directory: labels from the log, models from
/// the checkpoint files, open selections from the task files. An off-line
/// phase that never finished is rerun.
StoredSession load_stored_session(const SessionFiles& files);

/// Appends log entries [from, end) to labels.jsonl.
void append_labels(const SessionFiles& files, const StoredSession& st, std::size_t from);

void save_selection(const SessionFiles& files, const StoredSession& st, int batch);
void save_session_manifest(const SessionFiles& files, const StoredSession& st);

/// Evaluates the newest checkpoint, stores its row and writes the checkpoint
/// file, the index and the manifest.
void save_latest_checkpoint(const SessionFiles& files, StoredSession& st);

ReportRow evaluate_on_test(const StoredSession& st, const CheckpointEntry& c);
EvalReport stored_report(const StoredSession& st);

}  // namespace tma

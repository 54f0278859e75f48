#pragma once

#include "tma/label_log.hpp"
#include "tma/platt.hpp"
#include "tma/selection.hpp"
#include "tma/trainer.hpp"

#include <map>
#include <memory>

namespace tma {

/// How a batch's pairs are chosen for labeling.
enum class SelectionMode {
  RelevantSet,     // dominant-set probe relevant pairs, human labeled
  Unsupervised,    // Platt probability >= 0.5 -> +1, else -1; no human queries
  SemiSupervised,  // per probe: top k ranked -> +1, bottom k -> -1, rest human labeled
  Supervised,      // every pair human labeled
};

std::string to_string(SelectionMode m);
SelectionMode selection_mode_from_string(const std::string& s);

struct AdaptationConfig {
  TrainerConfig trainer;     // off-line phase: S epochs, T iterations (0 -> 2z)
  int update_epochs = 150;   // S^
  int update_iters = 0;      // T^, 0 -> 2z with z the batch's pair count
  int num_batches = 4;
  std::uint64_t partition_seed = 1;
  SelectionConfig selection;
  SelectionMode mode = SelectionMode::RelevantSet;
  int semi_k = 20;
  // Train each update on every label so far instead of the new batch only.
  bool cumulative_replay = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const AdaptationConfig& c);
void from_json(const nlohmann::json& j, AdaptationConfig& c);

/// Indices into the session's record table.
struct Batch {
  std::vector<std::size_t> probes;
  std::vector<std::size_t> gallery;

  std::size_t pairs() const { return probes.size() * gallery.size(); }
};

/// Identities are shuffled once and dealt into contiguous groups; a person's
/// probe and gallery images land in the same batch.
struct BatchPartition {
  std::vector<Batch> batches;
};

BatchPartition partition(std::span<const FeatureRecord> records, int probe_camera,
                         int gallery_camera, int num_batches, std::uint64_t seed);

struct OracleAnswer {
  int label = 0;
  LabelSource source = LabelSource::Human;
};

/// Answers one probe-gallery query. An empty result means the oracle failed
/// on that pair; the pair is skipped.
class LabelOracle {
 public:
  virtual ~LabelOracle() = default;
  virtual std::optional<OracleAnswer> label(const FeatureRecord& probe,
                                            const FeatureRecord& gallery) = 0;
};

class GroundTruthOracle : public LabelOracle {
 public:
  std::optional<OracleAnswer> label(const FeatureRecord& probe,
                                    const FeatureRecord& gallery) override;
};

/// Ground truth flipped with probability C. The flip for a pair depends only
/// on the seed and the two person ids, not on query order.
class SimulatedOracle : public LabelOracle {
 public:
  /// C must lie in [0, 1); `allow_certain_flip` also admits C = 1 for tests.
  SimulatedOracle(double error_rate, std::uint64_t seed, bool allow_certain_flip = false);
  std::optional<OracleAnswer> label(const FeatureRecord& probe,
                                    const FeatureRecord& gallery) override;

 private:
  double c_;
  std::uint64_t seed_;
};

/// Answers from a label log, keeping each entry's source; unknown pairs fail.
class LogOracle : public LabelOracle {
 public:
  explicit LogOracle(std::span<const LabelEntry> log);
  std::optional<OracleAnswer> label(const FeatureRecord& probe,
                                    const FeatureRecord& gallery) override;

 private:
  std::map<std::pair<std::string, std::string>, OracleAnswer> answers_;
};

/// Model after `batches_consumed` batches (1 = the off-line model).
struct CheckpointEntry {
  int batches_consumed = 0;
  int batch = 0;              // batch whose data produced this model
  bool updated = false;       // false when the batch produced no training pairs
  std::size_t labeled = 0;    // logged pairs of the consumed batches
  double labeled_percent = 0.0;
  std::size_t training_pairs = 0;
  ModelState state;
};

struct AdaptationSession {
  AdaptationConfig config;
  std::vector<FeatureRecord> records;  // training split, both cameras
  int probe_camera = 0;
  int gallery_camera = 1;
  BatchPartition parts;
  ModelState model;
  std::vector<LabelEntry> label_log;
  std::vector<CheckpointEntry> checkpoints;
  std::vector<int> consumed;  // batches in the order they were used

  /// n = |probes| x |gallery| of the whole training set.
  std::size_t n() const;
  std::size_t num_probes() const;
  std::size_t num_gallery() const;
  double effort_percent() const;

  std::map<std::string, std::size_t> probe_by_id;    // record index by person id
  std::map<std::string, std::size_t> gallery_by_id;
  // (probe id, gallery id) -> position in label_log
  std::map<std::pair<std::string, std::string>, std::size_t> label_index;

  std::optional<int> stored_label(const std::string& probe_id, const std::string& gallery_id) const;
  /// Appends to the log. Throws Conflict if the pair already has a label.
  const LabelEntry& record_label(std::size_t probe, std::size_t gallery, int label,
                                 LabelSource source, int batch);
};

/// Builds the partition; the model is empty until offline_phase().
/// Person ids must be unique within each camera of the training records.
AdaptationSession make_session(std::vector<FeatureRecord> records, int probe_camera,
                               int gallery_camera, const AdaptationConfig& cfg);

/// Labels every pair of batch 0 with `oracle`, trains from scratch and
/// stores checkpoint 1.
void offline_phase(AdaptationSession& s, LabelOracle& oracle);

/// Platt fit on every logged label scored with the current model, or the
/// default calibrator when that is unavailable.
PlattCalibrator refit_calibrator(const AdaptationSession& s);

struct ProbeSelection {
  std::size_t probe = 0;
  std::vector<std::size_t> gallery;  // pairs that need a human label (or reuse a stored one)
  ProbeRelevantSet relevant;         // RelevantSet mode only
};

struct BatchSelection {
  int batch = 0;
  PlattCalibrator calibrator;
  std::vector<ProbeSelection> probes;
  std::vector<LabeledPair> auto_labeled;  // baseline modes: machine labels, not logged

  std::size_t queries() const;
};

/// Steps 1-3 for one batch with the current model: score, extract relevant
/// sets, form the pair list. Parallel over probes.
BatchSelection select_batch(const AdaptationSession& s, int batch);

/// Step 4: warm-restart update on the batch's labeled pairs, then checkpoint.
/// Pairs without a stored label count as skipped.
const CheckpointEntry& update_batch(AdaptationSession& s, const BatchSelection& sel);

/// Select, query the oracle for pairs not yet labeled, update; per batch.
void run_adaptation(AdaptationSession& s, LabelOracle& oracle, std::span<const int> batches);

/// Rebuilds a session from its configuration, partition seed and label log:
/// the off-line phase and each consumed batch are rerun with labels taken
/// from the log. Sources are carried over from the log.
AdaptationSession replay(std::vector<FeatureRecord> records, int probe_camera, int gallery_camera,
                         const AdaptationConfig& cfg, std::span<const LabelEntry> log,
                         std::span<const int> consumed);

/// Replaces the session's log. Throws SchemaError for unknown persons or
/// batches and for a pair labeled twice.
void restore_labels(AdaptationSession& s, std::vector<LabelEntry> log);

/// A selection by person ids, so it can be stored and reloaded exactly.
nlohmann::json selection_to_json(const AdaptationSession& s, const BatchSelection& sel);
BatchSelection selection_from_json(const AdaptationSession& s, const nlohmann::json& j);

/// The session manifest: everything except labels and models needed to
/// rebuild the session exactly.
nlohmann::json session_manifest(const AdaptationSession& s);

}  // namespace tma

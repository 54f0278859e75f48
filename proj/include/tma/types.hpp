#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tma {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Error taxonomy. Everything derives from std::runtime_error or
// std::invalid_argument so callers can catch broadly.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct CalibrationUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateGraph : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct Conflict : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One person image: identity, camera and its precomputed descriptor.
struct FeatureRecord {
  std::string person_id;
  int camera_id = 0;
  Vec feature;
  std::optional<std::string> image_path;
};

enum class LabelSource { GroundTruth, Human, SimulatedNoisy };

std::string to_string(LabelSource s);
LabelSource label_source_from_string(const std::string& s);

/// A labeled probe-gallery pair. `probe` and `gallery` index into the record
/// table the pair is used with.
struct LabeledPair {
  std::size_t probe = 0;
  std::size_t gallery = 0;
  int label = 0;  // -1 or +1
  LabelSource source = LabelSource::GroundTruth;
};

/// Pairs together with the record table they index into.
struct PairView {
  std::span<const FeatureRecord> records;
  std::span<const LabeledPair> pairs;
};

/// Projection matrices K, P plus the ADMM auxiliaries U, V and multipliers
/// Lambda, Psi. All six are rank x dim.
struct ModelState {
  Mat K, P, U, V, Lambda, Psi;

  ModelState() = default;
  ModelState(Eigen::Index rank, Eigen::Index dim);

  Eigen::Index rank() const { return K.rows(); }
  Eigen::Index dim() const { return K.cols(); }

  /// Throws InvalidArgument when shapes disagree or an entry is not finite.
  void validate() const;

  bool operator==(const ModelState& o) const;
};

/// Checks a pair's label and camera invariants against its record table.
void validate_pair(const PairView& view, const LabeledPair& pair);

/// Throws InvalidArgument unless every record has dimension `dim` and finite entries.
void validate_records(std::span<const FeatureRecord> records, Eigen::Index dim);

}  // namespace tma

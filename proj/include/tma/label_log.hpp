#pragma once

#include "tma/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>

namespace tma {

/// One line of the label log:
///   {"probe_id":..,"gallery_id":..,"label":1|-1,"source":"human"|"ground-truth"|"simulated-noisy",
///    "timestamp":"2024-01-01T00:00:00.000Z","batch":b}
/// `batch` is the 0-based batch whose selection produced the pair.
struct LabelEntry {
  std::string probe_id;
  std::string gallery_id;
  int label = 0;
  LabelSource source = LabelSource::Human;
  std::string timestamp;
  int batch = 0;
};

void to_json(nlohmann::json& j, const LabelEntry& e);
void from_json(const nlohmann::json& j, LabelEntry& e);

/// UTC, millisecond resolution, ISO 8601 with a trailing Z.
std::string utc_timestamp();

/// Appends one line and flushes. The file is opened per call so concurrent
/// readers always see whole lines.
void append_label(const std::filesystem::path& path, const LabelEntry& e);

/// Reads every complete line. A final line without a newline is a torn write
/// from a crash and is ignored; any other malformed line is a ParseError
/// with its line number.
std::vector<LabelEntry> read_label_log(const std::filesystem::path& path);
std::vector<LabelEntry> read_label_log(std::istream& in);

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace tma

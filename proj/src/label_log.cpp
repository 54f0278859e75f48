#include "tma/label_log.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fs = std::filesystem;

namespace tma {

void to_json(nlohmann::json& j, const LabelEntry& e) {
  j = {{"probe_id", e.probe_id},   {"gallery_id", e.gallery_id},
       {"label", e.label},         {"source", to_string(e.source)},
       {"timestamp", e.timestamp}, {"batch", e.batch}};
}

void from_json(const nlohmann::json& j, LabelEntry& e) {
  e.probe_id = j.at("probe_id").get<std::string>();
  e.gallery_id = j.at("gallery_id").get<std::string>();
  e.label = j.at("label").get<int>();
  if (e.label != 1 && e.label != -1) throw SchemaError("label must be -1 or +1");
  e.source = label_source_from_string(j.at("source").get<std::string>());
  e.timestamp = j.value("timestamp", std::string{});
  e.batch = j.at("batch").get<int>();
}

std::string utc_timestamp() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms
    << 'Z';
  return s.str();
}

void append_label(const fs::path& path, const LabelEntry& e) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw ParseError("cannot append to " + path.string());
  out << nlohmann::json(e).dump() << '\n';
  out.flush();
  if (!out) throw ParseError("write failed for " + path.string());
}

std::vector<LabelEntry> read_label_log(std::istream& in) {
  std::vector<LabelEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const bool complete = !in.eof();
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<LabelEntry>());
    } catch (const std::exception& e) {
      if (!complete) break;
      throw ParseError("label log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<LabelEntry> read_label_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  return read_label_log(in);
}

void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ParseError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw ParseError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace tma

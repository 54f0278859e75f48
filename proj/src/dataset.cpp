#include "tma/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace fs = std::filesystem;

namespace tma {

static_assert(std::endian::native == std::endian::little,
              "binary feature and checkpoint I/O assumes a little-endian host");

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"name", m.name},
                     {"d", m.d},
                     {"feature_file", m.feature_file},
                     {"format", m.format == FeatureFormat::Csv ? "csv" : "binary"},
                     {"probe_camera", m.probe_camera},
                     {"gallery_camera", m.gallery_camera},
                     {"split", {{"train", m.train_ids}, {"test", m.test_ids}}}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  try {
    m.name = j.value("name", std::string{});
    m.d = j.at("d").get<Eigen::Index>();
    m.feature_file = j.at("feature_file").get<std::string>();
    const auto fmt = j.value("format", std::string{"csv"});
    if (fmt == "csv") {
      m.format = FeatureFormat::Csv;
    } else if (fmt == "binary") {
      m.format = FeatureFormat::Binary;
    } else {
      throw SchemaError("manifest: unknown feature format '" + fmt + "'");
    }
    m.probe_camera = j.value("probe_camera", 0);
    m.gallery_camera = j.value("gallery_camera", 1);
    m.train_ids.clear();
    m.test_ids.clear();
    if (j.contains("split")) {
      m.train_ids = j.at("split").value("train", std::vector<std::string>{});
      m.test_ids = j.at("split").value("test", std::vector<std::string>{});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line_no, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": cannot parse " + what + " '" + s +
                     "'");
  }
}

template <class T>
T read_pod(std::istream& in, const char* what, std::uint64_t& offset) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw SchemaError("binary features: truncated at offset " + std::to_string(offset) +
                             " while reading " + what);
  offset += sizeof(T);
  return v;
}

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

std::vector<FeatureRecord> read_features_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "camera" || header[2] != "path")
    throw ParseError("line 1: header must be id,camera,path,f0,...");
  const std::size_t d = header.size() - 3;
  for (std::size_t k = 0; k < d; ++k)
    if (header[3 + k] != "f" + std::to_string(k))
      throw ParseError("line 1: expected column f" + std::to_string(k));

  std::vector<FeatureRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " columns, got " +
                       std::to_string(cells.size()));
    FeatureRecord r;
    r.person_id = cells[0];
    if (r.person_id.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty id");
    const double cam = parse_double(cells[1], line_no, "camera");
    if (cam != std::floor(cam) || cam < 0 || cam > 255)
      throw ParseError("line " + std::to_string(line_no) + ": camera must be an integer 0..255");
    r.camera_id = static_cast<int>(cam);
    if (!cells[2].empty()) r.image_path = cells[2];
    r.feature.resize(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) {
      r.feature[static_cast<Eigen::Index>(k)] =
          parse_double(cells[3 + k], line_no, "feature f" + std::to_string(k));
    }
    if (!r.feature.allFinite())
      throw ParseError("line " + std::to_string(line_no) + ": non-finite feature");
    out.push_back(std::move(r));
  }
  return out;
}

void write_features_csv(const fs::path& path, std::span<const FeatureRecord> records) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  const Eigen::Index d = records.empty() ? 0 : records.front().feature.size();
  out << "id,camera,path";
  for (Eigen::Index k = 0; k < d; ++k) out << ",f" << k;
  out << '\n';
  out.precision(17);
  for (const auto& r : records) {
    out << r.person_id << ',' << r.camera_id << ',' << r.image_path.value_or("");
    for (Eigen::Index k = 0; k < r.feature.size(); ++k) out << ',' << r.feature[k];
    out << '\n';
  }
}

std::vector<FeatureRecord> read_features_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::uint64_t offset = 0;
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TMAF", 4) != 0)
    throw SchemaError("binary features: bad magic, expected TMAF");
  offset = 4;
  const auto version = read_pod<std::uint32_t>(in, "version", offset);
  if (version != 1) throw SchemaError("binary features: unsupported version " +
                                      std::to_string(version));
  const auto count = read_pod<std::uint32_t>(in, "count", offset);
  const auto dim = read_pod<std::uint32_t>(in, "dim", offset);
  std::vector<FeatureRecord> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureRecord r;
    const auto len = read_pod<std::uint16_t>(in, "id length", offset);
    r.person_id.resize(len);
    in.read(r.person_id.data(), len);
    if (!in) throw SchemaError("binary features: truncated id in record " + std::to_string(i));
    offset += len;
    r.camera_id = read_pod<std::uint8_t>(in, "camera", offset);
    r.feature.resize(dim);
    in.read(reinterpret_cast<char*>(r.feature.data()),
            static_cast<std::streamsize>(sizeof(double) * dim));
    if (!in) throw SchemaError("binary features: truncated feature vector in record " +
                               std::to_string(i));
    offset += sizeof(double) * dim;
    if (!r.feature.allFinite())
      throw SchemaError("binary features: non-finite value in record " + std::to_string(i));
    out.push_back(std::move(r));
  }
  return out;
}

void write_features_binary(const fs::path& path, std::span<const FeatureRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  const auto dim =
      static_cast<std::uint32_t>(records.empty() ? 0 : records.front().feature.size());
  out.write("TMAF", 4);
  write_pod<std::uint32_t>(out, 1);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  write_pod<std::uint32_t>(out, dim);
  for (const auto& r : records) {
    if (r.person_id.size() > 0xffff) throw InvalidArgument("person id too long");
    if (static_cast<std::uint32_t>(r.feature.size()) != dim)
      throw InvalidArgument("records must share one dimension");
    if (r.camera_id < 0 || r.camera_id > 255) throw InvalidArgument("camera id must fit in u8");
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(r.person_id.size()));
    out.write(r.person_id.data(), static_cast<std::streamsize>(r.person_id.size()));
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(r.camera_id));
    out.write(reinterpret_cast<const char*>(r.feature.data()),
              static_cast<std::streamsize>(sizeof(double) * dim));
  }
}

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ParseError("cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("manifest " + manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  ds.manifest = j.get<DatasetManifest>();
  fs::path feat = ds.manifest.feature_file;
  if (feat.is_relative()) feat = manifest_path.parent_path() / feat;
  ds.records = ds.manifest.format == FeatureFormat::Csv ? read_features_csv(feat)
                                                        : read_features_binary(feat);
  for (const auto& r : ds.records)
    if (r.feature.size() != ds.manifest.d)
      throw SchemaError("record '" + r.person_id + "' has dimension " +
                        std::to_string(r.feature.size()) + ", manifest says " +
                        std::to_string(ds.manifest.d));

  const std::unordered_set<std::string> train(ds.manifest.train_ids.begin(),
                                              ds.manifest.train_ids.end());
  const std::unordered_set<std::string> test(ds.manifest.test_ids.begin(),
                                             ds.manifest.test_ids.end());
  for (const auto& id : train)
    if (test.count(id)) throw SchemaError("identity '" + id + "' is in both splits");
  if (!train.empty() || !test.empty()) {
    for (const auto& r : ds.records)
      if (!train.count(r.person_id) && !test.count(r.person_id))
        throw SchemaError("identity '" + r.person_id + "' is in neither split");
  }
  return ds;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << nlohmann::json(m).dump(2) << '\n';
}

fs::path save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  const fs::path feat = dir / ds.manifest.feature_file;
  if (ds.manifest.format == FeatureFormat::Csv) {
    write_features_csv(feat, ds.records);
  } else {
    write_features_binary(feat, ds.records);
  }
  const fs::path manifest = dir / "manifest.json";
  save_manifest(manifest, ds.manifest);
  return manifest;
}

namespace {

SplitView split_by(const Dataset& ds, const std::vector<std::string>& ids, bool everything) {
  const std::set<std::string> keep(ids.begin(), ids.end());
  SplitView v;
  for (const auto& r : ds.records) {
    if (!everything && !keep.count(r.person_id)) continue;
    if (r.camera_id == ds.manifest.probe_camera) v.probes.push_back(r);
    else if (r.camera_id == ds.manifest.gallery_camera) v.gallery.push_back(r);
  }
  return v;
}

}  // namespace

SplitView train_split(const Dataset& ds) {
  const bool no_split = ds.manifest.train_ids.empty() && ds.manifest.test_ids.empty();
  return split_by(ds, ds.manifest.train_ids, no_split);
}

SplitView test_split(const Dataset& ds) { return split_by(ds, ds.manifest.test_ids, false); }

void l2_normalize(std::vector<FeatureRecord>& records, double target) {
  if (!(target > 0.0)) throw InvalidArgument("target norm must be > 0");
  for (auto& r : records) {
    const double n = r.feature.norm();
    if (n > 0.0) r.feature *= target / n;
  }
}

}  // namespace tma

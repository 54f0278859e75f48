#pragma once

#include "tma/types.hpp"

#include <json.hpp>

#include <filesystem>

namespace tma {

enum class FeatureFormat { Csv, Binary };

/// Dataset description. Feature rows live in `feature_file`; the manifest
/// carries the dimension, camera roles and the train/test identity split.
struct DatasetManifest {
  std::string name;
  Eigen::Index d = 0;
  std::string feature_file;  // relative paths resolve against the manifest directory
  FeatureFormat format = FeatureFormat::Csv;
  int probe_camera = 0;
  int gallery_camera = 1;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

struct Dataset {
  DatasetManifest manifest;
  std::vector<FeatureRecord> records;
};

/// Probe/gallery views of one split, by camera.
struct SplitView {
  std::vector<FeatureRecord> probes;
  std::vector<FeatureRecord> gallery;
};

// CSV: header `id,camera,path,f0,...,f{d-1}`, one record per line, empty path
// allowed.
std::vector<FeatureRecord> read_features_csv(const std::filesystem::path& path);
void write_features_csv(const std::filesystem::path& path,
                        std::span<const FeatureRecord> records);

// Binary, little-endian:
//   "TMAF" | u32 version = 1 | u32 count | u32 dim |
//   count x ( u16 id_len | id bytes (UTF-8) | u8 camera | f64[dim] )
std::vector<FeatureRecord> read_features_binary(const std::filesystem::path& path);
void write_features_binary(const std::filesystem::path& path,
                           std::span<const FeatureRecord> records);

/// Loads and validates manifest plus features. Throws ParseError for
/// malformed files and SchemaError for dimension or split violations.
Dataset load_dataset(const std::filesystem::path& manifest_path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);

/// Writes features and manifest side by side; returns the manifest path.
std::filesystem::path save_dataset(const std::filesystem::path& dir, const Dataset& ds);

SplitView train_split(const Dataset& ds);
SplitView test_split(const Dataset& ds);

/// Scales every feature vector to l2 norm `target` (zero vectors are left alone).
void l2_normalize(std::vector<FeatureRecord>& records, double target = 1.0);

}  // namespace tma

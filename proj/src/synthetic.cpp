#include "tma/synthetic.hpp"

#include <cmath>
#include <random>

namespace tma {

std::vector<FeatureRecord> make_synthetic(const SyntheticConfig& cfg, std::uint64_t camera_seed) {
  if (cfg.identities < 1 || cfg.dim < 1 || cfg.latent < 1)
    throw InvalidArgument("synthetic: sizes must be positive");
  const Eigen::Index d = cfg.dim, k = cfg.latent;
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Rendering maps are scaled so that ||A z|| ~ ||z|| on average.
  std::mt19937_64 cam_rng(camera_seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Mat base(d, k);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < k; ++j) base(i, j) = scale * gauss(cam_rng);
  Mat render[2];
  Vec offset[2];
  for (int c = 0; c < 2; ++c) {
    render[c] = base;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < k; ++j) render[c](i, j) += cfg.distortion * scale * gauss(cam_rng);
    offset[c].resize(d);
    for (Eigen::Index i = 0; i < d; ++i) offset[c][i] = cfg.camera_offset * scale * gauss(cam_rng);
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<Vec> latent(static_cast<std::size_t>(cfg.identities));
  for (auto& z : latent) {
    z.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) z[j] = gauss(rng);
  }
  const double noise = cfg.view_noise * std::sqrt(static_cast<double>(k)) * scale;
  std::vector<FeatureRecord> out;
  out.reserve(2 * latent.size());
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < cfg.identities; ++i) {
      FeatureRecord r;
      r.person_id = cfg.id_prefix + std::to_string(i);
      r.camera_id = c;
      r.feature = render[c] * latent[static_cast<std::size_t>(i)] + offset[c];
      for (Eigen::Index j = 0; j < d; ++j) r.feature[j] += noise * gauss(rng);
      out.push_back(std::move(r));
    }
  }
  if (cfg.normalize) l2_normalize(out, cfg.target_norm);
  return out;
}

Dataset make_synthetic_dataset(const SyntheticConfig& cfg, int train_identities,
                               int test_identities) {
  Dataset ds;
  ds.manifest.name = "synthetic";
  ds.manifest.d = cfg.dim;
  ds.manifest.feature_file = "features.csv";
  SyntheticConfig tr = cfg, te = cfg;
  tr.identities = train_identities;
  tr.id_prefix = cfg.id_prefix + "_tr";
  te.identities = test_identities;
  te.id_prefix = cfg.id_prefix + "_te";
  te.seed = cfg.seed * 6364136223846793005ULL + 1442695040888963407ULL;
  auto add = [&ds](std::vector<FeatureRecord> part, std::vector<std::string>& ids) {
    for (auto& r : part) {
      if (r.camera_id == 0) ids.push_back(r.person_id);
      ds.records.push_back(std::move(r));
    }
  };
  add(make_synthetic(tr), ds.manifest.train_ids);
  add(make_synthetic(te), ds.manifest.test_ids);
  return ds;
}

}  // namespace tma

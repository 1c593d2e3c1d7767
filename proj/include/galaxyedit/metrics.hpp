#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "galaxyedit/model_clients.hpp"

namespace galaxyedit {

/// Mean absolute and mean squared difference with pixels scaled to [0, 1].
struct PixelDistance {
  double l1 = 0.0, l2 = 0.0;
};
PixelDistance pixel_distance(const Image& a, const Image& b);

/// Cosine similarity; 0 when either vector is zero.
double embedding_similarity(const std::vector<double>& a, const std::vector<double>& b);

struct EmbeddingSet {
  Eigen::MatrixXd vectors;  // N x D
  std::string provider_id;

  static EmbeddingSet from_rows(const std::vector<std::vector<double>>& rows, std::string provider_id = "");
};

/// Single-pass (count, mean, M2) accumulator; merge() combines partial sums.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(int dim = 0);
  void add(const Eigen::VectorXd& x);
  void merge(const MomentAccumulator& other);
  long count() const { return n_; }
  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Unbiased covariance; needs at least 2 samples.
  Eigen::MatrixXd covariance() const;

 private:
  long n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
};

struct GaussianStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
};
GaussianStats gaussian_stats(const EmbeddingSet& s);

/// ||mu_x - mu_y||^2 + Tr(S_x + S_y - 2 (S_x S_y)^(1/2)). The trace of the
/// root comes from the eigenvalues of sqrt(S_x) S_y sqrt(S_x). Negative
/// eigenvalues within 1e-10 (relative to the spectrum) are clamped to 0,
/// larger ones raise NumericError.
double frechet_distance(const GaussianStats& x, const GaussianStats& y);
double frechet_distance(const EmbeddingSet& x, const EmbeddingSet& y);

/// Image/text embedders for the model-based metrics.
struct EmbeddingProviders {
  std::string clip_id = "mock-clip", dino_id = "mock-dino";
  ModelClients clip, dino;  // only the embedder kind is used

  static EmbeddingProviders mock(std::uint64_t seed = 0);
  /// {"clip": "mock" | client config, "dino": ..., "seed": n}
  static EmbeddingProviders from_json(const nlohmann::json& j);
  static EmbeddingProviders from_file(const std::filesystem::path& path);
  std::string provider_id() const { return "clip=" + clip_id + ";dino=" + dino_id; }
};

struct SampleMetrics {
  std::string sample_id, task;
  double l1 = 0, l2 = 0, clip_t = 0, clip_i = 0, dino = 0;
};

struct MetricReport {
  std::string provider_id;
  int n_samples = 0;
  std::optional<double> l1, l2, clip_t, clip_i, dino, fid;
  std::vector<std::string> missing;
  std::vector<std::string> notes;
  std::vector<SampleMetrics> samples;

  nlohmann::json to_json() const;
  /// One row per sample.
  std::string to_csv() const;
};

/// Predictions are `<pred_dir>/<sample_id>.png`. Targets are resized to the
/// prediction size when they differ. `task` restricts to add or remove.
MetricReport evaluate_manifest(const std::filesystem::path& manifest, const std::filesystem::path& pred_dir,
                               const EmbeddingProviders& providers, const std::string& task = "");

}  // namespace galaxyedit

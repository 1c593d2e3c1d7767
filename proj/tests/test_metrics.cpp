#include <gtest/gtest.h>

#include <random>

#include "galaxyedit/metrics.hpp"
#include "galaxyedit/pipeline.hpp"
#include "galaxyedit/synth.hpp"
#include "test_util.hpp"

using namespace galaxyedit;

namespace {

EmbeddingSet random_set(int n, int d, std::mt19937_64& rng, double shift = 0.0, double scale = 1.0) {
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = shift + scale * g(rng) + 0.3 * j * g(rng);
  return {m, "test"};
}

}  // namespace

TEST(Fid, IdenticalSetsGiveZero) {
  std::mt19937_64 rng(1);
  const auto s = random_set(200, 8, rng);
  EXPECT_LT(std::abs(frechet_distance(s, s)), 1e-6);
}

TEST(Fid, OneDimensionalClosedForm) {
  // Var x = 1, var y = 4, equal means: 1 + 4 - 2 * 2 = 1.
  GaussianStats x{Eigen::VectorXd::Constant(1, 0.7), Eigen::MatrixXd::Constant(1, 1, 1.0)};
  GaussianStats y{Eigen::VectorXd::Constant(1, 0.7), Eigen::MatrixXd::Constant(1, 1, 4.0)};
  EXPECT_NEAR(frechet_distance(x, y), 1.0, 1e-9);
  y.mu(0) = 2.7;
  EXPECT_NEAR(frechet_distance(x, y), 5.0, 1e-9);
}

TEST(Fid, DiagonalClosedForm) {
  GaussianStats x{Eigen::VectorXd::Zero(3), Eigen::Vector3d(1, 4, 9).asDiagonal()};
  GaussianStats y{Eigen::VectorXd::Ones(3), Eigen::Vector3d(4, 1, 1).asDiagonal()};
  // sum (sx - sy)^2 over standard deviations plus |dmu|^2.
  EXPECT_NEAR(frechet_distance(x, y), 3.0 + 1.0 + 1.0 + 4.0, 1e-9);
}

TEST(Fid, IsSymmetric) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto a = random_set(100, 6, rng), b = random_set(120, 6, rng, 0.5, 1.7);
    EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-9);
    EXPECT_GT(frechet_distance(a, b), 0.0);
  }
}

TEST(Fid, RejectsMismatchedInput) {
  std::mt19937_64 rng(3);
  EXPECT_ANY_THROW(frechet_distance(random_set(10, 3, rng), random_set(10, 4, rng)));
  EXPECT_ANY_THROW(frechet_distance(random_set(1, 3, rng), random_set(10, 3, rng)));
}

TEST(Moments, MergeMatchesSinglePass) {
  std::mt19937_64 rng(4);
  const auto s = random_set(57, 5, rng, 2.0);
  MomentAccumulator all(5), left(5), right(5);
  for (int i = 0; i < 57; ++i) {
    const Eigen::VectorXd row = s.vectors.row(i).transpose();
    all.add(row);
    (i < 20 ? left : right).add(row);
  }
  left.merge(right);
  EXPECT_EQ(left.count(), 57);
  EXPECT_LT((left.mean() - all.mean()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((left.covariance() - all.covariance()).cwiseAbs().maxCoeff(), 1e-12);

  const Eigen::RowVectorXd mu = s.vectors.colwise().mean();
  const Eigen::MatrixXd c = s.vectors.rowwise() - mu;
  const Eigen::MatrixXd cov = c.transpose() * c / 56.0;
  EXPECT_LT((all.covariance() - cov).cwiseAbs().maxCoeff(), 1e-10);
  MomentAccumulator empty(5);
  all.merge(empty);
  EXPECT_EQ(all.count(), 57);
}

TEST(Pixel, DistanceUnits) {
  Image a(2, 1, 3, 0), b(2, 1, 3, 0);
  for (int c = 0; c < 3; ++c) b.at(0, 0, c) = 255;
  const auto d = pixel_distance(a, b);
  EXPECT_DOUBLE_EQ(d.l1, 0.5);
  EXPECT_DOUBLE_EQ(d.l2, 0.5);
  EXPECT_EQ(pixel_distance(a, a).l1, 0.0);
  EXPECT_ANY_THROW(pixel_distance(a, Image(3, 1, 3)));
}

TEST(Similarity, Cosine) {
  EXPECT_DOUBLE_EQ(embedding_similarity({1, 0}, {1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(embedding_similarity({1, 0}, {0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(embedding_similarity({0, 0}, {1, 1}), 0.0);
}

TEST(Evaluate, PerfectEditorScoresZeroDistance) {
  testutil::TempDir d;
  synth_corpus(3, 61, d / "raw");
  run_pipeline(d / "raw", d / "out", FilterPolicy::defaults(), ModelClients::all_mock(1), 4);
  const auto samples = read_manifest(d / "out/manifest.jsonl");
  ASSERT_GT(samples.size(), 1u);
  std::filesystem::create_directories(d / "pred");
  for (const auto& s : samples)
    std::filesystem::copy_file(d / "out" / s.target_path, d / "pred" / (s.sample_id + ".png"));
  const auto r = evaluate_manifest(d / "out/manifest.jsonl", d / "pred", EmbeddingProviders::mock());
  EXPECT_EQ(r.n_samples, static_cast<int>(samples.size()));
  ASSERT_TRUE(r.l1 && r.l2);
  EXPECT_EQ(*r.l1, 0.0);
  EXPECT_EQ(*r.l2, 0.0);
  if (r.fid) EXPECT_LT(std::abs(*r.fid), 1e-6);
  EXPECT_NEAR(*r.clip_i, 1.0, 1e-9);
  const auto j = r.to_json();
  EXPECT_EQ(j.at("provider_id"), EmbeddingProviders::mock().provider_id());
  EXPECT_NE(r.to_csv().find(samples[0].sample_id), std::string::npos);

  const auto rm = evaluate_manifest(d / "out/manifest.jsonl", d / "pred", EmbeddingProviders::mock(), "remove");
  EXPECT_EQ(rm.n_samples * 2, r.n_samples);
}

TEST(Evaluate, MissingPredictionsAreReported) {
  testutil::TempDir d;
  synth_corpus(2, 62, d / "raw");
  run_pipeline(d / "raw", d / "out", FilterPolicy::defaults(), ModelClients::all_mock(1), 4);
  std::filesystem::create_directories(d / "pred");
  const auto samples = read_manifest(d / "out/manifest.jsonl");
  ASSERT_GT(samples.size(), 1u);
  std::filesystem::copy_file(d / "out" / samples[0].target_path, d / "pred" / (samples[0].sample_id + ".png"));
  const auto r = evaluate_manifest(d / "out/manifest.jsonl", d / "pred", EmbeddingProviders::mock());
  EXPECT_EQ(r.n_samples, 1);
  EXPECT_EQ(r.missing.size(), samples.size() - 1);
}

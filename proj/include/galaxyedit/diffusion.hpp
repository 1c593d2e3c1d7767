#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "galaxyedit/adapter.hpp"

namespace galaxyedit {

struct NoiseSchedule {
  int steps = 0;  // T
  std::vector<double> betas;
  std::vector<double> alphas_bar;

  /// Linear betas from beta_start to beta_end inclusive.
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  /// Linear schedule with the usual 1e-4..0.02 range rescaled to T steps.
  static NoiseSchedule make_default(int steps = 200);

  void validate() const;
};

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, with one t per sample.
template <typename T>
Tensor<T> add_noise(const Tensor<T>& z0, const Tensor<T>& eps, const std::vector<int>& t, const NoiseSchedule& sched);

/// Bag-of-hashed-tokens text embedding: the mean of the table rows selected
/// by each token's hash bucket.
class TextEmbedder {
 public:
  static constexpr int kDefaultVocab = 4096;
  static constexpr int kDefaultDim = 64;

  explicit TextEmbedder(int vocab = kDefaultVocab, int dim = kDefaultDim, std::uint64_t seed = 0x7e47);

  int dim() const { return dim_; }
  int vocab() const { return vocab_; }
  std::size_t bucket(std::string_view token) const;

  /// Zero vector (with a warning) when the text has no tokens.
  std::vector<float> embed(const std::string& instruction) const;

  /// [B, D, 1, 1] batch of embeddings.
  template <typename T>
  Tensor<T> embed_batch(const std::vector<std::string>& texts) const;

 private:
  int vocab_, dim_;
  std::vector<float> table_;  // [vocab x dim]
};

/// Lowercased alphanumeric tokens.
std::vector<std::string> tokenize(std::string_view text);

template <typename T>
struct TrainBatch {
  Tensor<T> z0;         // target images in [-1, 1]
  Tensor<T> control;    // conditioning images in [-1, 1]
  Tensor<T> text_cond;  // [B, D, 1, 1]
  std::vector<int> t;
  Tensor<T> eps;

  void validate(const NoiseSchedule& sched) const;
};

/// Mean over the batch of ||eps - pred||^2. Writes d(loss)/d(pred) if asked.
template <typename T>
double diffusion_loss(const Tensor<T>& eps, const Tensor<T>& pred, Tensor<T>* d_pred = nullptr);

/// One optimizer step on the adapter; base parameters never change.
template <typename T>
double training_step(AdapterAssembly<T>& asm_, const TrainBatch<T>& batch, const NoiseSchedule& sched,
                     Adam<T>& optimizer);

/// One optimizer step on an unconditioned base model (pretraining).
template <typename T>
double pretrain_step(BaseUNet<T>& base, const TrainBatch<T>& batch, const NoiseSchedule& sched, Adam<T>& optimizer);

/// Deterministic DDIM (eta = 0) sampling with `steps` evenly spaced
/// timesteps. Output is clamped to [-1, 1].
template <typename T>
Tensor<T> sample(const AdapterAssembly<T>& asm_, const Tensor<T>& control, const Tensor<T>& text_cond,
                 const NoiseSchedule& sched, int steps, std::uint64_t seed);

/// Same sampler driven by the frozen base alone.
template <typename T>
Tensor<T> sample_base(const BaseUNet<T>& base, const Tensor<T>& text_cond, int height, int width,
                      const NoiseSchedule& sched, int steps, std::uint64_t seed);

/// Standard-normal tensor from a seeded generator.
template <typename T>
Tensor<T> gaussian(Shape s, std::mt19937_64& rng);

}  // namespace galaxyedit

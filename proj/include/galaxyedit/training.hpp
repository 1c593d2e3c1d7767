#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "galaxyedit/diffusion.hpp"
#include "galaxyedit/synth.hpp"

namespace galaxyedit {

enum class Conditioning { image, canny };
std::string to_string(Conditioning c);
Conditioning parse_conditioning(const std::string& s);

struct TrainConfig {
  std::string schedule = "linear";
  int schedule_steps = 200;  // T
  int steps = 2000;
  double lr = 1e-3;
  std::string lr_schedule = "constant";  // or "cosine", decaying to 0 over each phase
  FusionMode mode = FusionMode::volterra;
  int q = kDefaultVolterraRank;
  std::uint64_t seed = 0;
  int batch_size = 4;
  Conditioning conditioning = Conditioning::image;
  int pretrain_steps = 1500;
  int sample_steps = 50;
  int image_size = 32;
  int bridge_kernel = 1;
  double factor_init_scale = 0.1;
  double clamped_lr_scale = 1.0;
  // Data: a pipeline manifest, or the synthetic micro-dataset when empty.
  std::string manifest;
  int dataset_pairs = 500;
  int holdout = 50;
  std::uint64_t data_seed = 42;
  int log_every = 100;

  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
  NoiseSchedule make_schedule() const;
  double lr_at(int step, int total) const;
};

/// Pairs from a manifest, resized to size x size; the text is each sample's
/// first instruction. Relative paths resolve against the manifest directory.
EditPairSet load_manifest_pairs(const std::filesystem::path& manifest, int size);
/// Training data for `cfg`: the manifest pairs or the synthetic set.
EditPairSet load_training_data(const TrainConfig& cfg);

/// Replaces the control images with canny maps of the targets, thresholds
/// drawn per image.
EditPairSet with_canny_control(const EditPairSet& data, std::uint64_t seed);

Tensor<float> gather(const Tensor<float>& t, const std::vector<int>& idx);

/// Random minibatch from samples [0, n_train).
TrainBatch<float> make_batch(const EditPairSet& data, const Tensor<float>& text, int n_train, int batch_size,
                             const NoiseSchedule& sched, std::mt19937_64& rng);

using LossLog = std::function<void(int step, double loss)>;

/// Trains a base model on the targets alone (text conditioned).
BaseUNet<float> pretrain_base(const EditPairSet& data, int n_train, const TrainConfig& cfg, const LossLog& log = {});

/// Trains an adapter around a frozen copy of `base`.
AdapterAssembly<float> train_adapter(const BaseUNet<float>& base, const EditPairSet& data, int n_train,
                                     const TrainConfig& cfg, const LossLog& log = {});

/// Mean squared difference in [0, 1] pixel units between [-1, 1] tensors.
double mean_l2_01(const Tensor<float>& a, const Tensor<float>& b);

/// Binary checkpoint: magic, JSON header (kind, unet and adapter config,
/// array names and sizes, fusion weights, base hash), then raw float32 data.
void save_checkpoint(const std::filesystem::path& path, AdapterAssembly<float>& a, const nlohmann::json& extra = {});
AdapterAssembly<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);
void save_base(const std::filesystem::path& path, BaseUNet<float>& base, const nlohmann::json& extra = {});
BaseUNet<float> load_base(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

nlohmann::json unet_config_to_json(const UNetConfig& c);
UNetConfig unet_config_from_json(const nlohmann::json& j);

}  // namespace galaxyedit

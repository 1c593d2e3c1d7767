#include "galaxyedit/training.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>

#include "galaxyedit/pipeline.hpp"
#include "galaxyedit/records.hpp"

namespace galaxyedit {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Conditioning c) { return c == Conditioning::image ? "image" : "canny"; }

Conditioning parse_conditioning(const std::string& s) {
  if (s == "image") return Conditioning::image;
  if (s == "canny") return Conditioning::canny;
  throw ConfigError("unknown conditioning '" + s + "' (expected image or canny)");
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    try {
      if (k == "schedule") c.schedule = v.get<std::string>();
      else if (k == "T") c.schedule_steps = v.get<int>();
      else if (k == "steps") c.steps = v.get<int>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "lr_schedule") c.lr_schedule = v.get<std::string>();
      else if (k == "mode") c.mode = parse_fusion_mode(v.get<std::string>());
      else if (k == "Q") c.q = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "conditioning") c.conditioning = parse_conditioning(v.get<std::string>());
      else if (k == "pretrain_steps") c.pretrain_steps = v.get<int>();
      else if (k == "sample_steps") c.sample_steps = v.get<int>();
      else if (k == "image_size") c.image_size = v.get<int>();
      else if (k == "bridge_kernel") c.bridge_kernel = v.get<int>();
      else if (k == "factor_init_scale") c.factor_init_scale = v.get<double>();
      else if (k == "clamped_lr_scale") c.clamped_lr_scale = v.get<double>();
      else if (k == "manifest") c.manifest = v.get<std::string>();
      else if (k == "dataset_pairs") c.dataset_pairs = v.get<int>();
      else if (k == "holdout") c.holdout = v.get<int>();
      else if (k == "data_seed") c.data_seed = v.get<std::uint64_t>();
      else if (k == "log_every") c.log_every = v.get<int>();
      else throw ConfigError("train config: unknown key '" + k + "'");
    } catch (const json::exception& e) {
      throw ConfigError("train config: bad value for '" + k + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open train config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("train config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

json TrainConfig::to_json() const {
  return {{"schedule", schedule},
          {"T", schedule_steps},
          {"steps", steps},
          {"lr", lr},
          {"lr_schedule", lr_schedule},
          {"mode", galaxyedit::to_string(mode)},
          {"Q", q},
          {"seed", seed},
          {"batch_size", batch_size},
          {"conditioning", galaxyedit::to_string(conditioning)},
          {"pretrain_steps", pretrain_steps},
          {"sample_steps", sample_steps},
          {"image_size", image_size},
          {"bridge_kernel", bridge_kernel},
          {"factor_init_scale", factor_init_scale},
          {"clamped_lr_scale", clamped_lr_scale},
          {"manifest", manifest},
          {"dataset_pairs", dataset_pairs},
          {"holdout", holdout},
          {"data_seed", data_seed},
          {"log_every", log_every}};
}

void TrainConfig::validate() const {
  if (schedule != "linear") throw ConfigError("train config: only the linear schedule is supported");
  if (schedule_steps <= 20) throw ConfigError("train config: T must be > 20");
  if (steps < 0 || pretrain_steps < 0) throw ConfigError("train config: step counts must be >= 0");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be positive");
  if (lr_schedule != "constant" && lr_schedule != "cosine")
    throw ConfigError("train config: lr_schedule must be constant or cosine");
  if (q < 1) throw ConfigError("train config: Q must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (sample_steps < 1 || sample_steps > schedule_steps) throw ConfigError("train config: sample_steps must lie in [1, T]");
  if (image_size < 8 || image_size % 4 != 0) throw ConfigError("train config: image_size must be a multiple of 4, >= 8");
  if (bridge_kernel < 1 || bridge_kernel % 2 == 0) throw ConfigError("train config: bridge_kernel must be odd");
  if (!(factor_init_scale >= 0)) throw ConfigError("train config: factor_init_scale must be >= 0");
  if (!(clamped_lr_scale > 0)) throw ConfigError("train config: clamped_lr_scale must be positive");
  if (manifest.empty() && (dataset_pairs < 2 || holdout < 1 || holdout >= dataset_pairs))
    throw ConfigError("train config: need 1 <= holdout < dataset_pairs");
  if (log_every < 1) throw ConfigError("train config: log_every must be >= 1");
}

NoiseSchedule TrainConfig::make_schedule() const { return NoiseSchedule::make_default(schedule_steps); }

double TrainConfig::lr_at(int step, int total) const {
  if (lr_schedule == "constant" || total <= 0) return lr;
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * step / total));
}

EditPairSet load_manifest_pairs(const fs::path& manifest, int size) {
  const auto samples = read_manifest(manifest);
  if (samples.empty()) throw ConfigError("manifest " + manifest.string() + " has no samples");
  const auto root = manifest.parent_path();
  std::vector<Image> src, tgt;
  EditPairSet out;
  for (const auto& s : samples) {
    if (s.instructions.empty()) throw ConfigError("manifest sample " + s.sample_id + " has no instructions");
    src.push_back(resize(read_png(root / s.source_path), size, size));
    tgt.push_back(resize(read_png(root / s.target_path), size, size));
    out.instructions.push_back(s.instructions[0].text);
    out.tasks.push_back(to_string(s.task));
  }
  out.source = images_to_tensor(src);
  out.target = images_to_tensor(tgt);
  return out;
}

EditPairSet load_training_data(const TrainConfig& cfg) {
  EditPairSet d = cfg.manifest.empty() ? make_edit_pairs(cfg.dataset_pairs, cfg.image_size, cfg.data_seed)
                                       : load_manifest_pairs(cfg.manifest, cfg.image_size);
  if (cfg.conditioning == Conditioning::canny) d = with_canny_control(d, cfg.data_seed);
  return d;
}

EditPairSet with_canny_control(const EditPairSet& data, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Image> ctrl;
  for (int i = 0; i < data.size(); ++i) {
    const auto [lo, hi] = random_canny_thresholds(rng);
    ctrl.push_back(canny_image(tensor_to_image(data.target, i), lo, hi));
  }
  EditPairSet out = data;
  out.source = images_to_tensor(ctrl);
  return out;
}

Tensor<float> gather(const Tensor<float>& t, const std::vector<int>& idx) {
  Tensor<float> o(static_cast<int>(idx.size()), t.c(), t.h(), t.w());
  const std::size_t per = static_cast<std::size_t>(t.c()) * t.h() * t.w();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= t.n()) throw ShapeError("gather: index out of range");
    std::copy_n(t.sample(idx[i]), per, o.sample(static_cast<int>(i)));
  }
  return o;
}

TrainBatch<float> make_batch(const EditPairSet& data, const Tensor<float>& text, int n_train, int batch_size,
                             const NoiseSchedule& sched, std::mt19937_64& rng) {
  if (n_train < 1 || n_train > data.size()) throw ShapeError("make_batch: bad training range");
  std::vector<int> idx;
  for (int i = 0; i < batch_size; ++i) idx.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(n_train)));
  TrainBatch<float> b;
  b.z0 = gather(data.target, idx);
  b.control = gather(data.source, idx);
  b.text_cond = gather(text, idx);
  for (int i = 0; i < batch_size; ++i) b.t.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(sched.steps)));
  b.eps = gaussian<float>(b.z0.shape(), rng);
  return b;
}

BaseUNet<float> pretrain_base(const EditPairSet& data, int n_train, const TrainConfig& cfg, const LossLog& log) {
  UNetConfig ucfg;
  BaseUNet<float> base(ucfg, cfg.data_seed + 1);
  const auto sched = cfg.make_schedule();
  const TextEmbedder te;
  const auto text = te.embed_batch<float>(data.instructions);
  Adam<float> opt(AdamConfig{.lr = cfg.lr});
  std::mt19937_64 rng(cfg.data_seed * 7 + 7);
  for (int i = 0; i < cfg.pretrain_steps; ++i) {
    opt.set_lr(cfg.lr_at(i, cfg.pretrain_steps));
    const double loss = pretrain_step(base, make_batch(data, text, n_train, cfg.batch_size, sched, rng), sched, opt);
    if (log) log(i, loss);
  }
  return base;
}

AdapterAssembly<float> train_adapter(const BaseUNet<float>& base, const EditPairSet& data, int n_train,
                                     const TrainConfig& cfg, const LossLog& log) {
  AdapterConfig ac;
  ac.mode = cfg.mode;
  ac.rank_q = cfg.q;
  ac.bridge_kernel = cfg.bridge_kernel;
  ac.factor_init_scale = cfg.factor_init_scale;
  ac.seed = cfg.seed * 2 + 11;
  auto a = AdapterAssembly<float>::build(base, ac);
  const auto sched = cfg.make_schedule();
  const TextEmbedder te;
  const auto text = te.embed_batch<float>(data.instructions);
  AdamConfig oc;
  oc.lr = cfg.lr;
  oc.clamped_lr_scale = cfg.clamped_lr_scale;
  Adam<float> opt(oc);
  std::mt19937_64 rng(cfg.seed * 2 + 13);
  for (int i = 0; i < cfg.steps; ++i) {
    opt.set_lr(cfg.lr_at(i, cfg.steps));
    const double loss = training_step(a, make_batch(data, text, n_train, cfg.batch_size, sched, rng), sched, opt);
    if (log) log(i, loss);
  }
  return a;
}

double mean_l2_01(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mean_l2_01: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (static_cast<double>(a[i]) - b[i]) / 2.0;
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

json unet_config_to_json(const UNetConfig& c) {
  return {{"image_channels", c.image_channels}, {"base_widths", c.base_widths}, {"control_widths", c.control_widths},
          {"time_dim", c.time_dim},             {"emb_dim", c.emb_dim},         {"text_dim", c.text_dim},
          {"control_stride", c.control_stride}};
}

UNetConfig unet_config_from_json(const json& j) {
  UNetConfig c;
  c.image_channels = j.at("image_channels").get<int>();
  c.base_widths = j.at("base_widths").get<std::array<int, kLevels>>();
  c.control_widths = j.at("control_widths").get<std::array<int, kLevels>>();
  c.time_dim = j.at("time_dim").get<int>();
  c.emb_dim = j.at("emb_dim").get<int>();
  c.text_dim = j.at("text_dim").get<int>();
  c.control_stride = j.at("control_stride").get<int>();
  return c;
}

namespace {

constexpr char kMagic[8] = {'G', 'X', 'E', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_archive(const fs::path& path, json header, const std::vector<ParamRef<float>>& arrays) {
  json list = json::array();
  for (const auto& p : arrays) list.push_back({{"name", p.name}, {"size", p.value.size()}});
  header["arrays"] = list;
  const std::string h = header.dump();
  std::string out(kMagic, sizeof kMagic);
  auto put = [&](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
  put(&kCheckpointVersion, sizeof kCheckpointVersion);
  const std::uint64_t hlen = h.size();
  put(&hlen, sizeof hlen);
  out += h;
  for (const auto& p : arrays) put(p.value.data(), p.value.size_bytes());
  write_file_atomic(path, out);
}

struct Archive {
  json header;
  std::map<std::string, std::vector<float>> arrays;
};

Archive read_archive(const fs::path& path) {
  const auto bytes = read_file(path);
  std::size_t off = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (off + n > bytes.size()) throw ConfigError("checkpoint " + path.string() + " is truncated");
    std::memcpy(dst, bytes.data() + off, n);
    off += n;
  };
  char magic[8];
  take(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw ConfigError(path.string() + " is not a checkpoint");
  std::uint32_t version = 0;
  take(&version, sizeof version);
  if (version != kCheckpointVersion) throw ConfigError("checkpoint version " + std::to_string(version) + " unsupported");
  std::uint64_t hlen = 0;
  take(&hlen, sizeof hlen);
  std::string h(hlen, '\0');
  take(h.data(), hlen);
  Archive a;
  a.header = json::parse(h);
  for (const auto& e : a.header.at("arrays")) {
    std::vector<float> v(e.at("size").get<std::size_t>());
    take(v.data(), v.size() * sizeof(float));
    a.arrays[e.at("name").get<std::string>()] = std::move(v);
  }
  if (off != bytes.size()) throw ConfigError("checkpoint " + path.string() + " has trailing bytes");
  return a;
}

void fill(const std::vector<ParamRef<float>>& refs, const Archive& a) {
  for (const auto& p : refs) {
    const auto it = a.arrays.find(p.name);
    if (it == a.arrays.end()) throw ConfigError("checkpoint lacks array " + p.name);
    if (it->second.size() != p.value.size())
      throw ShapeError("checkpoint array " + p.name + " has " + std::to_string(it->second.size()) + " values, expected " +
                       std::to_string(p.value.size()));
    std::copy(it->second.begin(), it->second.end(), p.value.begin());
  }
}

}  // namespace

void save_checkpoint(const fs::path& path, AdapterAssembly<float>& a, const json& extra) {
  json weights = json::array();
  for (const auto& f : a.fusion_blocks) weights.push_back(f.effective_weight());
  json header = {{"kind", "adapter"},
                 {"unet", unet_config_to_json(a.unet)},
                 {"adapter",
                  {{"mode", to_string(a.adapter.mode)},
                   {"rank_q", a.adapter.rank_q},
                   {"bridge_kernel", a.adapter.bridge_kernel},
                   {"factor_init_scale", a.adapter.factor_init_scale},
                   {"seed", a.adapter.seed}}},
                 {"fusion_weights", weights},
                 {"base_hash", base_parameter_hash(a.base)},
                 {"extra", extra}};
  auto arrays = a.base.parameters();
  for (auto& p : trainable_parameters(a)) arrays.push_back(p);
  write_archive(path, header, arrays);
}

AdapterAssembly<float> load_checkpoint(const fs::path& path, json* extra) {
  const Archive ar = read_archive(path);
  if (ar.header.at("kind") != "adapter") throw ConfigError(path.string() + " is not an adapter checkpoint");
  const UNetConfig ucfg = unet_config_from_json(ar.header.at("unet"));
  BaseUNet<float> base(ucfg, 0);
  fill(base.parameters(), ar);
  if (base_parameter_hash(base) != ar.header.at("base_hash").get<std::string>())
    throw ConfigError("checkpoint " + path.string() + ": base hash mismatch");
  const json& ad = ar.header.at("adapter");
  AdapterConfig ac;
  ac.mode = parse_fusion_mode(ad.at("mode").get<std::string>());
  ac.rank_q = ad.at("rank_q").get<int>();
  ac.bridge_kernel = ad.at("bridge_kernel").get<int>();
  ac.factor_init_scale = ad.at("factor_init_scale").get<double>();
  ac.seed = ad.at("seed").get<std::uint64_t>();
  auto a = AdapterAssembly<float>::build(std::move(base), ac);
  fill(trainable_parameters(a), ar);
  a.validate();
  if (extra) *extra = ar.header.value("extra", json::object());
  return a;
}

void save_base(const fs::path& path, BaseUNet<float>& base, const json& extra) {
  json header = {{"kind", "base"}, {"unet", unet_config_to_json(base.cfg)}, {"base_hash", base_parameter_hash(base)},
                 {"extra", extra}};
  write_archive(path, header, base.parameters());
}

BaseUNet<float> load_base(const fs::path& path, json* extra) {
  const Archive ar = read_archive(path);
  if (ar.header.at("kind") != "base") throw ConfigError(path.string() + " is not a base checkpoint");
  BaseUNet<float> base(unet_config_from_json(ar.header.at("unet")), 0);
  fill(base.parameters(), ar);
  if (base_parameter_hash(base) != ar.header.at("base_hash").get<std::string>())
    throw ConfigError("checkpoint " + path.string() + ": base hash mismatch");
  if (extra) *extra = ar.header.value("extra", json::object());
  return base;
}

}  // namespace galaxyedit

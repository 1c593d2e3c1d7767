#include "galaxyedit/run.hpp"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <fstream>

#include "galaxyedit/records.hpp"

namespace galaxyedit {

using nlohmann::json;
namespace fs = std::filesystem;

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += digits[md[i] >> 4];
    s += digits[md[i] & 15];
  }
  return s;
}

std::string hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto rel = fs::relative(e.path(), dir);
    if (std::any_of(rel.begin(), rel.end(), [](const fs::path& p) { return p.string().starts_with("."); })) continue;
    if (e.is_regular_file()) files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) {
    const auto b = read_file(dir / f);
    acc += f.generic_string() + '\0' + sha256_hex(std::string_view(reinterpret_cast<const char*>(b.data()), b.size())) + '\n';
  }
  return sha256_hex(acc);
}

json policy_to_json(const FilterPolicy& p) {
  return {{"min_area_fraction", p.min_area_fraction},
          {"max_area_fraction", p.max_area_fraction},
          {"keyword_blocklist", std::vector<std::string>(p.keyword_blocklist.begin(), p.keyword_blocklist.end())},
          {"clip_accept_threshold", p.clip_accept_threshold},
          {"dilation_kernel", p.dilation_kernel},
          {"detector_threshold", p.detector_threshold},
          {"max_local_std", p.max_local_std},
          {"max_edge_density", p.max_edge_density},
          {"quality_canny_low", p.quality_canny_low},
          {"quality_canny_high", p.quality_canny_high}};
}

namespace {

json scene_to_json(const SynthConfig& c) {
  return {{"width", c.width},
          {"height", c.height},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"group_probability", c.group_probability},
          {"tiny_probability", c.tiny_probability},
          {"huge_probability", c.huge_probability},
          {"low_score_probability", c.low_score_probability}};
}

template <typename F>
auto config_field(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError("run config: bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config: expected a JSON object");
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "seed") c.seed = config_field(k, [&] { return v.get<std::uint64_t>(); });
    else if (k == "synth") {
      for (auto s = v.begin(); s != v.end(); ++s) {
        if (s.key() == "n") c.synth_n = config_field(k, [&] { return s->get<int>(); });
        else if (s.key() == "seed") c.synth_seed = config_field(k, [&] { return s->get<std::uint64_t>(); });
        else if (s.key() == "scene") c.scene = config_field(k, [&] { return SynthConfig::from_json(*s); });
        else throw ConfigError("run config: unknown key 'synth." + s.key() + "'");
      }
    } else if (k == "policy") c.policy = FilterPolicy::from_json(v, base_dir);
    else if (k == "clients") {
      if (v.is_string() && v == "mock") c.clients = json::object();
      else if (v.is_object()) c.clients = v;
      else throw ConfigError("run config: 'clients' must be \"mock\" or an object");
    } else if (k == "clients_seed") c.clients_seed = config_field(k, [&] { return v.get<std::uint64_t>(); });
    else if (k == "instructions") {
      for (auto s = v.begin(); s != v.end(); ++s) {
        if (s.key() == "strategies") {
          const auto list = config_field(k, [&] { return s->get<std::vector<std::string>>(); });
          c.strategies = {list.begin(), list.end()};
        } else if (s.key() == "margin") c.margin = config_field(k, [&] { return s->get<double>(); });
        else throw ConfigError("run config: unknown key 'instructions." + s.key() + "'");
      }
    } else if (k == "train") c.train = TrainConfig::from_json(v);
    else if (k == "sample_seed") c.sample_seed = config_field(k, [&] { return v.get<std::uint64_t>(); });
    else if (k == "providers") c.providers = v;
    else throw ConfigError("run config: unknown key '" + k + "'");
  }
  if (c.synth_n < 1) throw ConfigError("run config: synth.n must be >= 1");
  c.scene.validate();
  c.policy.validate();
  for (const auto& s : c.strategies)
    if (s != "simple" && s != "attribute" && s != "spatial" && s != "multi")
      throw ConfigError("run config: unknown instruction strategy '" + s + "'");
  if (!c.train.manifest.empty()) throw ConfigError("run config: train.manifest is set by the run itself");
  EmbeddingProviders::from_json(c.providers);
  ModelClients::from_config(c.clients, c.clients_seed);
  return c;
}

RunConfig RunConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("run config " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"synth", {{"n", synth_n}, {"seed", synth_seed}, {"scene", scene_to_json(scene)}}},
          {"policy", policy_to_json(policy)},
          {"clients", clients},
          {"clients_seed", clients_seed},
          {"instructions", {{"strategies", std::vector<std::string>(strategies.begin(), strategies.end())}, {"margin", margin}}},
          {"train", train.to_json()},
          {"sample_seed", sample_seed},
          {"providers", providers}};
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

Image control_image(const Image& source, Conditioning c) {
  return c == Conditioning::canny ? canny_image(source, 100.0, 200.0) : source;
}

void predict_manifest(const AdapterAssembly<float>& a, const fs::path& manifest, const fs::path& out_dir,
                      const TrainConfig& cfg, std::uint64_t seed) {
  const auto samples = read_manifest(manifest);
  const auto root = manifest.parent_path();
  const auto sched = cfg.make_schedule();
  const TextEmbedder te;
  fs::create_directories(out_dir);
  constexpr std::size_t kChunk = 16;
  for (std::size_t lo = 0; lo < samples.size(); lo += kChunk) {
    const std::size_t hi = std::min(samples.size(), lo + kChunk);
    std::vector<Image> ctrl;
    std::vector<std::string> text;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& s = samples[i];
      const Image src = resize(read_png(root / s.source_path), cfg.image_size, cfg.image_size);
      ctrl.push_back(control_image(src, cfg.conditioning));
      text.push_back(s.instructions.empty() ? std::string() : s.instructions[0].text);
    }
    const auto out = sample(a, images_to_tensor(ctrl), te.embed_batch<float>(text), sched, cfg.sample_steps, seed + lo);
    for (std::size_t i = lo; i < hi; ++i)
      write_png(out_dir / (samples[i].sample_id + ".png"), tensor_to_image(out, static_cast<int>(i - lo)));
  }
}

json StageRecord::to_json() const {
  return {{"stage", name}, {"key", key}, {"output_hash", output_hash}, {"status", skipped ? "skipped" : "ran"},
          {"seconds", seconds}};
}

const StageRecord* E2EResult::stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return &s;
  return nullptr;
}

namespace {

void copy_tree(const fs::path& from, const fs::path& to) {
  fs::create_directories(to);
  fs::copy(from, to, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
}

class StageRunner {
 public:
  explicit StageRunner(fs::path run_dir) : run_dir_(std::move(run_dir)) { fs::create_directories(run_dir_ / "stages"); }

  fs::path dir(const std::string& name) const { return run_dir_ / "stages" / name; }

  template <typename F>
  StageRecord run(const std::string& name, const json& stage_cfg, const std::vector<std::string>& inputs, F&& body) {
    StageRecord rec;
    rec.name = name;
    json k = {{"stage", name}, {"version", kPipelineVersion}, {"config", stage_cfg}, {"inputs", inputs}};
    rec.key = sha256_hex(k.dump());
    const fs::path d = dir(name), stamp = d / ".stamp";
    if (fs::exists(stamp)) {
      try {
        const auto b = read_file(stamp);
        const json s = json::parse(b.begin(), b.end());
        if (s.at("key") == rec.key && s.at("output_hash") == hash_tree(d)) {
          rec.output_hash = s.at("output_hash").get<std::string>();
          rec.skipped = true;
        }
      } catch (const std::exception& e) {
        spdlog::warn("stage {}: unreadable stamp ({}), regenerating", name, e.what());
      }
    }
    if (!rec.skipped) {
      const auto t0 = std::chrono::steady_clock::now();
      fs::remove_all(d);
      fs::create_directories(d);
      try {
        body(d);
      } catch (const StageError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError(name, e.what());
      }
      rec.output_hash = hash_tree(d);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      write_file_atomic(stamp, json{{"key", rec.key}, {"output_hash", rec.output_hash}}.dump() + "\n");
    }
    spdlog::info("stage {}: {} ({:.1f}s)", name, rec.skipped ? "up to date" : "regenerated", rec.seconds);
    std::ofstream(run_dir_ / "run.log", std::ios::app) << rec.to_json().dump() << "\n";
    return rec;
  }

 private:
  fs::path run_dir_;
};

json quarantine_summary(const fs::path& pipeline_dir) {
  json by_stage = json::object();
  int n = 0;
  std::ifstream in(pipeline_dir / "quarantine.jsonl");
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    const std::string stage = j.is_object() ? j.value("stage", "unknown") : "unknown";
    by_stage[stage] = by_stage.value(stage, 0) + 1;
    ++n;
  }
  return {{"quarantined", n}, {"by_stage", by_stage}};
}

}  // namespace

E2EResult run_e2e(const RunConfig& cfg, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  const json resolved = cfg.to_json();
  write_file_atomic(run_dir / "config.json", resolved.dump(2) + "\n");
  write_file_atomic(run_dir / "run_info.json",
                    json{{"config_hash", cfg.hash()}, {"pipeline_version", kPipelineVersion},
                         {"stages", e2e_stage_names()}}
                            .dump(2) +
                        "\n");
  spdlog::info("e2e run in {} (config {})", run_dir.string(), cfg.hash());

  StageRunner runner(run_dir);
  E2EResult res;
  const auto clients = ModelClients::from_config(cfg.clients, cfg.clients_seed);

  auto synth = runner.run("synth", resolved["synth"], {}, [&](const fs::path& d) {
    synth_corpus(cfg.synth_n, cfg.synth_seed, d, cfg.scene);
  });
  res.stages.push_back(synth);

  json pcfg = {{"policy", resolved["policy"]}, {"clients", cfg.clients}, {"clients_seed", cfg.clients_seed},
               {"seed", cfg.seed}};
  auto pipe = runner.run("pipeline", pcfg, {synth.output_hash}, [&](const fs::path& d) {
    const auto st = run_pipeline(runner.dir("synth"), d, cfg.policy, clients, cfg.seed);
    write_file_atomic(d / "stats.json", st.to_json().dump(2) + "\n");
    if (st.samples == 0) throw StageError("pipeline", "no samples produced", quarantine_summary(d));
  });
  res.stages.push_back(pipe);

  json icfg = {{"instructions", resolved["instructions"]}, {"clients", cfg.clients},
               {"clients_seed", cfg.clients_seed}, {"seed", cfg.seed}};
  auto inst = runner.run("instructions", icfg, {pipe.output_hash}, [&](const fs::path& d) {
    for (const char* sub : {"images", "targets", "masks"}) copy_tree(runner.dir("pipeline") / sub, d / sub);
    fs::copy_file(runner.dir("pipeline") / "manifest.jsonl", d / "manifest.jsonl");
    InstructionGenConfig ic;
    ic.strategies = cfg.strategies;
    ic.margin = cfg.margin;
    ic.seed = cfg.seed;
    const auto st = generate_instructions(d / "manifest.jsonl", clients, ic);
    write_file_atomic(d / "stats.json", json{{"records", st.records}, {"added", st.added},
                                             {"spatial_skipped", st.spatial_skipped},
                                             {"label_fallbacks", st.label_fallbacks}}
                                            .dump(2) +
                                            "\n");
    const auto v = validate_manifest(d / "manifest.jsonl");
    if (!v.empty())
      throw StageError("instructions", std::to_string(v.size()) + " manifest violations, first: " + v.front(),
                       quarantine_summary(runner.dir("pipeline")));
  });
  res.stages.push_back(inst);
  res.manifest = runner.dir("instructions") / "manifest.jsonl";

  auto train = runner.run("train", resolved["train"], {inst.output_hash}, [&](const fs::path& d) {
    TrainConfig tc = cfg.train;
    const auto data = load_manifest_pairs(res.manifest, tc.image_size);
    const EditPairSet train_data = tc.conditioning == Conditioning::canny ? with_canny_control(data, tc.data_seed) : data;
    std::ofstream csv(d / "metrics.csv");
    csv << "phase,step,loss\n";
    auto logger = [&](const char* phase) {
      return [&csv, phase, &tc](int step, double loss) {
        csv << phase << ',' << step << ',' << loss << '\n';
        if ((step + 1) % tc.log_every == 0) spdlog::info("{} step {}: loss {:.5f}", phase, step + 1, loss);
      };
    };
    auto base = pretrain_base(train_data, train_data.size(), tc, logger("pretrain"));
    auto a = train_adapter(base, train_data, train_data.size(), tc, logger("adapter"));
    save_checkpoint(d / "adapter.ckpt", a, {{"train", tc.to_json()}});
  });
  res.stages.push_back(train);

  json scfg = {{"sample_seed", cfg.sample_seed}};
  auto samp = runner.run("sample", scfg, {inst.output_hash, train.output_hash}, [&](const fs::path& d) {
    json extra;
    const auto a = load_checkpoint(runner.dir("train") / "adapter.ckpt", &extra);
    predict_manifest(a, res.manifest, d, TrainConfig::from_json(extra.at("train")), cfg.sample_seed);
  });
  res.stages.push_back(samp);

  auto ev = runner.run("eval", {{"providers", cfg.providers}}, {inst.output_hash, samp.output_hash},
                       [&](const fs::path& d) {
                         const auto providers = EmbeddingProviders::from_json(cfg.providers);
                         const auto rep = evaluate_manifest(res.manifest, runner.dir("sample"), providers);
                         write_file_atomic(d / "report.json", rep.to_json().dump(2) + "\n");
                         write_file_atomic(d / "report.csv", rep.to_csv());
                       });
  res.stages.push_back(ev);

  res.violations = validate_manifest(res.manifest);
  const auto rb = read_file(runner.dir("eval") / "report.json");
  res.report = json::parse(rb.begin(), rb.end());
  return res;
}

}  // namespace galaxyedit

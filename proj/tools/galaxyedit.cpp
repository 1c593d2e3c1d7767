#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "galaxyedit/rating.hpp"
#include "galaxyedit/records.hpp"
#include "galaxyedit/run.hpp"

using namespace galaxyedit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

RatingHttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::set<std::string> split_csv(const std::string& s) {
  std::set<std::string> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, ',');)
    if (!part.empty()) out.insert(part);
  return out;
}

ModelClients load_clients(const std::string& path, std::uint64_t seed) {
  return path.empty() ? ModelClients::all_mock(seed) : ModelClients::from_file(path, seed);
}

void write_train_outputs(const TrainConfig& cfg, const fs::path& out, const std::string& base_path) {
  fs::create_directories(out);
  write_file_atomic(out / "config.json", cfg.to_json().dump(2) + "\n");
  spdlog::info("train config hash {}", sha256_hex(cfg.to_json().dump()));
  const auto data = load_training_data(cfg);
  const int n_train = cfg.manifest.empty() ? data.size() - cfg.holdout : data.size();
  std::ofstream csv(out / "metrics.csv");
  csv << "step,loss\n";
  BaseUNet<float> base = [&] {
    if (!base_path.empty()) return load_base(base_path);
    auto b = pretrain_base(data, n_train, cfg, [&](int step, double loss) {
      if ((step + 1) % cfg.log_every == 0) spdlog::info("pretrain step {}: loss {:.5f}", step + 1, loss);
    });
    save_base(out / "base.ckpt", b, {{"pretrain_steps", cfg.pretrain_steps}, {"data_seed", cfg.data_seed}});
    return b;
  }();
  auto a = train_adapter(base, data, n_train, cfg, [&](int step, double loss) {
    csv << step << ',' << loss << '\n';
    if ((step + 1) % cfg.log_every == 0) spdlog::info("step {}: loss {:.5f}", step + 1, loss);
  });
  save_checkpoint(out / "adapter.ckpt", a, {{"train", cfg.to_json()}});
  json summary = {{"fusion_weights", json::array()}};
  for (const auto& f : a.fusion_blocks) summary["fusion_weights"].push_back(f.effective_weight());
  if (cfg.manifest.empty()) {
    const auto held = data.subset(n_train, data.size());
    const TextEmbedder te;
    const auto pred = sample(a, held.source, te.embed_batch<float>(held.instructions), cfg.make_schedule(),
                             cfg.sample_steps, cfg.seed + 99);
    summary["heldout_l2"] = mean_l2_01(pred, held.target);
    spdlog::info("held-out L2 {:.5f}", summary["heldout_l2"].get<double>());
  }
  write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GalaxyEdit dataset pipeline, adapter training and evaluation"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene corpus with truth sidecars");
  int synth_n = 8;
  std::uint64_t synth_seed = 42;
  std::string synth_out, synth_cfg;
  synth->add_option("-n,--count", synth_n, "Number of images")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--scene-config", synth_cfg, "Scene generator JSON")->check(CLI::ExistingFile);

  // pipeline run
  auto* pipeline = app.add_subcommand("pipeline", "Dataset construction stages");
  pipeline->require_subcommand(1);
  auto* prun = pipeline->add_subcommand("run", "Detect, filter, inpaint and build add/remove pairs");
  std::string p_images, p_out, p_policy, p_clients;
  std::uint64_t p_seed = 0, p_client_seed = 1;
  prun->add_option("--images", p_images, "Input image directory")->required()->check(CLI::ExistingDirectory);
  prun->add_option("--out", p_out, "Output directory")->required();
  prun->add_option("--policy", p_policy, "Filter policy JSON")->check(CLI::ExistingFile);
  prun->add_option("--clients", p_clients, "Model clients JSON (default: all mocks)")->check(CLI::ExistingFile);
  prun->add_option("--seed", p_seed, "Seed");
  prun->add_option("--client-seed", p_client_seed, "Seed for mock clients");

  // instructions gen
  auto* instructions = app.add_subcommand("instructions", "Instruction generation");
  instructions->require_subcommand(1);
  auto* igen = instructions->add_subcommand("gen", "Append instructions to a manifest in place");
  std::string i_manifest, i_strategies = "simple,attribute,spatial,multi", i_depth = "mock", i_clients;
  std::uint64_t i_seed = 0, i_client_seed = 1;
  double i_margin = 0.3;
  igen->add_option("--manifest", i_manifest, "Manifest (rewritten atomically)")->required()->check(CLI::ExistingFile);
  igen->add_option("--strategies", i_strategies, "Comma-separated subset of simple,attribute,spatial,multi");
  igen->add_option("--depth-client", i_depth, "Depth client: mock, or a kind->config JSON file");
  igen->add_option("--clients", i_clients, "Model clients JSON for captions and labels")->check(CLI::ExistingFile);
  igen->add_option("--margin", i_margin, "Spatial predicate margin");
  igen->add_option("--seed", i_seed, "Seed");
  igen->add_option("--client-seed", i_client_seed, "Seed for mock clients");

  // train
  auto* train = app.add_subcommand("train", "Train an adapter (pretraining the base unless --base is given)");
  std::string t_config, t_out, t_base, t_manifest;
  std::optional<int> t_steps;
  std::optional<std::uint64_t> t_seed;
  std::optional<std::string> t_mode;
  train->add_option("--config", t_config, "Training config JSON")->check(CLI::ExistingFile);
  train->add_option("--out", t_out, "Output directory")->required();
  train->add_option("--base", t_base, "Pretrained base checkpoint")->check(CLI::ExistingFile);
  train->add_option("--manifest", t_manifest, "Train on a manifest instead of the synthetic set")->check(CLI::ExistingFile);
  train->add_option("--steps", t_steps, "Override adapter steps");
  train->add_option("--seed", t_seed, "Override seed");
  train->add_option("--mode", t_mode, "Override fusion mode (linear|volterra)");

  // sample
  auto* samp = app.add_subcommand("sample", "Run a trained adapter");
  std::string s_ckpt, s_manifest, s_out, s_image, s_instruction, s_output;
  std::uint64_t s_seed = 99;
  samp->add_option("--checkpoint", s_ckpt, "Adapter checkpoint")->required()->check(CLI::ExistingFile);
  samp->add_option("--manifest", s_manifest, "Predict every record into --out")->check(CLI::ExistingFile);
  samp->add_option("--out", s_out, "Prediction directory");
  samp->add_option("--image", s_image, "Single source image")->check(CLI::ExistingFile);
  samp->add_option("--instruction", s_instruction, "Instruction for --image");
  samp->add_option("--output", s_output, "Output PNG for --image");
  samp->add_option("--seed", s_seed, "Sampler seed");

  // eval run
  auto* eval = app.add_subcommand("eval", "Metric evaluation");
  eval->require_subcommand(1);
  auto* erun = eval->add_subcommand("run", "L1/L2/CLIP/DINO/FID over predictions");
  std::string e_manifest, e_pred, e_providers, e_out, e_task;
  erun->add_option("--manifest", e_manifest, "Manifest")->required()->check(CLI::ExistingFile);
  erun->add_option("--pred", e_pred, "Prediction directory")->required()->check(CLI::ExistingDirectory);
  erun->add_option("--providers", e_providers, "Embedding providers JSON (default: mocks)")->check(CLI::ExistingFile);
  erun->add_option("--out", e_out, "Directory for report.json and report.csv");
  erun->add_option("--task", e_task, "Restrict to add or remove")->check(CLI::IsMember({"add", "remove"}));

  // rating
  auto* rating = app.add_subcommand("rating", "Blind human rating service");
  rating->require_subcommand(1);
  auto* rserve = rating->add_subcommand("serve", "Serve the rating API (admin token from GALAXYEDIT_ADMIN_TOKEN)");
  std::string r_samples, r_data = "rating_data", r_host = "127.0.0.1";
  int r_port = 8080;
  rserve->add_option("--samples", r_samples, "Sample set JSON")->required()->check(CLI::ExistingFile);
  rserve->add_option("--port", r_port, "Port (0 picks one)");
  rserve->add_option("--host", r_host, "Bind address");
  rserve->add_option("--data", r_data, "Store directory");
  auto* rreport = rating->add_subcommand("report", "Aggregate ratings from a store");
  bool r_json = false;
  rreport->add_option("--samples", r_samples, "Sample set JSON")->required()->check(CLI::ExistingFile);
  rreport->add_option("--data", r_data, "Store directory")->check(CLI::ExistingDirectory);
  rreport->add_flag("--json", r_json, "JSON output");
  auto* rcompact = rating->add_subcommand("compact", "Rewrite the store logs as a snapshot");
  rcompact->add_option("--samples", r_samples, "Sample set JSON")->required()->check(CLI::ExistingFile);
  rcompact->add_option("--data", r_data, "Store directory")->check(CLI::ExistingDirectory);

  // e2e
  auto* e2e = app.add_subcommand("e2e", "synth -> pipeline -> instructions -> train -> sample -> eval");
  std::string x_config, x_run;
  e2e->add_option("--config", x_config, "Run config JSON")->required()->check(CLI::ExistingFile);
  e2e->add_option("--run-dir", x_run, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*synth) {
      SynthConfig sc;
      if (!synth_cfg.empty()) {
        const auto b = read_file(synth_cfg);
        sc = SynthConfig::from_json(json::parse(b.begin(), b.end()));
      }
      sc.validate();
      const auto paths = synth_corpus(synth_n, synth_seed, synth_out, sc);
      spdlog::info("wrote {} images to {}", paths.size(), synth_out);
    } else if (*prun) {
      const auto pol = p_policy.empty() ? FilterPolicy::defaults() : FilterPolicy::from_file(p_policy);
      const auto st = run_pipeline(p_images, p_out, pol, load_clients(p_clients, p_client_seed), p_seed);
      std::cout << st.to_json().dump(2) << "\n";
    } else if (*igen) {
      ModelClients clients = load_clients(i_clients, i_client_seed);
      if (i_depth != "mock") {
        const auto b = read_file(i_depth);
        const auto d = ModelClients::from_config(json::parse(b.begin(), b.end()), i_client_seed);
        clients.set(ClientKind::depth, std::shared_ptr<Transport>(&d.transport(ClientKind::depth), [d](Transport*) {}));
      }
      InstructionGenConfig ic;
      ic.strategies = split_csv(i_strategies);
      for (const auto& s : ic.strategies)
        if (s != "simple" && s != "attribute" && s != "spatial" && s != "multi")
          throw ConfigError("unknown strategy '" + s + "'");
      ic.margin = i_margin;
      ic.seed = i_seed;
      const auto st = generate_instructions(i_manifest, clients, ic);
      std::cout << json{{"records", st.records}, {"added", st.added}, {"spatial_skipped", st.spatial_skipped},
                        {"label_fallbacks", st.label_fallbacks}}
                       .dump(2)
                << "\n";
    } else if (*train) {
      TrainConfig cfg = t_config.empty() ? TrainConfig{} : TrainConfig::from_file(t_config);
      if (t_steps) cfg.steps = *t_steps;
      if (t_seed) cfg.seed = *t_seed;
      if (t_mode) cfg.mode = parse_fusion_mode(*t_mode);
      if (!t_manifest.empty()) cfg.manifest = t_manifest;
      cfg.validate();
      write_train_outputs(cfg, t_out, t_base);
    } else if (*samp) {
      json extra;
      const auto a = load_checkpoint(s_ckpt, &extra);
      const auto cfg = TrainConfig::from_json(extra.at("train"));
      if (!s_manifest.empty()) {
        if (s_out.empty()) throw ConfigError("--manifest needs --out");
        predict_manifest(a, s_manifest, s_out, cfg, s_seed);
      } else if (!s_image.empty()) {
        if (s_output.empty()) throw ConfigError("--image needs --output");
        const Image src = resize(read_png(s_image), cfg.image_size, cfg.image_size);
        const TextEmbedder te;
        const auto out = sample(a, images_to_tensor({control_image(src, cfg.conditioning)}),
                                te.embed_batch<float>({s_instruction}), cfg.make_schedule(), cfg.sample_steps, s_seed);
        write_png(s_output, tensor_to_image(out, 0));
      } else {
        throw ConfigError("sample needs --manifest or --image");
      }
    } else if (*erun) {
      const auto providers = e_providers.empty() ? EmbeddingProviders::mock() : EmbeddingProviders::from_file(e_providers);
      const auto rep = evaluate_manifest(e_manifest, e_pred, providers, e_task);
      if (!e_out.empty()) {
        fs::create_directories(e_out);
        write_file_atomic(fs::path(e_out) / "report.json", rep.to_json().dump(2) + "\n");
        write_file_atomic(fs::path(e_out) / "report.csv", rep.to_csv());
      }
      std::cout << rep.to_json().dump(2) << "\n";
    } else if (*rserve) {
      const char* token = std::getenv("GALAXYEDIT_ADMIN_TOKEN");
      if (!token) spdlog::warn("GALAXYEDIT_ADMIN_TOKEN unset; /report is disabled");
      RatingService service(SampleSet::from_file(r_samples), r_data);
      RatingHttpServer server(service, token ? token : "");
      const int port = server.bind(r_host, r_port);
      spdlog::info("rating service on http://{}:{}", r_host, port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.run();
      g_server = nullptr;
    } else if (*rreport) {
      RatingService service(SampleSet::from_file(r_samples), r_data);
      const auto rep = service.report();
      std::cout << (r_json ? rep.to_json().dump(2) + "\n" : rep.to_text());
    } else if (*rcompact) {
      RatingService service(SampleSet::from_file(r_samples), r_data);
      service.store().compact();
    } else if (*e2e) {
      const auto cfg = RunConfig::from_file(x_config);
      const auto res = run_e2e(cfg, x_run);
      json out = {{"manifest", res.manifest.string()}, {"violations", res.violations}, {"stages", json::array()}};
      for (const auto& s : res.stages) out["stages"].push_back(s.to_json());
      out["metrics"] = res.report.value("metrics", json::object());
      std::cout << out.dump(2) << "\n";
      if (!res.violations.empty()) return kExitStage;
    }
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const json::exception& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const StageError& e) {
    spdlog::error("stage '{}' failed: {}", e.stage(), e.what());
    spdlog::error("quarantine summary: {}", e.summary().dump());
    return kExitStage;
  } catch (const std::exception& e) {
    spdlog::error("failed: {}", e.what());
    return kExitStage;
  }
  return 0;
}

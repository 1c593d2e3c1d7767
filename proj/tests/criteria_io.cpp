// Criteria that touch the filesystem, processes or sockets.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <map>
#include <random>
#include <thread>

#include "criteria.hpp"
#include "galaxyedit/pipeline.hpp"
#include "galaxyedit/records.hpp"
#include "galaxyedit/synth.hpp"

// After Eigen: <resolv.h> defines _res, which Eigen uses as a parameter name.
#include <httplib.h>

namespace criteria {

using namespace galaxyedit;
using nlohmann::json;
namespace fs = std::filesystem;

Mask minkowski_dilation(const Mask& m, int k) {
  Mask out(m.width, m.height);
  const int r = k / 2;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
          const int sx = x - dx, sy = y - dy;
          if (sx >= 0 && sx < m.width && sy >= 0 && sy < m.height && m.at(sx, sy)) out.at(x, y) = 1;
        }
  return out;
}

namespace {

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      const auto b = read_file(e.path());
      out[fs::relative(e.path(), root).string()] = std::string(b.begin(), b.end());
    }
  return out;
}

std::string bytes_of(const fs::path& p) {
  const auto b = read_file(p);
  return {b.begin(), b.end()};
}

}  // namespace

PipelineReport pipeline_exactness(const fs::path& work, std::uint64_t seed) {
  PipelineReport rep;
  const auto pol = FilterPolicy::defaults();

  // (W, H, pixels, expected keep): 0.18 % and 50 % are both inclusive.
  const std::vector<std::tuple<int, int, int, bool>> cases = {
      {100, 100, 17, false},    {100, 100, 18, true},       {100, 100, 5000, true}, {100, 100, 5001, false},
      {1000, 1000, 1799, false}, {1000, 1000, 1800, true},  {50, 40, 1000, true},   {50, 40, 1001, false},
      {500, 500, 450, true},    {500, 500, 449, false}};
  for (const auto& [w, h, px, keep] : cases) {
    Mask m(w, h);
    std::fill_n(m.bits.begin(), px, 1);
    const auto rec = make_object_record("cat", "", {0, 0, w, h}, m);
    ++rep.size_cases;
    rep.size_ok += filter_by_size(rec, pol) == keep;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> density(0.001, 0.1);
  for (int i = 0; i < 100; ++i) {
    Mask m(32, 32);
    std::bernoulli_distribution on(density(rng));
    for (auto& b : m.bits) b = on(rng) ? 1 : 0;
    ++rep.dilation_masks;
    rep.dilation_ok += dilate_mask(m, pol.dilation_kernel) == minkowski_dilation(m, pol.dilation_kernel);
  }

  fs::remove_all(work);
  synth_corpus(6, seed, work / "raw");
  run_pipeline(work / "raw", work / "a", pol, ModelClients::all_mock(1), seed);
  run_pipeline(work / "raw", work / "b", pol, ModelClients::all_mock(1), seed);
  rep.rerun_identical = tree_bytes(work / "a") == tree_bytes(work / "b");

  std::map<std::string, EditSample> adds;
  const auto samples = read_manifest(work / "a/manifest.jsonl");
  for (const auto& s : samples)
    if (s.task == Task::add) adds[s.sample_id] = s;
  for (const auto& s : samples) {
    if (s.task != Task::remove) continue;
    ++rep.pairs;
    const std::string twin = s.sample_id.substr(0, s.sample_id.size() - std::string("-remove").size()) + "-add";
    const auto it = adds.find(twin);
    if (it == adds.end()) continue;
    const auto& a = it->second;
    rep.swap_ok += bytes_of(work / "a" / a.source_path) == bytes_of(work / "a" / s.target_path) &&
                   bytes_of(work / "a" / a.target_path) == bytes_of(work / "a" / s.source_path) &&
                   a.mask_path == s.mask_path;
  }
  return rep;
}

CrashReport crash_recovery(const fs::path& dir, int kill_after) {
  CrashReport rep;
  const auto& plant = paper_rating_plant();
  const auto samples = write_fixture_samples(dir, plant);
  std::string sid;
  {
    RatingService svc(samples, dir / "data");
    sid = svc.create_session("crash", 77).at("session_id");
  }
  int fds[2];
  if (pipe(fds) != 0) throw std::runtime_error("pipe failed");
  const pid_t pid = fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    close(fds[0]);
    RatingService svc(samples, dir / "data");
    for (;;) {
      const auto next = svc.next_item(sid);
      if (next.at("done").get<bool>()) break;
      const auto& item = next.at("item");
      for (const auto& c : item.at("candidates")) {
        if (!c.at("rating").is_null()) continue;
        svc.submit_rating({{"session_id", sid}, {"item_id", item.at("item_id")}, {"blind_id", c.at("blind_id")}, {"rating", 3}});
        const std::string ack = item.at("item_id").get<std::string>() + " " + c.at("blind_id").get<std::string>() + "\n";
        if (write(fds[1], ack.data(), ack.size()) < 0) _exit(1);
      }
    }
    _exit(0);
  }
  close(fds[1]);
  std::vector<std::pair<std::string, std::string>> acked;
  std::string buf;
  char chunk[256];
  for (;;) {
    const ssize_t got = read(fds[0], chunk, sizeof chunk);
    if (got <= 0) break;
    buf.append(chunk, static_cast<std::size_t>(got));
    for (std::size_t nl; (nl = buf.find('\n')) != std::string::npos;) {
      const std::string l = buf.substr(0, nl);
      buf.erase(0, nl + 1);
      const auto sp = l.find(' ');
      acked.emplace_back(l.substr(0, sp), l.substr(sp + 1));
    }
    if (!rep.killed && static_cast<int>(acked.size()) >= kill_after) {
      kill(pid, SIGKILL);
      rep.killed = true;
    }
  }
  close(fds[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  rep.killed = rep.killed && WIFSIGNALED(status);

  RatingService after(samples, dir / "data");
  rep.acked = static_cast<int>(acked.size());
  for (const auto& [item, blind] : acked)
    if (after.store().rating(sid, item, blind) != 3) ++rep.lost;
  return rep;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> tags_in(const std::string& text) {
  std::vector<std::string> out;
  const std::string t = lower(text);
  for (const auto& tag : model_tags())
    if (t.find(lower(tag)) != std::string::npos) out.push_back(tag);
  return out;
}

}  // namespace

AuditReport serialization_audit(const fs::path& dir) {
  AuditReport rep;
  RatingService svc(write_fixture_samples(dir, paper_rating_plant()), dir / "data");
  RatingHttpServer http(svc, "audit-token");
  const int port = http.bind("127.0.0.1", 0);
  std::thread th([&] { http.run(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);
  cli.set_read_timeout(10);

  auto scan = [&](const std::string& what, const httplib::Result& r) -> std::string {
    if (!r) {
      rep.leaks.push_back("no response for " + what);
      return "{}";
    }
    ++rep.responses;
    std::string all = r->body;
    for (const auto& [k, v] : r->headers) all += "\n" + k + ": " + v;
    for (const auto& tag : tags_in(all)) rep.leaks.push_back(tag + " in " + what);
    return r->body;
  };
  const json post = json{{"evaluator_id", "auditor"}, {"seed", 4}};
  const std::string sid = json::parse(scan("POST /sessions", cli.Post("/sessions", post.dump(), "application/json"))).value("session_id", "");
  for (int guard = 0; guard < 200; ++guard) {
    const auto j = json::parse(scan("GET next", cli.Get("/sessions/" + sid + "/next")));
    if (!j.contains("done") || j.at("done").get<bool>()) break;
    const auto& item = j.at("item");
    scan("GET source", cli.Get(item.at("source").get<std::string>()));
    for (const auto& c : item.at("candidates")) {
      scan("GET media", cli.Get(c.at("image").get<std::string>()));
      json body = {{"session_id", sid}, {"item_id", item.at("item_id")}, {"blind_id", c.at("blind_id")}, {"rating", 2}};
      scan("POST rating", cli.Post("/ratings", body.dump(), "application/json"));
      scan("POST duplicate", cli.Post("/ratings", body.dump(), "application/json"));
      body["rating"] = 5;
      scan("POST conflict", cli.Post("/ratings", body.dump(), "application/json"));
    }
  }
  scan("GET next (done)", cli.Get("/sessions/" + sid + "/next"));
  scan("POST bad rating", cli.Post("/ratings", R"({"rating":1})", "application/json"));
  scan("POST bad json", cli.Post("/ratings", "{", "application/json"));
  scan("POST bad session", cli.Post("/sessions", R"({"evaluator_id":""})", "application/json"));
  scan("GET unknown session", cli.Get("/sessions/nope/next"));
  scan("GET unknown media", cli.Get("/media/mnothing"));
  scan("GET unknown route", cli.Get("/nowhere"));
  scan("GET report without token", cli.Get("/report"));
  scan("OPTIONS", cli.Options("/ratings"));
  const auto admin = cli.Get("/report", {{"Authorization", "Bearer audit-token"}});
  rep.report_has_names = admin && admin->status == 200 && !tags_in(admin->body).empty();

  http.stop();
  th.join();
  return rep;
}

}  // namespace criteria

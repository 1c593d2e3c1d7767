#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>
#include <spdlog/spdlog.h>

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "galaxyedit/errors.hpp"
#include "galaxyedit/image.hpp"
#include "galaxyedit/rating.hpp"

namespace galaxyedit {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string sha256_hex(const std::string& data, std::size_t bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (std::size_t i = 0; i < std::min<std::size_t>(bytes, len); ++i) {
    s += digits[md[i] >> 4];
    s += digits[md[i] & 15];
  }
  return s;
}

std::uint64_t random_u64() {
  std::uint64_t v = 0;
  if (RAND_bytes(reinterpret_cast<unsigned char*>(&v), sizeof v) != 1) throw std::runtime_error("RAND_bytes failed");
  return v;
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

SampleSet SampleSet::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object() || !j.contains("items") || !j.at("items").is_array())
    throw ConfigError("samples: expected an object with an 'items' array");
  SampleSet s;
  std::set<std::string> ids;
  for (const auto& it : j.at("items")) {
    EvalItem item;
    try {
      item.item_id = it.at("item_id").get<std::string>();
      item.task = it.at("task").get<std::string>();
      item.instruction = it.at("instruction").get<std::string>();
      item.source = (base_dir / it.at("source").get<std::string>()).lexically_normal().string();
      for (const auto& c : it.at("candidates"))
        item.candidates.push_back(
            {c.at("model").get<std::string>(), (base_dir / c.at("image").get<std::string>()).lexically_normal().string()});
    } catch (const json::exception& e) {
      throw ConfigError(std::string("samples: ") + e.what());
    }
    if (item.task != "add" && item.task != "remove") throw ConfigError("samples: item " + item.item_id + " has bad task");
    if (!ids.insert(item.item_id).second) throw ConfigError("samples: duplicate item_id " + item.item_id);
    if (item.candidates.empty()) throw ConfigError("samples: item " + item.item_id + " has no candidates");
    std::set<std::string> models;
    for (const auto& c : item.candidates)
      if (!models.insert(c.model).second) throw ConfigError("samples: item " + item.item_id + " repeats a model");
    s.items.push_back(std::move(item));
  }
  if (s.items.empty()) throw ConfigError("samples: empty sample set");
  return s;
}

SampleSet SampleSet::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open samples file " + path.string());
  try {
    return from_json(json::parse(in), path.parent_path());
  } catch (const json::parse_error& e) {
    throw ConfigError("samples " + path.string() + ": " + e.what());
  }
}

const EvalItem* SampleSet::find(const std::string& item_id) const {
  for (const auto& it : items)
    if (it.item_id == item_id) return &it;
  return nullptr;
}

json AggregateReport::to_json() const {
  auto row = [](const ReportRow& r) {
    return json{{"model", r.model},           {"task", r.task},   {"average", r.tenths / 10.0},
                {"average_text", format_tenths(r.tenths)}, {"count", r.count}, {"sum", r.sum}};
  };
  json out_rows = json::array();
  for (const auto& r : rows) out_rows.push_back(row(r));
  return {{"rows", out_rows},
          {"ground_truth", ground_truth ? row(*ground_truth) : json(nullptr)},
          {"n_ratings", n_ratings},
          {"unmapped", unmapped}};
}

std::string AggregateReport::to_text() const {
  std::map<std::string, std::map<std::string, std::string>> table;
  for (const auto& r : rows) table[r.model][r.task] = format_tenths(r.tenths);
  std::ostringstream os;
  os << "model            remove  add\n";
  for (const auto& [model, cells] : table) {
    auto cell = [&](const char* t) { return cells.count(t) ? cells.at(t) : std::string("-"); };
    os << model << std::string(model.size() < 17 ? 17 - model.size() : 1, ' ') << cell("remove") << "     " << cell("add")
       << "\n";
  }
  if (ground_truth) os << "ground truth     " << format_tenths(ground_truth->tenths) << "\n";
  os << n_ratings << " ratings";
  if (unmapped) os << ", " << unmapped << " unmapped";
  os << "\n";
  return os.str();
}

RatingService::RatingService(SampleSet samples, const fs::path& data_dir)
    : samples_(std::move(samples)), store_(data_dir) {
  if (samples_.items.empty()) throw ConfigError("rating service: empty sample set");
  for (const auto& item : samples_.items) {
    media_[media_id(item.source)] = item.source;
    for (const auto& c : item.candidates) media_[media_id(c.image)] = c.image;
  }
}

std::string RatingService::media_id(const std::string& path) const {
  return "m" + sha256_hex(store_.secret() + "\x1fmedia\x1f" + path, 12);
}

std::optional<fs::path> RatingService::media_path(const std::string& id) const {
  const auto it = media_.find(id);
  if (it == media_.end()) return std::nullopt;
  return it->second;
}

std::vector<const Candidate*> RatingService::candidate_order(const EvalSession& s, const EvalItem& item) const {
  std::vector<const Candidate*> out;
  for (const auto& c : item.candidates) out.push_back(&c);
  std::mt19937_64 rng(s.seed ^ fnv1a(item.item_id));
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

json RatingService::create_session(const std::string& evaluator_id, std::optional<std::uint64_t> seed,
                                   std::optional<int> max_items) {
  if (evaluator_id.empty() || evaluator_id.size() > 200) throw ServiceError(400, "evaluator_id must be 1..200 characters");
  EvalSession s;
  s.session_id = "s" + sha256_hex(std::to_string(random_u64()) + std::to_string(random_u64()), 16);
  s.evaluator_id = evaluator_id;
  s.seed = seed.value_or(random_u64());
  for (const auto& it : samples_.items) s.item_order.push_back(it.item_id);
  std::mt19937_64 rng(s.seed);
  std::shuffle(s.item_order.begin(), s.item_order.end(), rng);
  if (max_items) {
    if (*max_items < 1) throw ServiceError(400, "max_items must be positive");
    if (static_cast<std::size_t>(*max_items) < s.item_order.size()) s.item_order.resize(*max_items);
  }
  s.created_ms = now_ms();
  store_.add_session(s);
  return {{"session_id", s.session_id}, {"evaluator_id", s.evaluator_id}, {"item_order", s.item_order}, {"cursor", 0}};
}

json RatingService::next_item(const std::string& session_id) const {
  const auto s = store_.session(session_id);
  if (!s) throw ServiceError(404, "unknown session");
  const int total = static_cast<int>(s->item_order.size());
  for (int cursor = 0; cursor < total; ++cursor) {
    const EvalItem* item = samples_.find(s->item_order[cursor]);
    if (!item) throw ServiceError(500, "session references an item missing from the sample set");
    json cands = json::array();
    bool pending = false;
    for (const Candidate* c : candidate_order(*s, *item)) {
      const std::string blind = blind_token(store_.secret(), s->session_id, item->item_id, c->model);
      const auto r = store_.rating(s->session_id, item->item_id, blind);
      pending = pending || !r;
      cands.push_back({{"blind_id", blind}, {"image", "/media/" + media_id(c->image)}, {"rating", r ? json(*r) : json(nullptr)}});
    }
    if (!pending) continue;
    return {{"done", false},
            {"session_id", s->session_id},
            {"cursor", cursor},
            {"total", total},
            {"item",
             {{"item_id", item->item_id},
              {"task", item->task},
              {"instruction", item->instruction},
              {"source", "/media/" + media_id(item->source)},
              {"candidates", cands}}}};
  }
  return {{"done", true}, {"session_id", s->session_id}, {"cursor", total}, {"total", total}};
}

json RatingService::submit_rating(const json& body) {
  if (!body.is_object()) throw ServiceError(400, "expected a JSON object");
  static const std::set<std::string> keys = {"session_id", "item_id", "blind_id", "rating"};
  for (auto it = body.begin(); it != body.end(); ++it)
    if (!keys.count(it.key())) throw ServiceError(400, "unexpected field '" + it.key() + "'");
  for (const auto& k : {"session_id", "item_id", "blind_id"})
    if (!body.contains(k) || !body.at(k).is_string()) throw ServiceError(400, std::string("missing string field '") + k + "'");
  if (!body.contains("rating") || !body.at("rating").is_number_integer())
    throw ServiceError(400, "rating must be an integer from 1 to 5");
  const auto rating = body.at("rating").get<long long>();
  if (rating < 1 || rating > 5) throw ServiceError(400, "rating must be an integer from 1 to 5");

  RatingRecord r;
  r.session_id = body.at("session_id").get<std::string>();
  r.item_id = body.at("item_id").get<std::string>();
  r.blind_id = body.at("blind_id").get<std::string>();
  r.rating = static_cast<int>(rating);
  const auto s = store_.session(r.session_id);
  if (!s) throw ServiceError(404, "unknown session");
  if (std::find(s->item_order.begin(), s->item_order.end(), r.item_id) == s->item_order.end())
    throw ServiceError(404, "item is not part of this session");
  const EvalItem* item = samples_.find(r.item_id);
  bool known = false;
  for (const auto& c : item->candidates) known = known || blind_token(store_.secret(), r.session_id, r.item_id, c.model) == r.blind_id;
  if (!known) throw ServiceError(404, "unknown blind_id for this item");
  r.evaluator_id = s->evaluator_id;
  r.timestamp_ms = now_ms();
  const auto status = store_.add_rating(r);
  return {{"status", status == SubmitStatus::stored ? "stored" : "duplicate"},
          {"session_id", r.session_id},
          {"item_id", r.item_id},
          {"blind_id", r.blind_id},
          {"rating", r.rating}};
}

AggregateReport RatingService::report() const {
  // Server-side blind map: (session, item, blind) -> model.
  std::map<std::tuple<std::string, std::string, std::string>, const Candidate*> blind_map;
  std::map<std::string, const EvalItem*> items;
  for (const auto& it : samples_.items) items[it.item_id] = &it;
  AggregateReport rep;
  std::map<std::pair<std::string, std::string>, ReportRow> rows;
  ReportRow gt{kGroundTruthTag, "all", 0, 0, 0};
  for (const auto& r : store_.ratings()) {
    ++rep.n_ratings;
    const Candidate* who = nullptr;
    if (const auto it = items.find(r.item_id); it != items.end())
      for (const auto& c : it->second->candidates)
        if (blind_token(store_.secret(), r.session_id, r.item_id, c.model) == r.blind_id) who = &c;
    if (!who) {
      ++rep.unmapped;
      continue;
    }
    if (who->model == kGroundTruthTag) {
      gt.sum += r.rating;
      ++gt.count;
      continue;
    }
    auto& row = rows[{who->model, items.at(r.item_id)->task}];
    row.model = who->model;
    row.task = items.at(r.item_id)->task;
    row.sum += r.rating;
    ++row.count;
  }
  for (auto& [k, row] : rows) {
    row.tenths = round_half_up_tenths(row.sum, row.count);
    rep.rows.push_back(row);
  }
  if (gt.count) {
    gt.tenths = round_half_up_tenths(gt.sum, gt.count);
    rep.ground_truth = gt;
  }
  return rep;
}

struct RatingHttpServer::Impl {
  RatingService& service;
  std::string admin_token;
  httplib::Server server;

  Impl(RatingService& s, std::string token) : service(s), admin_token(std::move(token)) {}
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    send_json(res, e.status(), {{"error", e.what()}});
  } catch (const std::exception& e) {
    spdlog::error("rating service: {}", e.what());
    send_json(res, 500, {{"error", "internal error"}});
  }
}

json parse_body(const httplib::Request& req) {
  try {
    return req.body.empty() ? json::object() : json::parse(req.body);
  } catch (const json::parse_error&) {
    throw ServiceError(400, "body is not valid JSON");
  }
}

}  // namespace

RatingHttpServer::RatingHttpServer(RatingService& service, std::string admin_token)
    : impl_(std::make_unique<Impl>(service, std::move(admin_token))) {
  auto& srv = impl_->server;
  Impl* im = impl_.get();
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type, Authorization"},
                           {"Cache-Control", "no-store"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Post("/sessions", [im](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json b = parse_body(req);
      if (!b.is_object()) throw ServiceError(400, "expected a JSON object");
      for (auto it = b.begin(); it != b.end(); ++it)
        if (it.key() != "evaluator_id" && it.key() != "seed" && it.key() != "max_items")
          throw ServiceError(400, "unexpected field '" + it.key() + "'");
      if (!b.contains("evaluator_id") || !b.at("evaluator_id").is_string())
        throw ServiceError(400, "missing string field 'evaluator_id'");
      std::optional<std::uint64_t> seed;
      std::optional<int> max_items;
      if (b.contains("seed")) {
        if (!b.at("seed").is_number_unsigned()) throw ServiceError(400, "seed must be a non-negative integer");
        seed = b.at("seed").get<std::uint64_t>();
      }
      if (b.contains("max_items")) {
        if (!b.at("max_items").is_number_integer()) throw ServiceError(400, "max_items must be an integer");
        max_items = b.at("max_items").get<int>();
      }
      send_json(res, 201, im->service.create_session(b.at("evaluator_id").get<std::string>(), seed, max_items));
    });
  });

  srv.Get(R"(/sessions/([A-Za-z0-9]+)/next)", [im](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, im->service.next_item(req.matches[1])); });
  });

  srv.Post("/ratings", [im](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json ack = im->service.submit_rating(parse_body(req));
      send_json(res, ack.at("status") == "stored" ? 201 : 200, ack);
    });
  });

  srv.Get("/report", [im](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (im->admin_token.empty()) throw ServiceError(403, "report disabled: no admin token configured");
      const std::string want = "Bearer " + im->admin_token;
      const std::string got = req.get_header_value("Authorization");
      if (got.size() != want.size() || CRYPTO_memcmp(got.data(), want.data(), want.size()) != 0)
        throw ServiceError(401, "admin token required");
      send_json(res, 200, im->service.report().to_json());
    });
  });

  srv.Get(R"(/media/([A-Za-z0-9]+))", [im](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto p = im->service.media_path(req.matches[1]);
      if (!p || !fs::exists(*p)) throw ServiceError(404, "unknown media id");
      const auto bytes = read_file(*p);
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    });
  });

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_json(res, res.status, {{"error", "not found"}});
  });
}

RatingHttpServer::~RatingHttpServer() { stop(); }

int RatingHttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p <= 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void RatingHttpServer::run() { impl_->server.listen_after_bind(); }

void RatingHttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace galaxyedit

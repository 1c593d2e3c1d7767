#include "galaxyedit/model_clients.hpp"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <random>
#include <set>
#include <thread>
#include <utility>

#include "galaxyedit/synth.hpp"

namespace galaxyedit {

namespace {

const std::vector<std::pair<ClientKind, std::string>>& kind_names() {
  static const std::vector<std::pair<ClientKind, std::string>> names = {
      {ClientKind::tagger, "tagger"},       {ClientKind::detector, "detector"}, {ClientKind::segmenter, "segmenter"},
      {ClientKind::captioner, "captioner"}, {ClientKind::inpainter, "inpainter"}, {ClientKind::depth, "depth"},
      {ClientKind::embedder, "embedder"},   {ClientKind::llm, "llm"}};
  return names;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

std::string lower_trim(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '-') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

json bbox_json(const BBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

BBox bbox_from_json(const json& j) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != 4) throw ClientError("bbox must have 4 entries");
  return {v[0], v[1], v[2], v[3]};
}

std::string encode_image(const Image& img) { return base64_encode(encode_png(img)); }
Image decode_image(const json& j) { return decode_png(base64_decode(j.get<std::string>())); }

json request(const Image& img, const std::string& image_ref) {
  return {{"schema", kWireSchema}, {"image", encode_image(img)}, {"image_ref", image_ref}};
}

void check_schema(const json& response, ClientKind kind) {
  if (!response.is_object()) throw ClientError(to_string(kind) + ": response is not an object");
  if (response.value("schema", 0) != kWireSchema)
    throw ClientError(to_string(kind) + ": unsupported response schema " + response.value("schema", json(nullptr)).dump());
}

std::vector<double> normalized(std::vector<double> v, const char* who) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0) || !std::isfinite(n)) throw ClientError(std::string(who) + ": zero or non-finite embedding");
  for (auto& x : v) x /= n;
  return v;
}

}  // namespace

std::string to_string(ClientKind k) {
  for (const auto& [kind, name] : kind_names())
    if (kind == k) return name;
  return "unknown";
}

ClientKind parse_client_kind(const std::string& s) {
  for (const auto& [kind, name] : kind_names())
    if (name == s) return kind;
  throw ConfigError("unknown client kind '" + s + "'");
}

const std::vector<ClientKind>& all_client_kinds() {
  static const std::vector<ClientKind> kinds = [] {
    std::vector<ClientKind> v;
    for (const auto& kn : kind_names()) v.push_back(kn.first);
    return v;
  }();
  return kinds;
}

ClientConfig ClientConfig::from_json(const json& j) {
  ClientConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "endpoint") c.endpoint = it->get<std::string>();
    else if (k == "timeout_ms") c.timeout_ms = it->get<int>();
    else if (k == "max_retries") c.max_retries = it->get<int>();
    else if (k == "backoff_base_ms") c.backoff_base_ms = it->get<int>();
    else if (k == "auth_token_ref") c.auth_token_ref = it->get<std::string>();
    else if (k == "rate_per_sec") c.rate_per_sec = it->get<double>();
    else if (k == "burst") c.burst = it->get<int>();
    else throw ConfigError("client config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

void ClientConfig::validate() const {
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0)
    throw ConfigError("client config: endpoint must be an http(s) URL, got '" + endpoint + "'");
  if (timeout_ms <= 0) throw ConfigError("client config: timeout_ms must be > 0");
  if (max_retries < 0) throw ConfigError("client config: max_retries must be >= 0");
  if (backoff_base_ms < 0) throw ConfigError("client config: backoff_base_ms must be >= 0");
  if (rate_per_sec < 0 || burst < 1) throw ConfigError("client config: need rate_per_sec >= 0 and burst >= 1");
}

void real_sleep(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

RetryingTransport::RetryingTransport(std::shared_ptr<Transport> inner, int max_retries, int backoff_base_ms, SleepFn sleep)
    : inner_(std::move(inner)), max_retries_(max_retries), backoff_base_ms_(backoff_base_ms), sleep_(std::move(sleep)) {
  if (max_retries_ < 0) throw ConfigError("retry: max_retries must be >= 0");
}

json RetryingTransport::call(const json& req) {
  for (int attempt = 0;; ++attempt) {
    ++attempts_;
    try {
      return inner_->call(req);
    } catch (const TransportError& e) {
      if (attempt >= max_retries_)
        throw ClientError("giving up after " + std::to_string(max_retries_) + " retries: " + e.what());
      const auto delay = std::chrono::milliseconds(static_cast<std::int64_t>(backoff_base_ms_) << attempt);
      spdlog::debug("retry {} after {} ms: {}", attempt + 1, delay.count(), e.what());
      sleep_(delay);
    }
  }
}

namespace {

double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

TokenBucket::TokenBucket(double rate_per_sec, int burst, Clock clock, SleepFn sleep)
    : rate_(rate_per_sec), capacity_(burst), tokens_(burst), clock_(clock ? std::move(clock) : Clock(steady_seconds)),
      sleep_(std::move(sleep)) {
  if (!(rate_ > 0) || burst < 1) throw ConfigError("token bucket: need rate > 0 and burst >= 1");
  last_ = clock_();
}

void TokenBucket::acquire() {
  std::unique_lock lock(mu_);
  for (;;) {
    const double now = clock_();
    tokens_ = std::min(capacity_, tokens_ + (now - last_) * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const auto wait = std::chrono::milliseconds(static_cast<std::int64_t>(std::ceil((1.0 - tokens_) / rate_ * 1000.0)));
    sleep_(wait);
  }
}

RateLimitedTransport::RateLimitedTransport(std::shared_ptr<Transport> inner, std::shared_ptr<TokenBucket> bucket)
    : inner_(std::move(inner)), bucket_(std::move(bucket)) {}

json RateLimitedTransport::call(const json& req) {
  bucket_->acquire();
  return inner_->call(req);
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ClientError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw ClientError("base64: invalid input");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::vector<double> MockEmbedder::hashed(std::uint64_t key) const {
  std::mt19937_64 rng(key ^ (seed_ * 0x9E3779B97F4A7C15ull));
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(kDim);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<double> MockEmbedder::text(const std::string& s) const {
  const auto toks = words(s);
  if (toks.empty()) throw ClientError("embedder: empty text");
  std::vector<double> v(kDim, 0.0);
  for (const auto& t : toks) {
    const auto h = hashed(fnv1a(t));
    for (int i = 0; i < kDim; ++i) v[i] += h[i];
  }
  return normalized(std::move(v), "mock embedder");
}

std::string MockEmbedder::dominant_class(const Image& img) {
  if (img.channels != 3 || img.empty()) return "";
  const auto& classes = object_classes();
  std::vector<int> votes(classes.size(), 0);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      int best = -1, best_d = 40 * 40 * 3;
      for (std::size_t k = 0; k < classes.size(); ++k) {
        int d = 0;
        for (int c = 0; c < 3; ++c) {
          const int e = img.at(x, y, c) - classes[k].color[c];
          d += e * e;
        }
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(k);
        }
      }
      if (best >= 0) ++votes[best];
    }
  const auto it = std::max_element(votes.begin(), votes.end());
  const double share = static_cast<double>(*it) / (static_cast<double>(img.width) * img.height);
  return share >= 0.15 ? classes[it - votes.begin()].label : "";
}

std::vector<double> MockEmbedder::image(const Image& img) const {
  if (img.empty()) throw ClientError("embedder: empty image");
  const auto noise = hashed(fnv1a(img.pixels.data(), img.pixels.size()));
  const std::string cls = dominant_class(img);
  if (cls.empty()) return normalized(noise, "mock embedder");
  const auto anchor = text(cls);
  std::vector<double> v(kDim);
  for (int i = 0; i < kDim; ++i) v[i] = 0.9 * anchor[i] + 0.3 * noise[i] / std::sqrt(static_cast<double>(kDim));
  return normalized(std::move(v), "mock embedder");
}

std::string head_noun(const std::string& caption) {
  static const std::set<std::string> stops = {"in",   "with",  "on",    "of",      "at",     "near", "holding",
                                              "wearing", "behind", "under", "next", "by",   "from", "and",
                                              "beside",  "that",   "which", "to"};
  const auto toks = words(caption);
  if (toks.empty()) throw ClientError("label extraction: empty caption");
  std::size_t end = toks.size();
  for (std::size_t i = 1; i < toks.size(); ++i)
    if (stops.count(toks[i])) {
      end = i;
      break;
    }
  return toks[end - 1];
}

const char* const kLabelPromptVersion = "label-extract-v1";

const std::array<LabelExample, 3>& label_prompt_examples() {
  static const std::array<LabelExample, 3> ex = {{{"red double-decker bus on a street", "bus"},
                                                  {"woman holding a striped umbrella", "woman"},
                                                  {"small wooden table with two chairs", "table"}}};
  return ex;
}

std::string build_label_prompt(const std::string& caption) {
  std::string p = "Extract the object class label from the caption. Answer with the label only.\n\n";
  for (const auto& e : label_prompt_examples()) p += "Caption: " + e.caption + "\nLabel: " + e.label + "\n\n";
  p += "Caption: " + caption + "\nLabel:";
  return p;
}

MockTransport::MockTransport(ClientKind kind, std::uint64_t seed) : kind_(kind), seed_(seed) {}

json MockTransport::call(const json& req) {
  if (req.value("schema", 0) != kWireSchema) throw ClientError("mock " + to_string(kind_) + ": bad request schema");
  json resp = {{"schema", kWireSchema}};
  auto truth = [&]() -> std::optional<SceneTruth> {
    const std::string ref = req.value("image_ref", "");
    if (ref.empty() || !std::filesystem::exists(sidecar_path(ref))) return std::nullopt;
    return read_sidecar(ref);
  };
  switch (kind_) {
    case ClientKind::tagger: {
      const auto t = truth();
      resp["labels"] = t ? t->labels : std::vector<std::string>{};
      break;
    }
    case ClientKind::detector: {
      const auto wanted = req.at("labels").get<std::vector<std::string>>();
      json dets = json::array();
      if (const auto t = truth())
        for (const auto& o : t->objects)
          if (std::find(wanted.begin(), wanted.end(), o.label) != wanted.end())
            dets.push_back({{"label", o.label}, {"bbox", bbox_json(o.bbox)}, {"score", o.score}});
      resp["detections"] = dets;
      break;
    }
    case ClientKind::segmenter: {
      const Image img = decode_image(req.at("image"));
      resp["mask"] = encode_image(mask_to_image(mask_from_bbox(img.width, img.height, bbox_from_json(req.at("bbox")))));
      break;
    }
    case ClientKind::captioner: {
      const BBox box = bbox_from_json(req.at("bbox"));
      std::string best = "object";
      double best_iou = 0.5;
      if (const auto t = truth())
        for (const auto& o : t->objects) {
          const double iou = bbox_iou(o.bbox, box);
          if (iou > best_iou) {
            best_iou = iou;
            best = o.caption;
          }
        }
      resp["caption"] = best;
      break;
    }
    case ClientKind::inpainter: {
      Image img = decode_image(req.at("image"));
      const Mask mask = mask_from_image(decode_image(req.at("mask")));
      if (mask.width != img.width || mask.height != img.height) throw ClientError("mock inpainter: mask size mismatch");
      // Mean color of the 3-pixel ring just outside the mask.
      const Mask ring = dilate_mask(mask, 7);
      std::array<std::int64_t, 3> sum{0, 0, 0};
      std::int64_t n = 0;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          if (ring.at(x, y) && !mask.at(x, y)) {
            for (int c = 0; c < img.channels; ++c) sum[c] += img.at(x, y, c);
            ++n;
          }
      if (n > 0) {
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x)
            if (mask.at(x, y))
              for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = static_cast<std::uint8_t>((sum[c] + n / 2) / n);
      }
      resp["image"] = encode_image(img);
      break;
    }
    case ClientKind::depth: {
      const Image img = decode_image(req.at("image"));
      const auto t = truth();
      const DepthRamp ramp = t ? t->depth : DepthRamp{};
      std::vector<double> d(static_cast<std::size_t>(img.width) * img.height);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) d[static_cast<std::size_t>(y) * img.width + x] = ramp.at(x, y);
      resp["width"] = img.width;
      resp["height"] = img.height;
      resp["depth"] = d;
      break;
    }
    case ClientKind::embedder: {
      const MockEmbedder e(seed_);
      resp["embedding"] = req.contains("text") ? e.text(req.at("text").get<std::string>()) : e.image(decode_image(req.at("image")));
      break;
    }
    case ClientKind::llm:
      resp["label"] = head_noun(req.at("caption").get<std::string>());
      break;
  }
  return resp;
}

ModelClients ModelClients::all_mock(std::uint64_t seed) {
  ModelClients c;
  for (auto k : all_client_kinds()) c.set(k, std::make_shared<MockTransport>(k, seed));
  return c;
}

ModelClients ModelClients::from_config(const json& j, std::uint64_t seed, SleepFn sleep) {
  if (!j.is_object()) throw ConfigError("clients config: expected an object");
  ModelClients c = all_mock(seed);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const ClientKind kind = parse_client_kind(it.key());
    if (it->is_string()) {
      if (it->get<std::string>() != "mock") throw ConfigError("clients config: '" + it.key() + "' must be \"mock\" or an object");
      continue;
    }
    const ClientConfig cfg = ClientConfig::from_json(*it);
    std::shared_ptr<Transport> t = std::make_shared<HttpTransport>(cfg);
    t = std::make_shared<RetryingTransport>(t, cfg.max_retries, cfg.backoff_base_ms, sleep);
    if (cfg.rate_per_sec > 0)
      t = std::make_shared<RateLimitedTransport>(t, std::make_shared<TokenBucket>(cfg.rate_per_sec, cfg.burst));
    c.set(kind, t);
  }
  return c;
}

ModelClients ModelClients::from_file(const std::filesystem::path& path, std::uint64_t seed) {
  json j;
  try {
    const auto bytes = read_file(path);
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const std::exception& e) {
    throw ConfigError("clients config " + path.string() + ": " + e.what());
  }
  return from_config(j, seed);
}

void ModelClients::set(ClientKind kind, std::shared_ptr<Transport> t) { transports_[kind] = std::move(t); }

Transport& ModelClients::transport(ClientKind kind) const {
  const auto it = transports_.find(kind);
  if (it == transports_.end() || !it->second) throw ConfigError("no client configured for " + to_string(kind));
  return *it->second;
}

void ModelClients::flag(std::string msg) const {
  spdlog::warn("{}", msg);
  std::lock_guard lock(flags_->mu);
  flags_->items.push_back(std::move(msg));
}

std::vector<std::string> ModelClients::take_flags() const {
  std::lock_guard lock(flags_->mu);
  return std::exchange(flags_->items, {});
}

std::vector<std::string> ModelClients::tag(const Image& img, const std::string& image_ref) const {
  const json r = transport(ClientKind::tagger).call(request(img, image_ref));
  check_schema(r, ClientKind::tagger);
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& l : r.at("labels")) {
    const std::string s = lower_trim(l.get<std::string>());
    if (!s.empty() && seen.insert(s).second) out.push_back(s);
  }
  return out;
}

std::vector<Detection> ModelClients::detect(const Image& img, const std::string& image_ref,
                                            const std::vector<std::string>& labels) const {
  if (labels.empty()) return {};
  json req = request(img, image_ref);
  req["labels"] = labels;
  const json r = transport(ClientKind::detector).call(req);
  check_schema(r, ClientKind::detector);
  std::vector<Detection> out;
  for (const auto& d : r.at("detections")) {
    Detection det;
    det.label = lower_trim(d.at("label").get<std::string>());
    const BBox raw = bbox_from_json(d.at("bbox"));
    det.bbox = clamp_bbox(raw, img.width, img.height);
    det.score = d.at("score").get<double>();
    if (!(det.bbox == raw)) {
      det.flagged = true;
      flag("detector: box for '" + det.label + "' clamped to image bounds");
    }
    if (!(det.score >= 0.0 && det.score <= 1.0)) {
      det.flagged = true;
      det.score = std::isfinite(det.score) ? std::clamp(det.score, 0.0, 1.0) : 0.0;
      flag("detector: score for '" + det.label + "' clamped to [0, 1]");
    }
    if (det.bbox.width() <= 0 || det.bbox.height() <= 0) {
      flag("detector: dropped degenerate box for '" + det.label + "'");
      continue;
    }
    out.push_back(det);
  }
  return out;
}

Mask ModelClients::segment(const Image& img, const std::string& image_ref, const BBox& box) const {
  if (!box.valid_in(img.width, img.height)) throw ClientError("segmenter: box outside image");
  json req = request(img, image_ref);
  req["bbox"] = bbox_json(box);
  const json r = transport(ClientKind::segmenter).call(req);
  check_schema(r, ClientKind::segmenter);
  Mask m = mask_from_image(decode_image(r.at("mask")));
  if (m.width != img.width || m.height != img.height)
    throw ClientError("segmenter: mask is " + std::to_string(m.width) + "x" + std::to_string(m.height) + ", image is " +
                      std::to_string(img.width) + "x" + std::to_string(img.height));
  // Keep the mask within the box grown by 10% on each side.
  const int gx = std::max(1, box.width() / 10), gy = std::max(1, box.height() / 10);
  const BBox grown = clamp_bbox({box.x0 - gx, box.y0 - gy, box.x1 + gx, box.y1 + gy}, img.width, img.height);
  bool trimmed = false;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y) && (x < grown.x0 || x >= grown.x1 || y < grown.y0 || y >= grown.y1)) {
        m.at(x, y) = 0;
        trimmed = true;
      }
  if (trimmed) flag("segmenter: mask trimmed to the grown box");
  if (m.popcount() == 0 || bbox_iou(mask_bbox(m), box) <= 0.0) throw ClientError("segmenter: mask does not overlap its box");
  return m;
}

std::string ModelClients::caption(const Image& img, const std::string& image_ref, const BBox& box) const {
  json req = request(img, image_ref);
  req["bbox"] = bbox_json(box);
  const json r = transport(ClientKind::captioner).call(req);
  check_schema(r, ClientKind::captioner);
  return lower_trim(r.at("caption").get<std::string>());
}

Image ModelClients::inpaint(const Image& img, const Mask& mask) const {
  if (mask.width != img.width || mask.height != img.height) throw ShapeError("inpaint: mask/image size mismatch");
  json req = request(img, "");
  req["mask"] = encode_image(mask_to_image(mask));
  const json r = transport(ClientKind::inpainter).call(req);
  check_schema(r, ClientKind::inpainter);
  Image out = decode_image(r.at("image"));
  if (out.width != img.width || out.height != img.height || out.channels != img.channels)
    throw ClientError("inpainter: returned image has the wrong shape");
  // Outside the mask the source is authoritative.
  int restored = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (!mask.at(x, y))
        for (int c = 0; c < img.channels; ++c)
          if (out.at(x, y, c) != img.at(x, y, c)) {
            out.at(x, y, c) = img.at(x, y, c);
            ++restored;
          }
  if (restored) flag("inpainter: restored " + std::to_string(restored) + " values outside the mask");
  return out;
}

DepthMap ModelClients::estimate_depth(const Image& img, const std::string& image_ref) const {
  const json r = transport(ClientKind::depth).call(request(img, image_ref));
  check_schema(r, ClientKind::depth);
  DepthMap d;
  d.width = r.at("width").get<int>();
  d.height = r.at("height").get<int>();
  d.values = r.at("depth").get<std::vector<double>>();
  if (d.width != img.width || d.height != img.height || d.values.size() != static_cast<std::size_t>(d.width) * d.height)
    throw ClientError("depth: shape mismatch with the input image");
  for (auto& v : d.values)
    if (!(v > 0.0) || !std::isfinite(v)) {
      v = 1e-3;
      ++d.clamped;
    }
  if (d.clamped) flag("depth: clamped " + std::to_string(d.clamped) + " non-positive values");
  return d;
}

std::vector<double> ModelClients::embed_image(const Image& img) const {
  json req = request(img, "");
  const json r = transport(ClientKind::embedder).call(req);
  check_schema(r, ClientKind::embedder);
  return normalized(r.at("embedding").get<std::vector<double>>(), "embedder");
}

std::vector<double> ModelClients::embed_text(const std::string& text) const {
  const json r = transport(ClientKind::embedder).call({{"schema", kWireSchema}, {"text", text}});
  check_schema(r, ClientKind::embedder);
  return normalized(r.at("embedding").get<std::vector<double>>(), "embedder");
}

std::string ModelClients::extract_label(const std::string& caption) const {
  if (lower_trim(caption).empty()) throw ClientError("extract_label: empty caption");
  const json r = transport(ClientKind::llm).call(
      {{"schema", kWireSchema}, {"prompt_version", kLabelPromptVersion}, {"prompt", build_label_prompt(caption)}, {"caption", caption}});
  check_schema(r, ClientKind::llm);
  const std::string label = lower_trim(r.at("label").get<std::string>());
  if (label.empty()) throw ClientError("llm: empty label");
  return label;
}

}  // namespace galaxyedit

#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "galaxyedit/image.hpp"

namespace galaxyedit {

using nlohmann::json;

enum class ClientKind { tagger, detector, segmenter, captioner, inpainter, depth, embedder, llm };

std::string to_string(ClientKind k);
ClientKind parse_client_kind(const std::string& s);
const std::vector<ClientKind>& all_client_kinds();

inline constexpr int kWireSchema = 1;

struct ClientConfig {
  std::string endpoint;  // http://host:port/path
  int timeout_ms = 30000;
  int max_retries = 3;
  int backoff_base_ms = 200;
  std::string auth_token_ref;  // name of an environment variable
  double rate_per_sec = 0.0;   // 0 disables the limiter
  int burst = 4;

  static ClientConfig from_json(const json& j);
  void validate() const;
};

/// Retryable failure (timeouts, connection errors, 5xx, 429).
class TransportError : public ClientError {
 public:
  using ClientError::ClientError;
};

/// One request/response exchange in a kind's wire schema.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual json call(const json& request) = 0;
};

using SleepFn = std::function<void(std::chrono::milliseconds)>;
void real_sleep(std::chrono::milliseconds d);

class HttpTransport : public Transport {
 public:
  explicit HttpTransport(ClientConfig cfg);
  json call(const json& request) override;

 private:
  ClientConfig cfg_;
  std::string base_, path_;
};

/// Retries TransportError with exponential backoff: base * 2^attempt.
class RetryingTransport : public Transport {
 public:
  RetryingTransport(std::shared_ptr<Transport> inner, int max_retries, int backoff_base_ms, SleepFn sleep = real_sleep);
  json call(const json& request) override;
  int attempts() const { return attempts_; }

 private:
  std::shared_ptr<Transport> inner_;
  int max_retries_, backoff_base_ms_;
  SleepFn sleep_;
  int attempts_ = 0;
};

class TokenBucket {
 public:
  using Clock = std::function<double()>;  // seconds
  TokenBucket(double rate_per_sec, int burst, Clock clock = {}, SleepFn sleep = real_sleep);
  /// Blocks until a token is available.
  void acquire();

 private:
  double rate_, capacity_, tokens_, last_;
  Clock clock_;
  SleepFn sleep_;
  std::mutex mu_;
};

class RateLimitedTransport : public Transport {
 public:
  RateLimitedTransport(std::shared_ptr<Transport> inner, std::shared_ptr<TokenBucket> bucket);
  json call(const json& request) override;

 private:
  std::shared_ptr<Transport> inner_;
  std::shared_ptr<TokenBucket> bucket_;
};

/// In-process stand-in for one kind. Reads planted truth from the sidecar
/// named by the request's image_ref.
class MockTransport : public Transport {
 public:
  MockTransport(ClientKind kind, std::uint64_t seed = 0);
  json call(const json& request) override;

 private:
  ClientKind kind_;
  std::uint64_t seed_;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

struct Detection {
  std::string label;
  BBox bbox;
  double score = 0.0;
  bool flagged = false;
};

struct DepthMap {
  int width = 0, height = 0;
  std::vector<double> values;
  int clamped = 0;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Planted mock embedding: unit vectors driven by the class color table.
class MockEmbedder {
 public:
  static constexpr int kDim = 64;
  explicit MockEmbedder(std::uint64_t seed = 0) : seed_(seed) {}
  std::vector<double> text(const std::string& s) const;
  std::vector<double> image(const Image& img) const;
  /// Class whose color covers enough of the image, or "".
  static std::string dominant_class(const Image& img);

 private:
  std::vector<double> hashed(std::uint64_t key) const;
  std::uint64_t seed_;
};

/// Head noun of a caption: the last word before the first preposition.
std::string head_noun(const std::string& caption);

struct LabelExample {
  std::string caption, label;
};
extern const char* const kLabelPromptVersion;
const std::array<LabelExample, 3>& label_prompt_examples();
std::string build_label_prompt(const std::string& caption);

/// Typed facade over one transport per kind; validates and clamps
/// responses and records flags.
class ModelClients {
 public:
  ModelClients() = default;

  static ModelClients all_mock(std::uint64_t seed = 0);
  /// Config maps kind name to "mock" or a ClientConfig object. Missing kinds use mocks.
  static ModelClients from_config(const json& j, std::uint64_t seed = 0, SleepFn sleep = real_sleep);
  static ModelClients from_file(const std::filesystem::path& path, std::uint64_t seed = 0);

  void set(ClientKind kind, std::shared_ptr<Transport> t);
  Transport& transport(ClientKind kind) const;

  std::vector<std::string> tag(const Image& img, const std::string& image_ref) const;
  std::vector<Detection> detect(const Image& img, const std::string& image_ref,
                                const std::vector<std::string>& labels) const;
  Mask segment(const Image& img, const std::string& image_ref, const BBox& box) const;
  std::string caption(const Image& img, const std::string& image_ref, const BBox& box) const;
  Image inpaint(const Image& img, const Mask& mask) const;
  DepthMap estimate_depth(const Image& img, const std::string& image_ref) const;
  std::vector<double> embed_image(const Image& img) const;
  std::vector<double> embed_text(const std::string& text) const;
  std::string extract_label(const std::string& caption) const;

  /// Diagnostics recorded by clamping rules since the last call to take_flags.
  std::vector<std::string> take_flags() const;

 private:
  struct FlagLog {
    std::mutex mu;
    std::vector<std::string> items;
  };
  void flag(std::string msg) const;

  std::map<ClientKind, std::shared_ptr<Transport>> transports_;
  std::shared_ptr<FlagLog> flags_ = std::make_shared<FlagLog>();
};

}  // namespace galaxyedit

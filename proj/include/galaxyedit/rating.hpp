#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

namespace galaxyedit {

/// Error with the HTTP status the service maps it to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& msg) : std::runtime_error(msg), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

inline constexpr const char* kGroundTruthTag = "ground_truth";

struct Candidate {
  std::string model;  // hidden tag, server side only
  std::string image;  // absolute path
};

struct EvalItem {
  std::string item_id, task, instruction, source;
  std::vector<Candidate> candidates;
};

/// {"items": [{"item_id", "task", "instruction", "source",
///             "candidates": [{"model", "image"}]}]}; image paths are
/// relative to the samples file.
struct SampleSet {
  std::vector<EvalItem> items;

  static SampleSet from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static SampleSet from_file(const std::filesystem::path& path);
  const EvalItem* find(const std::string& item_id) const;
};

struct EvalSession {
  std::string session_id, evaluator_id;
  std::uint64_t seed = 0;
  std::vector<std::string> item_order;
  std::int64_t created_ms = 0;

  nlohmann::json to_json() const;
  static EvalSession from_json(const nlohmann::json& j);
};

struct RatingRecord {
  std::string session_id, evaluator_id, item_id, blind_id;
  int rating = 0;
  std::int64_t timestamp_ms = 0;

  nlohmann::json to_json() const;
  static RatingRecord from_json(const nlohmann::json& j);
};

/// "<crc32 of payload, 8 hex>\t<compact json>"
std::string encode_log_line(const nlohmann::json& j);
/// Nothing when the checksum or JSON is bad.
std::optional<nlohmann::json> decode_log_line(const std::string& line);

/// Append-only checksummed JSON-lines file. Every append is fsynced before
/// returning. A torn final line (crash mid-write) is dropped on open; a bad
/// line anywhere else is corruption.
class AppendLog {
 public:
  explicit AppendLog(std::filesystem::path path);
  ~AppendLog();
  AppendLog(const AppendLog&) = delete;
  AppendLog& operator=(const AppendLog&) = delete;

  const std::vector<nlohmann::json>& loaded() const { return loaded_; }
  int dropped_tail() const { return dropped_tail_; }
  void append(const nlohmann::json& j);
  /// Atomically replaces the file with exactly `records`.
  void rewrite(const std::vector<nlohmann::json>& records);

 private:
  void open_for_append();
  std::filesystem::path path_;
  int fd_ = -1;
  std::vector<nlohmann::json> loaded_;
  int dropped_tail_ = 0;
};

enum class SubmitStatus { stored, duplicate };

/// sessions.log + ratings.log + secret under one directory.
class RatingStore {
 public:
  explicit RatingStore(const std::filesystem::path& dir);

  const std::string& secret() const { return secret_; }
  void add_session(const EvalSession& s);
  std::optional<EvalSession> session(const std::string& id) const;
  std::vector<EvalSession> sessions() const;
  /// Throws ServiceError(409) when the tuple already holds a different rating.
  SubmitStatus add_rating(const RatingRecord& r);
  std::optional<int> rating(const std::string& session, const std::string& item, const std::string& blind) const;
  std::vector<RatingRecord> ratings() const;
  /// Rewrites both logs from memory, dropping nothing but torn tails.
  void compact();

 private:
  using Key = std::tuple<std::string, std::string, std::string>;
  mutable std::shared_mutex mu_;
  std::string secret_;
  std::unique_ptr<AppendLog> sessions_log_, ratings_log_;
  std::map<std::string, EvalSession> sessions_;
  std::vector<std::string> session_order_;
  std::map<Key, RatingRecord> ratings_;
  std::vector<Key> rating_order_;
};

/// Half-up rounding of sum/count to tenths, in integer arithmetic.
int round_half_up_tenths(long long sum, long long count);
std::string format_tenths(int tenths);

struct ReportRow {
  std::string model, task;  // task "all" for the ground-truth row
  long long sum = 0, count = 0;
  int tenths = 0;
};

struct AggregateReport {
  std::vector<ReportRow> rows;  // per (model, task), ground truth excluded
  std::optional<ReportRow> ground_truth;
  int n_ratings = 0, unmapped = 0;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Blind candidate token: keyed hash of the secret, session, item and model.
std::string blind_token(const std::string& secret, const std::string& session_id, const std::string& item_id,
                        const std::string& model);

class RatingService {
 public:
  RatingService(SampleSet samples, const std::filesystem::path& data_dir);

  nlohmann::json create_session(const std::string& evaluator_id, std::optional<std::uint64_t> seed = std::nullopt,
                                std::optional<int> max_items = std::nullopt);
  nlohmann::json next_item(const std::string& session_id) const;
  nlohmann::json submit_rating(const nlohmann::json& body);
  AggregateReport report() const;
  /// File behind /media/<id>, if any.
  std::optional<std::filesystem::path> media_path(const std::string& id) const;

  RatingStore& store() { return store_; }
  const SampleSet& samples() const { return samples_; }
  /// Candidate order shown to this session for this item.
  std::vector<const Candidate*> candidate_order(const EvalSession& s, const EvalItem& item) const;
  std::string media_id(const std::string& path) const;

 private:
  SampleSet samples_;
  RatingStore store_;
  std::map<std::string, std::filesystem::path> media_;
};

/// HTTP front end: POST /sessions, GET /sessions/{id}/next, POST /ratings,
/// GET /report (Bearer admin token), GET /media/{id}.
class RatingHttpServer {
 public:
  RatingHttpServer(RatingService& service, std::string admin_token);
  ~RatingHttpServer();
  /// Binds to `port` (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace galaxyedit

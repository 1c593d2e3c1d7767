#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <openssl/hmac.h>
#include <openssl/rand.h>
#include <spdlog/spdlog.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "galaxyedit/errors.hpp"
#include "galaxyedit/image.hpp"
#include "galaxyedit/rating.hpp"

namespace galaxyedit {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string hex(const unsigned char* p, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    s += digits[p[i] >> 4];
    s += digits[p[i] & 15];
  }
  return s;
}

[[noreturn]] void sys_fail(const std::string& what, const fs::path& p) {
  throw std::runtime_error(what + " " + p.string() + ": " + std::strerror(errno));
}

void write_all(int fd, const std::string& data, const fs::path& p) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      sys_fail("write", p);
    }
    off += static_cast<std::size_t>(n);
  }
}

void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

std::string random_hex(std::size_t bytes) {
  std::vector<unsigned char> buf(bytes);
  if (RAND_bytes(buf.data(), static_cast<int>(bytes)) != 1) throw std::runtime_error("RAND_bytes failed");
  return hex(buf.data(), bytes);
}

}  // namespace

std::string encode_log_line(const json& j) {
  const std::string payload = j.dump();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size()));
  char head[10];
  std::snprintf(head, sizeof head, "%08lx\t", static_cast<unsigned long>(crc));
  return std::string(head) + payload;
}

std::optional<json> decode_log_line(const std::string& line) {
  if (line.size() < 10 || line[8] != '\t') return std::nullopt;
  const std::string payload = line.substr(9);
  unsigned long want = 0;
  try {
    std::size_t used = 0;
    want = std::stoul(line.substr(0, 8), &used, 16);
    if (used != 8) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
  const auto got = crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size()));
  if (got != want) return std::nullopt;
  try {
    return json::parse(payload);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

AppendLog::AppendLog(fs::path path) : path_(std::move(path)) {
  std::size_t valid = 0;
  if (fs::exists(path_)) {
    const auto bytes = read_file(path_);
    const std::string text(bytes.begin(), bytes.end());
    std::size_t pos = 0;
    while (pos < text.size()) {
      const auto nl = text.find('\n', pos);
      const bool complete = nl != std::string::npos;
      const std::string line = text.substr(pos, complete ? nl - pos : std::string::npos);
      const std::size_t next = complete ? nl + 1 : text.size();
      auto rec = complete ? decode_log_line(line) : std::nullopt;
      if (!rec) {
        if (next < text.size())
          throw ConfigError("corrupt record log " + path_.string() + " at byte " + std::to_string(pos));
        ++dropped_tail_;
        break;
      }
      loaded_.push_back(std::move(*rec));
      valid = next;
      pos = next;
    }
  }
  open_for_append();
  if (dropped_tail_) {
    spdlog::warn("{}: dropping a torn final record", path_.string());
    if (::ftruncate(fd_, static_cast<off_t>(valid)) != 0) sys_fail("truncate", path_);
    ::fsync(fd_);
  }
}

AppendLog::~AppendLog() {
  if (fd_ >= 0) ::close(fd_);
}

void AppendLog::open_for_append() {
  if (fd_ >= 0) ::close(fd_);
  const bool fresh = !fs::exists(path_);
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) sys_fail("open", path_);
  if (fresh) fsync_dir(path_.parent_path());
}

void AppendLog::append(const json& j) {
  write_all(fd_, encode_log_line(j) + "\n", path_);
  if (::fsync(fd_) != 0) sys_fail("fsync", path_);
}

void AppendLog::rewrite(const std::vector<json>& records) {
  const fs::path tmp = path_.string() + ".compact";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) sys_fail("open", tmp);
  std::string all;
  for (const auto& r : records) all += encode_log_line(r) + "\n";
  write_all(fd, all, tmp);
  ::fsync(fd);
  ::close(fd);
  fs::rename(tmp, path_);
  fsync_dir(path_.parent_path());
  open_for_append();
}

json EvalSession::to_json() const {
  return {{"session_id", session_id},
          {"evaluator_id", evaluator_id},
          {"seed", seed},
          {"item_order", item_order},
          {"created_ms", created_ms}};
}

EvalSession EvalSession::from_json(const json& j) {
  EvalSession s;
  s.session_id = j.at("session_id").get<std::string>();
  s.evaluator_id = j.at("evaluator_id").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.item_order = j.at("item_order").get<std::vector<std::string>>();
  s.created_ms = j.at("created_ms").get<std::int64_t>();
  return s;
}

json RatingRecord::to_json() const {
  return {{"session_id", session_id}, {"evaluator_id", evaluator_id}, {"item_id", item_id},
          {"blind_id", blind_id},     {"rating", rating},             {"timestamp_ms", timestamp_ms}};
}

RatingRecord RatingRecord::from_json(const json& j) {
  RatingRecord r;
  r.session_id = j.at("session_id").get<std::string>();
  r.evaluator_id = j.at("evaluator_id").get<std::string>();
  r.item_id = j.at("item_id").get<std::string>();
  r.blind_id = j.at("blind_id").get<std::string>();
  r.rating = j.at("rating").get<int>();
  r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  return r;
}

RatingStore::RatingStore(const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path secret_path = dir / "secret";
  if (fs::exists(secret_path)) {
    const auto b = read_file(secret_path);
    secret_.assign(b.begin(), b.end());
    while (!secret_.empty() && (secret_.back() == '\n' || secret_.back() == '\r')) secret_.pop_back();
  }
  if (secret_.empty()) {
    secret_ = random_hex(32);
    write_file_atomic(secret_path, secret_ + "\n");
  }
  sessions_log_ = std::make_unique<AppendLog>(dir / "sessions.log");
  ratings_log_ = std::make_unique<AppendLog>(dir / "ratings.log");
  for (const auto& j : sessions_log_->loaded()) {
    auto s = EvalSession::from_json(j);
    if (sessions_.emplace(s.session_id, s).second) session_order_.push_back(s.session_id);
  }
  for (const auto& j : ratings_log_->loaded()) {
    auto r = RatingRecord::from_json(j);
    Key k{r.session_id, r.item_id, r.blind_id};
    if (ratings_.emplace(k, r).second) rating_order_.push_back(k);
  }
  spdlog::info("rating store {}: {} sessions, {} ratings", dir.string(), sessions_.size(), ratings_.size());
}

void RatingStore::add_session(const EvalSession& s) {
  std::unique_lock lock(mu_);
  if (sessions_.count(s.session_id)) throw ServiceError(409, "session id already exists");
  sessions_log_->append(s.to_json());
  sessions_.emplace(s.session_id, s);
  session_order_.push_back(s.session_id);
}

std::optional<EvalSession> RatingStore::session(const std::string& id) const {
  std::shared_lock lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

std::vector<EvalSession> RatingStore::sessions() const {
  std::shared_lock lock(mu_);
  std::vector<EvalSession> out;
  for (const auto& id : session_order_) out.push_back(sessions_.at(id));
  return out;
}

SubmitStatus RatingStore::add_rating(const RatingRecord& r) {
  std::unique_lock lock(mu_);
  Key k{r.session_id, r.item_id, r.blind_id};
  if (const auto it = ratings_.find(k); it != ratings_.end()) {
    if (it->second.rating == r.rating) return SubmitStatus::duplicate;
    throw ServiceError(409, "candidate already rated " + std::to_string(it->second.rating) + " in this session");
  }
  ratings_log_->append(r.to_json());
  ratings_.emplace(k, r);
  rating_order_.push_back(k);
  return SubmitStatus::stored;
}

std::optional<int> RatingStore::rating(const std::string& session, const std::string& item, const std::string& blind) const {
  std::shared_lock lock(mu_);
  const auto it = ratings_.find(Key{session, item, blind});
  if (it == ratings_.end()) return std::nullopt;
  return it->second.rating;
}

std::vector<RatingRecord> RatingStore::ratings() const {
  std::shared_lock lock(mu_);
  std::vector<RatingRecord> out;
  out.reserve(rating_order_.size());
  for (const auto& k : rating_order_) out.push_back(ratings_.at(k));
  return out;
}

void RatingStore::compact() {
  std::unique_lock lock(mu_);
  std::vector<json> s, r;
  for (const auto& id : session_order_) s.push_back(sessions_.at(id).to_json());
  for (const auto& k : rating_order_) r.push_back(ratings_.at(k).to_json());
  sessions_log_->rewrite(s);
  ratings_log_->rewrite(r);
}

int round_half_up_tenths(long long sum, long long count) {
  if (count <= 0) throw std::invalid_argument("round_half_up_tenths: count must be positive");
  if (sum < 0) throw std::invalid_argument("round_half_up_tenths: negative sum");
  return static_cast<int>((20 * sum + count) / (2 * count));
}

std::string format_tenths(int tenths) { return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10); }

std::string blind_token(const std::string& secret, const std::string& session_id, const std::string& item_id,
                        const std::string& model) {
  const std::string msg = "blind\x1f" + session_id + "\x1f" + item_id + "\x1f" + model;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  HMAC(EVP_sha256(), secret.data(), static_cast<int>(secret.size()), reinterpret_cast<const unsigned char*>(msg.data()),
       msg.size(), md, &len);
  return "c" + hex(md, 8);
}

}  // namespace galaxyedit

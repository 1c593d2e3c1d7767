#include <httplib.h>

#include <cstdlib>

#include "galaxyedit/model_clients.hpp"

namespace galaxyedit {

HttpTransport::HttpTransport(ClientConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto scheme_end = cfg_.endpoint.find("://");
  const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
  base_ = cfg_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);
}

json HttpTransport::call(const json& request) {
  httplib::Client cli(base_);
  const auto timeout = std::chrono::milliseconds(cfg_.timeout_ms);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!cfg_.auth_token_ref.empty()) {
    const char* token = std::getenv(cfg_.auth_token_ref.c_str());
    if (!token) throw ClientError("auth token variable " + cfg_.auth_token_ref + " is not set");
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  auto res = cli.Post(path_, headers, request.dump(), "application/json");
  if (!res) throw TransportError(cfg_.endpoint + ": " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw TransportError(cfg_.endpoint + ": HTTP " + std::to_string(res->status));
  if (res->status != 200) throw ClientError(cfg_.endpoint + ": HTTP " + std::to_string(res->status) + " " + res->body);
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw ClientError(cfg_.endpoint + ": malformed JSON response: " + e.what());
  }
}

}  // namespace galaxyedit
